//! The universal decoder: a three-level U-Net mapping an RGB render to an
//! RGB image of the same size.
//!
//! Seven parameterized blocks, each one convolution plus its bias:
//!
//! | # | name       | input                         | conv          |
//! |---|------------|-------------------------------|---------------|
//! | 0 | enc1       | image                         | 3 → w, s1     |
//! | 1 | enc2       | enc1                          | w → 2w, s2    |
//! | 2 | enc3       | enc2                          | 2w → 4w, s2   |
//! | 3 | bottleneck | enc3                          | 4w → 4w, s1   |
//! | 4 | dec2       | up(bottleneck) ⧺ enc2         | 6w → 2w, s1   |
//! | 5 | dec1       | up(dec2) ⧺ enc1               | 3w → w, s1    |
//! | 6 | out        | dec1                          | 1×1, w → 3    |
//!
//! Hidden blocks use leaky ReLU (slope 0.2); the output block a sigmoid.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{LayerKind, Real, Tape, Tensor, Var};
use crate::linalg::sigmoid;
use crate::{Error, Image, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Norm below which a layer gradient counts as zero for the cosine.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: &'static str,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel + self.c_out
    }
}

/// Block layout for a given channel base.
pub fn architecture(width: usize) -> [BlockSpec; 7] {
    let b = |name, c_in, c_out, kernel, stride| BlockSpec {
        name,
        c_in,
        c_out,
        kernel,
        stride,
    };
    let w = width;
    [
        b("enc1", 3, w, 3, 1),
        b("enc2", w, 2 * w, 3, 2),
        b("enc3", 2 * w, 4 * w, 3, 2),
        b("bottleneck", 4 * w, 4 * w, 3, 1),
        b("dec2", 6 * w, 2 * w, 3, 1),
        b("dec1", 3 * w, w, 3, 1),
        b("out", w, 3, 1, 1),
    ]
}

/// Decoder parameters. `params` holds `[weight, bias]` per block, in block
/// order, which is also the layout of every gradient list.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet<T = f32> {
    width: usize,
    params: Vec<Tensor<T>>,
}

/// Per-layer cosine `s_i` between two gradient sets and the weights
/// `w_i = sigmoid(s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradStats {
    pub cosine: Vec<f64>,
    pub weight: Vec<f64>,
}

impl LayerGradStats {
    pub fn uniform(layers: usize) -> Self {
        Self {
            cosine: alloc::vec![0.0; layers],
            weight: alloc::vec![1.0; layers],
        }
    }

    pub fn mean_weight(&self) -> f64 {
        if self.weight.is_empty() {
            return 0.0;
        }
        self.weight.iter().sum::<f64>() / self.weight.len() as f64
    }
}

/// Result of one forward + backward pass through the decoder.
#[derive(Debug, Clone)]
pub struct DecoderPass<T> {
    pub loss: f64,
    pub output: Tensor<T>,
    /// Same layout as [`DecoderNet::params`].
    pub param_grads: Vec<Tensor<T>>,
    /// Gradient with respect to the input image, `[3, H, W]`.
    pub input_grad: Option<Tensor<T>>,
}

/// Deterministic He-uniform initialization (gain for the leaky slope),
/// zero biases.
pub fn build_decoder<T: Real>(seed: u64, width: usize) -> Result<DecoderNet<T>> {
    if width < 4 {
        return Err(Error::InvalidArgument(format!(
            "decoder width {width} below 4"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let mut params = Vec::with_capacity(14);
    for spec in architecture(width) {
        let shape = spec.weight_shape();
        let fan_in = (spec.c_in * spec.kernel * spec.kernel) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        params.push(Tensor::new(&shape, data)?);
        params.push(Tensor::zeros(&[spec.c_out]));
    }
    Ok(DecoderNet { width, params })
}

impl<T: Real> DecoderNet<T> {
    /// Rebuilds a network from stored parameter blocks, checking every shape.
    pub fn from_params(width: usize, params: Vec<Tensor<T>>) -> Result<Self> {
        if width < 4 {
            return Err(Error::InvalidArgument(format!(
                "decoder width {width} below 4"
            )));
        }
        let arch = architecture(width);
        if params.len() != 2 * arch.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter blocks, got {}",
                2 * arch.len(),
                params.len()
            )));
        }
        for (i, spec) in arch.iter().enumerate() {
            if params[2 * i].shape() != spec.weight_shape()
                || params[2 * i + 1].shape() != [spec.c_out]
            {
                return Err(Error::Shape(format!(
                    "block {} ({}) has wrong parameter shapes",
                    i, spec.name
                )));
            }
        }
        Ok(Self { width, params })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn blocks(&self) -> [BlockSpec; 7] {
        architecture(self.width)
    }

    pub fn num_layers(&self) -> usize {
        7
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> DecoderNet<U> {
        DecoderNet {
            width: self.width,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_input(shape: &[usize]) -> Result<()> {
        match shape {
            [3, h, w] if h % 4 == 0 && w % 4 == 0 && *h >= 4 && *w >= 4 => Ok(()),
            [3, h, w] => Err(Error::Shape(format!(
                "decoder input {w}x{h} is not divisible by 4"
            ))),
            _ => Err(Error::Shape(format!(
                "decoder input must be [3, H, W], got {shape:?}"
            ))),
        }
    }

    /// Records the forward pass on `tape`. Returns the output and the
    /// parameter leaves in [`Self::params`] order.
    pub fn record(&self, tape: &mut Tape<T>, input: Var, train: bool) -> Result<(Var, Vec<Var>)> {
        Self::check_input(tape.value(input).shape())?;
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|t| tape.leaf(t.clone(), train))
            .collect();
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut layer = 0;
        let mut op = |tape: &mut Tape<T>, kind, inputs: &[Var], params: &[Var]| {
            layer += 1;
            tape.forward_layer(layer - 1, kind, inputs, params)
        };
        let mut block = |tape: &mut Tape<T>, x: Var, i: usize, stride: usize| -> Result<Var> {
            let y = op(
                tape,
                LayerKind::Conv2d { stride },
                &[x],
                &[p[2 * i], p[2 * i + 1]],
            )?;
            if i == 6 {
                op(tape, LayerKind::Sigmoid, &[y], &[])
            } else {
                op(tape, LayerKind::LeakyRelu { slope }, &[y], &[])
            }
        };
        let e1 = block(tape, input, 0, 1)?;
        let e2 = block(tape, e1, 1, 2)?;
        let e3 = block(tape, e2, 2, 2)?;
        let bn = block(tape, e3, 3, 1)?;
        let u2 = tape.upsample2(bn)?;
        let c2 = tape.concat(u2, e2)?;
        let d2 = block(tape, c2, 4, 1)?;
        let u1 = tape.upsample2(d2)?;
        let c1 = tape.concat(u1, e1)?;
        let d1 = block(tape, c1, 5, 1)?;
        let out = block(tape, d1, 6, 1)?;
        Ok((out, p))
    }

    /// Forward pass on a planar `[3, H, W]` tensor.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false);
        let (out, _) = self.record(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    /// Mean absolute error `|F(input) − target|` with gradients for every
    /// parameter and, on request, for the input.
    pub fn l1_pass(
        &self,
        input: &Tensor<T>,
        target: &Tensor<T>,
        input_grad: bool,
    ) -> Result<DecoderPass<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), input_grad);
        let (out, params) = self.record(&mut tape, x, true)?;
        let loss = tape.l1_loss(out, target)?;
        let mut grads = tape.backward(loss)?;
        let param_grads = params
            .iter()
            .zip(&self.params)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let input_grad = if input_grad { grads.take(x) } else { None };
        Ok(DecoderPass {
            loss: tape.value(loss).item().as_f64(),
            output: tape.value(out).clone(),
            param_grads,
            input_grad,
        })
    }

    /// Splits a flat gradient list into one vector per block (weight then bias).
    pub fn layer_vectors(&self, grads: &[Tensor<T>]) -> Vec<Vec<T>> {
        grads
            .chunks(2)
            .map(|c| {
                let mut v = c[0].data().to_vec();
                v.extend_from_slice(c[1].data());
                v
            })
            .collect()
    }
}

impl DecoderNet<f32> {
    /// Decodes an interleaved image; dimensions must be divisible by 4.
    pub fn decode(&self, image: &Image) -> Result<Image> {
        let (w, h) = image.dims();
        let out = self.forward(&Tensor::new(&[3, h, w], image.to_planar())?)?;
        Image::from_planar(w, h, out.data())
    }
}

/// `s_i = ⟨g⁺_i, g⁻_i⟩ / (‖g⁺_i‖‖g⁻_i‖)` and `w_i = sigmoid(s_i)` per layer.
/// A layer where either norm is below [`ZERO_NORM`] gets `s_i = 0`.
pub fn per_layer_cosine<T: Real>(pos: &[Vec<T>], neg: &[Vec<T>]) -> Result<LayerGradStats> {
    if pos.len() != neg.len() {
        return Err(Error::Shape(format!(
            "{} positive layers vs {} negative layers",
            pos.len(),
            neg.len()
        )));
    }
    let mut cosine = Vec::with_capacity(pos.len());
    for (i, (a, b)) in pos.iter().zip(neg).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "layer {i}: {} vs {} gradient entries",
                a.len(),
                b.len()
            )));
        }
        let na = crate::autodiff::dot(a, a).sqrt();
        let nb = crate::autodiff::dot(b, b).sqrt();
        let s = if na < ZERO_NORM || nb < ZERO_NORM {
            0.0
        } else {
            (crate::autodiff::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
        };
        cosine.push(s);
    }
    let weight = cosine.iter().map(|&s| sigmoid(s)).collect();
    Ok(LayerGradStats { cosine, weight })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_near_100k() {
        let net = build_decoder::<f32>(0, 16).unwrap();
        let n = net.param_count();
        assert!((80_000..120_000).contains(&n), "{n}");
        assert_eq!(
            n,
            architecture(16)
                .iter()
                .map(BlockSpec::param_count)
                .sum::<usize>()
        );
    }

    #[test]
    fn narrow_width_rejected() {
        assert!(build_decoder::<f32>(0, 3).is_err());
    }

    #[test]
    fn indivisible_input_rejected() {
        let net = build_decoder::<f32>(0, 4).unwrap();
        assert!(net.forward(&Tensor::zeros(&[3, 10, 12])).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 8, 8])).is_err());
    }

    #[test]
    fn zero_norm_falls_back_to_half() {
        let stats =
            per_layer_cosine::<f64>(&[alloc::vec![0.0, 0.0]], &[alloc::vec![1.0, 2.0]]).unwrap();
        assert_eq!(stats.cosine, [0.0]);
        assert_eq!(stats.weight, [0.5]);
    }
}
