use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use super::{sum_f64, Real};
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: usize,
    index: usize,
}

/// A differentiable layer, the unit [`Tape::forward_layer`] records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind<T> {
    /// inputs `[x]`, params `[weight, bias]`.
    Conv2d { stride: usize },
    /// inputs `[x]`.
    LeakyRelu { slope: T },
    /// inputs `[x]`.
    NearestUpsample2,
    /// inputs `[a, b]`, concatenated along channels.
    Concat,
    /// inputs `[x]`.
    Sigmoid,
    /// inputs `[a, b]`.
    Add,
}

impl<T> LayerKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::LeakyRelu { .. } => "leaky_relu",
            LayerKind::NearestUpsample2 => "nearest_upsample",
            LayerKind::Concat => "concat",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Add => "add",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Upsample2 {
        x: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Sigmoid {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    /// `mean |x - target|`
    L1 {
        x: usize,
        target: Tensor<T>,
    },
    /// `mean (x - target)²`
    Mse {
        x: usize,
        target: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of every operation in a forward pass. Nodes are stored in
/// recording order; [`Tape::backward`] visits them in exact reverse.
#[derive(Debug)]
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: usize,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` does not influence the loss or does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears recorded nodes; existing [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(v.index)
    }

    /// Registers a leaf. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Records one layer; shape errors name the layer index and kind.
    pub fn forward_layer(
        &mut self,
        index: usize,
        kind: LayerKind<T>,
        inputs: &[Var],
        params: &[Var],
    ) -> Result<Var> {
        let wrap = |e: Error| match e {
            Error::Shape(message) => Error::Layer {
                index,
                kind: kind.name(),
                message,
            },
            other => other,
        };
        let arity = match kind {
            LayerKind::Conv2d { .. } => (1, 2),
            LayerKind::Concat | LayerKind::Add => (2, 0),
            _ => (1, 0),
        };
        if (inputs.len(), params.len()) != arity {
            return Err(Error::Layer {
                index,
                kind: kind.name(),
                message: format!(
                    "expected {} inputs / {} params, got {} / {}",
                    arity.0,
                    arity.1,
                    inputs.len(),
                    params.len()
                ),
            });
        }
        match kind {
            LayerKind::Conv2d { stride } => self.conv2d(inputs[0], params[0], params[1], stride),
            LayerKind::LeakyRelu { slope } => self.leaky_relu(inputs[0], slope),
            LayerKind::NearestUpsample2 => self.upsample2(inputs[0]),
            LayerKind::Concat => self.concat(inputs[0], inputs[1]),
            LayerKind::Sigmoid => self.sigmoid(inputs[0]),
            LayerKind::Add => self.add(inputs[0], inputs[1]),
        }
        .map_err(wrap)
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let geom = ConvGeom::new(
            self.nodes[xi].value.shape(),
            self.nodes[wi].value.shape(),
            self.nodes[bi].value.shape(),
            stride,
        )
        .map_err(shape_err)?;
        let out = conv::forward(
            &geom,
            self.nodes[xi].value.data(),
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(&geom.out_shape(), out)?;
        let rg = self.rg(xi) || self.rg(wi) || self.rg(bi);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: xi,
                weight: wi,
                bias: bi,
                geom,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi]
            .value
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(xi);
        Ok(self.push(value, Op::LeakyRelu { x: xi, slope }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi]
            .value
            .map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Sigmoid { x: xi }, rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        let &[c, h, w] = src.shape() else {
            return Err(shape_err(format!(
                "upsample expects [C, H, W], got {:?}",
                src.shape()
            )));
        };
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src_row = &src.data()[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                for (x2, d) in dst.iter_mut().enumerate() {
                    *d = src_row[x2 / 2];
                }
            }
        }
        let value = Tensor::new(&[c, h2, w2], out)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Upsample2 { x: xi }, rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(shape_err(format!(
                "concat spatial dims differ: {:?} vs {:?}",
                sa, sb
            )));
        }
        let shape = [sa[0] + sb[0], sa[1], sa[2]];
        let mut data = Vec::with_capacity(shape.iter().product());
        data.extend_from_slice(self.nodes[ai].value.data());
        data.extend_from_slice(self.nodes[bi].value.data());
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, Op::Concat { a: ai, b: bi }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, Op::Add { a: ai, b: bi }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.map(|v| v * factor);
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Scale { x: xi, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = Tensor::scalar(T::from_f64(sum_f64(self.nodes[xi].value.data())));
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Sum { x: xi }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        let value = Tensor::scalar(T::from_f64(sum_f64(v.data()) / v.len() as f64));
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Mean { x: xi }, rg))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        if v.shape() != target.shape() {
            return Err(shape_err(format!(
                "l1: {:?} vs target {:?}",
                v.shape(),
                target.shape()
            )));
        }
        let mut acc = 0.0f64;
        for (&a, &b) in v.data().iter().zip(target.data()) {
            acc += (a - b).abs().as_f64();
        }
        let value = Tensor::scalar(T::from_f64(acc / v.len() as f64));
        let rg = self.rg(xi);
        Ok(self.push(
            value,
            Op::L1 {
                x: xi,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        if v.shape() != target.shape() {
            return Err(shape_err(format!(
                "mse: {:?} vs target {:?}",
                v.shape(),
                target.shape()
            )));
        }
        let mut acc = 0.0f64;
        for (&a, &b) in v.data().iter().zip(target.data()) {
            let d = (a - b).as_f64();
            acc += d * d;
        }
        let value = Tensor::scalar(T::from_f64(acc / v.len() as f64));
        let rg = self.rg(xi);
        Ok(self.push(
            value,
            Op::Mse {
                x: xi,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. The tape is left intact, so several
    /// losses recorded on it can be differentiated independently.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.idx(loss)?;
        let lv = &self.nodes[li].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[li].requires_grad {
            return Ok(Gradients {
                tape: self.id,
                grads,
            });
        }
        grads[li] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    geom,
                } => {
                    if self.rg(*x) {
                        let gx =
                            conv::backward_input(geom, self.nodes[*weight].value.data(), g.data());
                        accumulate(&mut grads, *x, self.nodes[*x].value.shape(), gx);
                    }
                    if self.rg(*weight) || self.rg(*bias) {
                        let (gw, gb) =
                            conv::backward_params(geom, self.nodes[*x].value.data(), g.data());
                        if self.rg(*weight) {
                            accumulate(&mut grads, *weight, self.nodes[*weight].value.shape(), gw);
                        }
                        if self.rg(*bias) {
                            accumulate(&mut grads, *bias, self.nodes[*bias].value.shape(), gb);
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.nodes[*x].value.data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { gv * *slope })
                        .collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), gx);
                }
                Op::Sigmoid { x } => {
                    let yv = node.value.data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(yv)
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), gx);
                }
                Op::Upsample2 { x } => {
                    let shape = self.nodes[*x].value.shape();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let w2 = 2 * w;
                    let mut gx = vec![T::zero(); c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let src = &g.data()[(ch * 2 * h + y) * w2..(ch * 2 * h + y + 1) * w2];
                            let dst = &mut gx[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                            for (x2, &v) in src.iter().enumerate() {
                                dst[x2 / 2] = dst[x2 / 2] + v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, shape, gx);
                }
                Op::Concat { a, b } => {
                    let na = self.nodes[*a].value.len();
                    if self.rg(*a) {
                        accumulate(
                            &mut grads,
                            *a,
                            self.nodes[*a].value.shape(),
                            g.data()[..na].to_vec(),
                        );
                    }
                    if self.rg(*b) {
                        accumulate(
                            &mut grads,
                            *b,
                            self.nodes[*b].value.shape(),
                            g.data()[na..].to_vec(),
                        );
                    }
                }
                Op::Add { a, b } => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                    }
                }
                Op::Scale { x, factor } => {
                    let gx = g.data().iter().map(|&v| v * *factor).collect();
                    accumulate(&mut grads, *x, g.shape(), gx);
                }
                Op::Sum { x } => {
                    let xv = &self.nodes[*x].value;
                    accumulate(&mut grads, *x, xv.shape(), vec![g.item(); xv.len()]);
                }
                Op::Mean { x } => {
                    let xv = &self.nodes[*x].value;
                    let v = g.item() / T::from_f64(xv.len() as f64);
                    accumulate(&mut grads, *x, xv.shape(), vec![v; xv.len()]);
                }
                Op::L1 { x, target } => {
                    let xv = &self.nodes[*x].value;
                    let k = g.item() / T::from_f64(xv.len() as f64);
                    let gx = xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| {
                            if a > b {
                                k
                            } else if a < b {
                                -k
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, xv.shape(), gx);
                }
                Op::Mse { x, target } => {
                    let xv = &self.nodes[*x].value;
                    let k = g.item() * T::from_f64(2.0 / xv.len() as f64);
                    let gx = xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| k * (a - b))
                        .collect();
                    accumulate(&mut grads, *x, xv.shape(), gx);
                }
            }
            // leaves keep their gradient; interior nodes are dropped
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        // a leaf that is the loss itself keeps its seed
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], i: usize, shape: &[usize], g: Vec<T>) {
    match &mut grads[i] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape, g).expect("gradient shape")),
    }
}
