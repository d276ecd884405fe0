use concealgs_core::autodiff::{adam_step, AdamState, LayerKind, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU-style kinks stay out of FD reach.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn eval<F>(inputs: &[Tensor<f64>], build: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

/// Analytic gradient of every input element against central differences.
fn check_gradients<F>(name: &str, inputs: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-4;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus, &build) - eval(&minus, &build)) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs();
            assert!(
                err < 1e-6 || err / a.abs().max(numeric.abs()) < 1e-3,
                "{name}: input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn mse_against(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let target = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    tape.mse_loss(y, &target).unwrap()
}

/// Direct convolution, zero padding `k / 2`.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Vec<f64> {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let ho = (h + 2 * (k / 2) - k) / stride + 1;
    let wo = (wd + 2 * (k / 2) - k) / stride + 1;
    let mut out = vec![0.0; co_n * ho * wo];
    for co in 0..co_n {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b.data()[co];
                for ci in 0..ci_n {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((co * ci_n + ci) * k + ky) * k + kx]
                                * x.data()[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv3x3_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[1, 8, 8], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4, 1, 3, 3], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.leaf(x.clone(), false),
        tape.leaf(w.clone(), false),
        tape.leaf(b.clone(), false),
    );
    let y = tape.conv2d(xv, wv, bv, 1).unwrap();
    let want = naive_conv(&x, &w, &b, 1);
    let diff = tape
        .value(y)
        .data()
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn conv_matches_naive_loops_f32_all_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, stride, (h, w)) in [
        (1, 1, (6, 5)),
        (3, 1, (7, 9)),
        (3, 2, (8, 8)),
        (3, 2, (7, 5)),
        (5, 2, (9, 6)),
    ] {
        let x = random_tensor(&mut rng, &[3, h, w], -1.0, 1.0);
        let wt = random_tensor(&mut rng, &[2, 3, k, k], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[2], -1.0, 1.0);
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(x.cast(), false);
        let wv = tape.leaf(wt.cast(), false);
        let bv = tape.leaf(b.cast(), false);
        let y = tape.conv2d(xv, wv, bv, stride).unwrap();
        let want = naive_conv(&x, &wt, &b, stride);
        assert_eq!(tape.value(y).len(), want.len());
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            assert!(
                (*a as f64 - b).abs() < 1e-5,
                "k={k} stride={stride}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn fd_conv2d_stride1() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        random_tensor(&mut rng, &[2, 5, 6], -1.0, 1.0),
        random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
        random_tensor(&mut rng, &[3], -0.5, 0.5),
    ];
    check_gradients("conv2d/1", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::Conv2d { stride: 1 }, &[v[0]], &[v[1], v[2]])
            .unwrap();
        mse_against(t, y, 10)
    });
}

#[test]
fn fd_conv2d_stride2() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![
        random_tensor(&mut rng, &[2, 7, 6], -1.0, 1.0),
        random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
        random_tensor(&mut rng, &[3], -0.5, 0.5),
    ];
    check_gradients("conv2d/2", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::Conv2d { stride: 2 }, &[v[0]], &[v[1], v[2]])
            .unwrap();
        mse_against(t, y, 11)
    });
}

#[test]
fn fd_leaky_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![away_from_zero(&mut rng, &[2, 4, 4])];
    check_gradients("leaky_relu", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::LeakyRelu { slope: 0.2 }, &[v[0]], &[])
            .unwrap();
        mse_against(t, y, 12)
    });
}

#[test]
fn fd_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0)];
    check_gradients("upsample", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::NearestUpsample2, &[v[0]], &[])
            .unwrap();
        mse_against(t, y, 13)
    });
}

#[test]
fn fd_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut rng, &[1, 3, 3], -1.0, 1.0),
    ];
    check_gradients("concat", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::Concat, &[v[0], v[1]], &[])
            .unwrap();
        mse_against(t, y, 14)
    });
}

#[test]
fn fd_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![random_tensor(&mut rng, &[3, 4, 4], -3.0, 3.0)];
    check_gradients("sigmoid", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::Sigmoid, &[v[0]], &[])
            .unwrap();
        mse_against(t, y, 15)
    });
}

#[test]
fn fd_add() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = vec![
        random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0),
    ];
    check_gradients("add", inputs, |t, v| {
        let y = t
            .forward_layer(0, LayerKind::Add, &[v[0], v[1]], &[])
            .unwrap();
        mse_against(t, y, 16)
    });
}

#[test]
fn fd_reductions_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
    check_gradients("scale+sum", vec![x.clone()], |t, v| {
        let s = t.scale(v[0], 1.7).unwrap();
        let y = t.sigmoid(s).unwrap();
        t.sum(y).unwrap()
    });
    check_gradients("mean", vec![x.clone()], |t, v| {
        let y = t.sigmoid(v[0]).unwrap();
        t.mean(y).unwrap()
    });
    // target offset keeps every |x - target| well above the FD step
    let target = x.map(|v| v + if (v * 1e3).sin() > 0.0 { 0.3 } else { -0.3 });
    check_gradients("l1", vec![x.clone()], move |t, v| {
        t.l1_loss(v[0], &target).unwrap()
    });
}

#[test]
fn fd_sigmoid_linear_regression_4x4() {
    // mean((σ(Wx) − y)²) with a 4×4 W as a 1×1 convolution over 4 channels
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random_tensor(&mut rng, &[4, 4, 1, 1], -1.0, 1.0),
        random_tensor(&mut rng, &[4, 1, 1], -1.0, 1.0),
        Tensor::zeros(&[4]),
    ];
    let y = random_tensor(&mut rng, &[4, 1, 1], 0.0, 1.0);
    check_gradients("sigmoid(Wx)", inputs, move |t, v| {
        let z = t.conv2d(v[1], v[0], v[2], 1).unwrap();
        let s = t.sigmoid(z).unwrap();
        t.mse_loss(s, &y).unwrap()
    });
}

#[test]
fn fd_small_unet_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = vec![
        random_tensor(&mut rng, &[2, 4, 4], 0.0, 1.0),
        random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
        random_tensor(&mut rng, &[3], -0.1, 0.1),
        random_tensor(&mut rng, &[2, 5, 3, 3], -0.5, 0.5),
        random_tensor(&mut rng, &[2], -0.1, 0.1),
    ];
    check_gradients("unet", inputs, |t, v| {
        let e = t.conv2d(v[0], v[1], v[2], 2).unwrap();
        let e = t.sigmoid(e).unwrap();
        let u = t.upsample2(e).unwrap();
        let c = t.concat(u, v[0]).unwrap();
        let d = t.conv2d(c, v[3], v[4], 1).unwrap();
        let o = t.sigmoid(d).unwrap();
        mse_against(t, o, 17)
    });
}

fn two_loss_graph(seed: u64) -> (Tape<f64>, Var, Var, Var, Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let x = tape.leaf(random_tensor(&mut rng, &[2, 6, 6], 0.0, 1.0), false);
    let w = tape.leaf(random_tensor(&mut rng, &[2, 2, 3, 3], -0.5, 0.5), true);
    let b = tape.leaf(random_tensor(&mut rng, &[2], -0.1, 0.1), true);
    let y = tape.conv2d(x, w, b, 1).unwrap();
    let s = tape.sigmoid(y).unwrap();
    let t1 = random_tensor(&mut rng, &[2, 6, 6], 0.0, 1.0);
    let t2 = random_tensor(&mut rng, &[2, 6, 6], 0.0, 1.0);
    let l1 = tape.l1_loss(s, &t1).unwrap();
    let l2 = tape.mse_loss(s, &t2).unwrap();
    (tape, w, b, l1, l2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>()) {
        let (mut tape, w, b, l1, l2) = two_loss_graph(seed);
        let total = tape.add(l1, l2).unwrap();
        let g = tape.backward(total).unwrap();
        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();
        for v in [w, b] {
            for ((t, a), c) in g.get(v).unwrap().data().iter().zip(g1.get(v).unwrap().data()).zip(g2.get(v).unwrap().data()) {
                prop_assert!((t - (a + c)).abs() <= 1e-12 * (1.0 + t.abs()));
            }
        }
    }

    #[test]
    fn gradients_are_bit_identical_across_runs(seed in any::<u64>()) {
        let run = || {
            let (mut tape, w, b, l1, l2) = two_loss_graph(seed);
            let total = tape.add(l1, l2).unwrap();
            let g = tape.backward(total).unwrap();
            (g.get(w).unwrap().clone(), g.get(b).unwrap().clone())
        };
        let (a, b) = (run(), run());
        prop_assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = vec![Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
    let before = params.clone();
    let mut state = AdamState::default();
    adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state, 0.1).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.step(), 1);
}

#[test]
fn adam_first_step_closed_form() {
    let (lr, g, p0) = (0.01, 0.37, 1.5);
    let mut params = vec![Tensor::scalar(p0)];
    let mut state = AdamState::default();
    adam_step(&mut params, &[Tensor::scalar(g)], &mut state, lr).unwrap();
    // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
    let m = 0.1 * g;
    let v = 0.001 * g * g;
    let m_hat = m / (1.0 - 0.9);
    let v_hat = v / (1.0 - 0.999);
    let want = p0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((params[0].item() - want).abs() < 1e-10);
    assert!((params[0].item() - (p0 - lr * g / (g.abs() + 1e-8))).abs() < 1e-10);
}

#[test]
fn adam_constant_gradient_step_tends_to_lr() {
    let lr = 1e-3;
    let mut params = vec![Tensor::scalar(0.0f64)];
    let mut state = AdamState::default();
    let grad = [Tensor::scalar(-2.5)];
    let mut last = 0.0;
    for _ in 0..10_000 {
        let before = params[0].item();
        adam_step(&mut params, &grad, &mut state, lr).unwrap();
        last = params[0].item() - before;
    }
    assert!((last.abs() - lr).abs() < 0.01 * lr, "{last}");
    assert!(last > 0.0);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut params = vec![Tensor::<f32>::zeros(&[2, 2])];
    let mut state = AdamState::default();
    assert!(adam_step(&mut params, &[Tensor::zeros(&[4])], &mut state, 0.1).is_err());
    assert!(adam_step(&mut params, &[], &mut state, 0.1).is_err());
}
