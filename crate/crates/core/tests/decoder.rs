use concealgs_core::autodiff::{adam_step, AdamState, Tensor};
use concealgs_core::decoder::{build_decoder, per_layer_cosine, DecoderNet};
use concealgs_core::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

/// Smooth colorful test pattern, closer to renders than white noise.
fn pattern(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: [f64; 6] = core::array::from_fn(|_| rng.gen_range(0.05..0.4));
    Image::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        [
            0.5 + 0.4 * (f[0] * x + f[1] * y).sin(),
            0.5 + 0.4 * (f[2] * x - f[3] * y).cos(),
            0.5 + 0.4 * (f[4] * (x + y) + f[5]).sin(),
        ]
    })
}

#[test]
fn same_seed_same_parameters() {
    let a = build_decoder::<f32>(9, 16).unwrap();
    let b = build_decoder::<f32>(9, 16).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        assert!(x
            .data()
            .iter()
            .zip(y.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_ne!(a, build_decoder::<f32>(10, 16).unwrap());
}

#[test]
fn output_shape_matches_input() {
    let net = build_decoder::<f32>(0, 16).unwrap();
    for size in [64, 32] {
        let out = net.decode(&random_image(1, size, size)).unwrap();
        assert_eq!(out.dims(), (size, size));
    }
    let out = net.decode(&random_image(1, 24, 16)).unwrap();
    assert_eq!(out.dims(), (24, 16));
}

#[test]
fn outputs_strictly_inside_unit_interval_and_pure() {
    let net = build_decoder::<f32>(3, 8).unwrap();
    let img = random_image(2, 32, 32);
    let a = net.decode(&img).unwrap();
    let b = net.decode(&img).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn indivisible_dims_fail() {
    let net = build_decoder::<f32>(0, 4).unwrap();
    assert!(net.decode(&random_image(1, 30, 32)).is_err());
}

#[test]
fn cosine_unit_facts() {
    let g = vec![vec![1.0f64, -2.0, 0.5], vec![0.3, 0.3]];
    let neg: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
    let same = per_layer_cosine(&g, &g).unwrap();
    let opposite = per_layer_cosine(&g, &neg).unwrap();
    let orth = per_layer_cosine(&[vec![1.0f64, 0.0]], &[vec![0.0, 3.0]]).unwrap();
    for i in 0..2 {
        assert!((same.cosine[i] - 1.0).abs() < 1e-12);
        assert!((same.weight[i] - 0.7310585786300049).abs() < 1e-12);
        assert!((opposite.weight[i] - 0.2689414213699951).abs() < 1e-12);
    }
    assert_eq!(orth.weight, [0.5]);
    assert!(per_layer_cosine(&g, &g[..1]).is_err());
}

fn layer_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #[test]
    fn cosine_scale_invariant(a in layer_vec(12), b in layer_vec(12), lambda in 1e-3f64..1e3) {
        let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
        let s1 = per_layer_cosine(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let s2 = per_layer_cosine(&[scaled], &[b]).unwrap();
        prop_assert!((s1.cosine[0] - s2.cosine[0]).abs() < 1e-6);
        prop_assert!((s1.weight[0] - s2.weight[0]).abs() < 1e-6);
    }

    #[test]
    fn weights_within_sigmoid_band(a in layer_vec(8), b in layer_vec(8)) {
        let s = per_layer_cosine(&[a], &[b]).unwrap();
        prop_assert!(s.cosine[0].abs() <= 1.0 + 1e-6);
        prop_assert!((s.weight[0] - 1.0 / (1.0 + (-s.cosine[0]).exp())).abs() < 1e-15);
        prop_assert!(s.weight[0] >= 0.2689414213699951 - 1e-12 && s.weight[0] <= 0.7310585786300049 + 1e-12);
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let net: DecoderNet<f64> = build_decoder(5, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::new(&[3, 8, 8], (0..192).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let target = Tensor::new(&[3, 8, 8], (0..192).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let pass = net.l1_pass(&x, &target, true).unwrap();
    let loss =
        |net: &DecoderNet<f64>, x: &Tensor<f64>| net.l1_pass(x, &target, false).unwrap().loss;
    let h = 1e-5;
    let check = |analytic: f64, numeric: f64, what: &str| {
        let err = (analytic - numeric).abs();
        assert!(
            err < 1e-6 || err / analytic.abs().max(numeric.abs()) < 1e-3,
            "{what}: {analytic} vs {numeric}"
        );
    };
    for block in 0..14 {
        let n = net.params()[block].len();
        for i in [0, n / 2, n - 1] {
            let mut plus = net.clone();
            plus.params_mut()[block].data_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[block].data_mut()[i] -= h;
            let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            check(
                pass.param_grads[block].data()[i],
                numeric,
                &format!("block {block} element {i}"),
            );
        }
    }
    let gx = pass.input_grad.unwrap();
    for i in [0, 17, 64, 100, 191] {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        check(
            gx.data()[i],
            (loss(&net, &plus) - loss(&net, &minus)) / (2.0 * h),
            &format!("input {i}"),
        );
    }
}

#[test]
fn identity_training_converges() {
    let mut net = build_decoder::<f32>(0, 16).unwrap();
    let images: Vec<Tensor<f32>> = (0..4)
        .map(|s| {
            let img = pattern(s, 32, 32);
            Tensor::new(&[3, 32, 32], img.to_planar()).unwrap()
        })
        .collect();
    let mut adam = AdamState::default();
    for step in 0..2000 {
        let x = &images[step % images.len()];
        let pass = net.l1_pass(x, x, false).unwrap();
        adam_step(net.params_mut(), &pass.param_grads, &mut adam, 1e-3).unwrap();
    }
    for x in &images {
        let out = net.forward(x).unwrap();
        let err: f64 = out
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / x.len() as f64;
        assert!(err < 0.02, "mean abs error {err}");
    }
}
