use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Store holding an input tensor plus one conv layer.
fn conv_store(in_shape: &[usize], co: usize, k: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n: usize = in_shape.iter().product();
    store.add("x", in_shape.to_vec(), random(&mut rng, n));
    let mut wshape = vec![co, in_shape[0]];
    wshape.extend(std::iter::repeat(k).take(in_shape.len() - 1));
    let fan_in = in_shape[0] * k.pow(in_shape.len() as u32 - 1);
    store.add_he_uniform("w", wshape, fan_in, &mut rng);
    let b = random(&mut rng, co);
    store.add("b", vec![co], b);
    store
}

/// Smooth scalar readout: sigmoid followed by Dice against a fixed pattern.
fn weighted_sum(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let n = g.value(x).len();
    let s = g.sigmoid(x);
    let target: Vec<f64> = (0..n).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    g.dice_loss(s, &target, 1.0)
}

fn conv_graph(spec: ConvSpec) -> impl Fn(&mut Graph, &ParamStore) -> Result<NodeId> {
    move |g, p| {
        let x = g.param(p, ParamId(0));
        let w = g.param(p, ParamId(1));
        let b = g.param(p, ParamId(2));
        let y = g.conv(x, w, b, spec)?;
        weighted_sum(g, y)
    }
}

#[test]
fn conv_identity_kernel_passes_input_through() {
    let mut store = ParamStore::new();
    let x: Vec<f64> = (0..18).map(|v| v as f64 * 0.5).collect();
    store.add("w", vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
    store.add("b", vec![2], vec![0.0, 0.0]);
    let mut g = Graph::eval();
    let xi = g.input(Tensor::new(vec![2, 3, 3], x.clone()).unwrap());
    let w = g.param(&store, ParamId(0));
    let b = g.param(&store, ParamId(1));
    let y = g.conv(xi, w, b, ConvSpec::same(1)).unwrap();
    assert_eq!(g.value(y).data(), x.as_slice());
}

#[test]
fn conv_ones_kernel_on_constant_image() {
    let mut store = ParamStore::new();
    store.add("w", vec![1, 1, 3, 3], vec![1.0; 9]);
    store.add("b", vec![1], vec![0.0]);
    let mut g = Graph::eval();
    let xi = g.input(Tensor::new(vec![1, 6, 6], vec![1.0; 36]).unwrap());
    let w = g.param(&store, ParamId(0));
    let b = g.param(&store, ParamId(1));
    let y = g.conv(xi, w, b, ConvSpec::same(3)).unwrap();
    for r in 1..5 {
        for c in 1..5 {
            assert_eq!(g.value(y).data()[r * 6 + c], 9.0);
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let store = conv_store(&[2, 5, 5], 3, 3, 0);
    let mut g = Graph::eval();
    let x = g.input(Tensor::zeros(vec![3, 5, 5]));
    let w = g.param(&store, ParamId(1));
    let b = g.param(&store, ParamId(2));
    assert!(g.conv(x, w, b, ConvSpec::same(3)).is_err());
}

#[test]
fn conv_2d_gradients_match_finite_differences() {
    let store = conv_store(&[2, 8, 8], 3, 3, 1);
    let r = grad_check(&store, conv_graph(ConvSpec::same(3)), GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn strided_conv_gradients_match_finite_differences() {
    let store = conv_store(&[2, 7, 9], 2, 3, 2);
    let spec = ConvSpec {
        stride: 2,
        padding: 1,
    };
    let r = grad_check(&store, conv_graph(spec), GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn conv_3d_gradients_match_finite_differences() {
    let store = conv_store(&[2, 4, 5, 4], 2, 3, 3);
    let r = grad_check(&store, conv_graph(ConvSpec::same(3)), GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn pool_upsample_concat_activation_gradients() {
    let store = conv_store(&[2, 6, 6], 2, 3, 4);
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.param(p, ParamId(0));
        let w = g.param(p, ParamId(1));
        let b = g.param(p, ParamId(2));
        let y = g.conv(x, w, b, ConvSpec::same(3))?;
        let y = g.leaky_relu(y, 0.01);
        let pooled = g.max_pool(y)?;
        let up = g.upsample(pooled)?;
        let cat = g.concat(up, x)?;
        weighted_sum(g, cat)
    };
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn center_write_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    store.add("base", vec![2, 6, 6], random(&mut rng, 72));
    store.add("patch", vec![2, 2, 3], random(&mut rng, 12));
    let build = |g: &mut Graph, p: &ParamStore| {
        let base = g.param(p, ParamId(0));
        let patch = g.param(p, ParamId(1));
        let fused = g.center_write(base, patch, &[2..4, 1..4])?;
        weighted_sum(g, fused)
    };
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
    // base entries under the patch receive no gradient
    let mut g = Graph::eval();
    let root = build(&mut g, &store).unwrap();
    let grads = g.param_grads(&g.backward(root), &store);
    assert_eq!(grads[0][2 * 6 + 1], 0.0);
    assert_ne!(grads[0][0], 0.0);
}

#[test]
fn center_write_with_existing_values_is_identity() {
    let base: Vec<f64> = (0..32).map(|v| v as f64).collect();
    let mut g = Graph::eval();
    let b = g.input(Tensor::new(vec![2, 4, 4], base.clone()).unwrap());
    let patch: Vec<f64> = [5.0, 6.0, 9.0, 10.0, 21.0, 22.0, 25.0, 26.0].to_vec();
    let p = g.input(Tensor::new(vec![2, 2, 2], patch).unwrap());
    let fused = g.center_write(b, p, &[1..3, 1..3]).unwrap();
    assert_eq!(g.value(fused).data(), base.as_slice());
    let bad = g.input(Tensor::zeros(vec![2, 3, 2]));
    assert!(g.center_write(b, bad, &[1..3, 1..3]).is_err());
}

#[test]
fn dice_loss_values() {
    let target: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let n = target.len() as f64;
    let g_sum: f64 = target.iter().sum();
    let mut g = Graph::eval();
    let p = g.input(Tensor::new(vec![1, 4, 4], target.clone()).unwrap());
    let perfect = g.dice_loss(p, &target, 1.0).unwrap();
    assert!(g.scalar(perfect) <= 1.0 / (2.0 * n + 1.0));
    let inverse: Vec<f64> = target.iter().map(|t| 1.0 - t).collect();
    let q = g.input(Tensor::new(vec![1, 4, 4], inverse).unwrap());
    let disjoint = g.dice_loss(q, &target, 1.0).unwrap();
    // Σp + Σg = N exactly for complementary maps
    assert!((g.scalar(disjoint) - (1.0 - 1.0 / (n + 1.0))).abs() < 1e-12);
    assert!(g_sum > 0.0);
}

#[test]
fn dice_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    store.add("p", vec![1, 4, 4], (0..16).map(|_| rng.gen_range(0.05..0.95)).collect());
    let target: Vec<f64> = (0..16).map(|_| rng.gen_bool(0.4) as u8 as f64).collect();
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.param(p, ParamId(0));
        g.dice_loss(x, &target, 1.0)
    };
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.passes(1e-6), "{r:?}");
}

#[test]
fn dropout_requires_frozen_masks_for_grad_check() {
    let store = conv_store(&[1, 6, 6], 4, 3, 7);
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.param(p, ParamId(0));
        let w = g.param(p, ParamId(1));
        let b = g.param(p, ParamId(2));
        let y = g.conv(x, w, b, ConvSpec::same(3))?;
        let y = g.dropout(y, 0.3)?;
        weighted_sum(g, y)
    };
    let frozen = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(frozen.passes(TOL), "{frozen:?}");
    let resampled = grad_check(
        &store,
        build,
        GradCheckOptions {
            freeze_dropout: false,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(!resampled.passes(TOL), "{resampled:?}");
}

#[test]
fn dropout_rate_statistics_and_inference_identity() {
    let rate = 0.1;
    let n = 10_000;
    let mut g = Graph::new(DropoutMode::Sample(42));
    let x = g.input(Tensor::new(vec![1, n], vec![1.0; n]).unwrap());
    let y = g.dropout(x, rate).unwrap();
    let zeros = g.value(y).data().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
    let sigma = (rate * (1.0 - rate) / n as f64).sqrt();
    assert!((zeros - rate).abs() <= 3.0 * sigma, "zero fraction {zeros}");
    let mut e = Graph::eval();
    let xe = e.input(Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap());
    assert_eq!(e.dropout(xe, rate).unwrap(), xe);
}

#[test]
fn max_pool_routes_gradient_to_argmax_only() {
    let mut store = ParamStore::new();
    // unique maxima at known positions
    let x = vec![
        1.0, 2.0, 0.0, 0.5, //
        3.0, 0.0, 4.0, 0.1, //
        0.0, 0.0, 0.0, 0.0, //
        0.0, 9.0, 0.0, -1.0,
    ];
    store.add("x", vec![1, 4, 4], x);
    let mut g = Graph::eval();
    let xi = g.param(&store, ParamId(0));
    let pooled = g.max_pool(xi).unwrap();
    assert_eq!(g.value(pooled).data(), &[3.0, 4.0, 9.0, 0.0]);
    let s = g.sigmoid(pooled);
    let loss = g.dice_loss(s, &[1.0, 0.0, 1.0, 0.0], 1.0).unwrap();
    let grads = g.param_grads(&g.backward(loss), &store);
    let nonzero: Vec<usize> = (0..16).filter(|&i| grads[0][i] != 0.0).collect();
    // the last window is all zeros except -1; the first zero wins the tie
    assert_eq!(nonzero, vec![4, 6, 10, 13]);
}

#[test]
fn identity_graph_has_zero_error() {
    let mut store = ParamStore::new();
    store.add("p", vec![1, 3], vec![0.2, 0.7, 0.4]);
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.param(p, ParamId(0));
        g.dice_loss(x, &[1.0, 0.0, 1.0], 1.0)
    };
    // the loss is a rational function; central differences agree closely
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
    assert_eq!(r.checked, 3);
}

#[test]
fn two_layer_net_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    store.add_he_uniform("w1", vec![4, 1, 3, 3], 9, &mut rng);
    let b1 = random(&mut rng, 4);
    store.add("b1", vec![4], b1);
    store.add_he_uniform("w2", vec![1, 4, 3, 3], 36, &mut rng);
    store.add_zeros("b2", vec![1]);
    let input = Tensor::new(vec![1, 8, 8], random(&mut rng, 64)).unwrap();
    let target: Vec<f64> = (0..64).map(|i| ((i / 8 + i % 8) % 4 == 0) as u8 as f64).collect();
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.input(input.clone());
        let (w1, b1) = (g.param(p, ParamId(0)), g.param(p, ParamId(1)));
        let h = g.conv(x, w1, b1, ConvSpec::same(3))?;
        let h = g.leaky_relu(h, 0.01);
        let (w2, b2) = (g.param(p, ParamId(2)), g.param(p, ParamId(3)));
        let y = g.conv(h, w2, b2, ConvSpec::same(3))?;
        let y = g.sigmoid(y);
        g.dice_loss(y, &target, 1.0)
    };
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn sum_accumulates_into_shared_parameters() {
    let mut store = ParamStore::new();
    store.add("p", vec![1, 2], vec![0.3, 0.6]);
    let build = |g: &mut Graph, p: &ParamStore| {
        let a = g.param(p, ParamId(0));
        let b = g.param(p, ParamId(0));
        let la = g.dice_loss(a, &[1.0, 0.0], 1.0)?;
        let lb = g.dice_loss(b, &[0.0, 1.0], 1.0)?;
        g.sum(&[la, lb])
    };
    let r = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert!(r.passes(1e-6), "{r:?}");
}

#[test]
fn kink_inside_step_is_counted_not_compared() {
    let mut store = ParamStore::new();
    // 2e-7 straddles the kink at both probe steps, 4e-6 only at the first
    store.add("x", vec![1, 3], vec![2e-7, 4e-6, -0.7]);
    let build = |g: &mut Graph, p: &ParamStore| {
        let x = g.param(p, ParamId(0));
        let y = g.leaky_relu(x, 0.01);
        weighted_sum(g, y)
    };
    let report = grad_check(&store, build, GradCheckOptions::default()).unwrap();
    assert_eq!(report.kinks, 1);
    assert_eq!(report.checked, 3);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn instance_norm_standardizes_each_channel() {
    let mut g = Graph::eval();
    let x: Vec<f64> = (0..32).map(|i| (i * i % 7) as f64 + if i < 16 { 10.0 } else { -3.0 }).collect();
    let xi = g.input(Tensor::new(vec![2, 4, 4], x).unwrap());
    let gamma = g.input(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
    let beta = g.input(Tensor::zeros(vec![2]));
    let y = g.instance_norm(xi, gamma, beta, 0.0).unwrap();
    for chunk in g.value(y).data().chunks(16) {
        let mean = chunk.iter().sum::<f64>() / 16.0;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn instance_norm_gradients_match_finite_differences() {
    for shape in [vec![3, 5, 4], vec![2, 3, 2, 4]] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let n: usize = shape.iter().product();
        store.add("x", shape.clone(), random(&mut rng, n));
        let c = shape[0];
        let gamma = random(&mut rng, c).iter().map(|v| 1.0 + 0.5 * v).collect();
        store.add("gamma", vec![c], gamma);
        store.add("beta", vec![c], random(&mut rng, c));
        let build = |g: &mut Graph, p: &ParamStore| {
            let x = g.param(p, ParamId(0));
            let ga = g.param(p, ParamId(1));
            let be = g.param(p, ParamId(2));
            let y = g.instance_norm(x, ga, be, 1e-5)?;
            weighted_sum(g, y)
        };
        let report = grad_check(&store, build, GradCheckOptions::default()).unwrap();
        assert!(report.passes(TOL), "{shape:?}: {report:?}");
        assert_eq!(report.kinks, 0);
    }
}
