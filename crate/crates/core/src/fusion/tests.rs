use std::collections::BTreeMap;

use super::*;
use crate::freq::{crop_bounds, SplitConfig};
use crate::nn::{grad_check, GradCheckOptions, Graph};
use crate::volume::{Mask, Volume};

/// Blob image with a bright disk and matching mask.
pub(crate) fn disk_sample(n: usize, cx: f64, cy: f64, r: f64, combo: &[&str], theta: f64) -> ModalitySample {
    let shape = vec![n, n];
    let inside = |i: &[usize]| {
        let (y, x) = (i[0] as f64 + 0.5, i[1] as f64 + 0.5);
        (x - cx).powi(2) + (y - cy).powi(2) <= r * r
    };
    let target = Volume::from_fn(shape.clone(), |i| {
        0.2 + 0.6 * inside(i) as u8 as f64 + 0.05 * ((i[0] * 7 + i[1] * 3) % 5) as f64
    })
    .unwrap();
    let mask = Mask::from_fn(shape.clone(), |i| inside(i)).unwrap();
    let mut donors = BTreeMap::new();
    for (k, name) in ["b", "c", "d"].iter().enumerate() {
        let v = Volume::from_fn(shape.clone(), |i| ((i[0] + k) * (i[1] + 2 * k + 1)) as f64).unwrap();
        donors.insert(name.to_string(), v);
    }
    let combo: Vec<String> = combo.iter().map(|s| s.to_string()).collect();
    ModalitySample::new("s", "a", &target, mask, &donors, &combo, SplitConfig::new(theta).unwrap())
        .unwrap()
}

fn tiny_arch(kind: ModelKind, theta: f64) -> ArchConfig {
    ArchConfig {
        kind,
        theta,
        backbone: BackboneConfig {
            dims: 2,
            base_channels: 2,
            depth: 2,
            leaky_slope: 0.01,
            instance_norm: true,
        },
        head: HeadConfig {
            hidden_channels: 2,
            dropout: 0.1,
        },
    }
}

#[test]
fn prior_list_order_and_shapes() {
    let s = disk_sample(20, 6.0, 6.0, 3.0, &["a", "c", "b"], 0.2);
    let names: Vec<&str> = s.low_priors.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["a", "c", "b"]);
    assert!(s.low_priors.iter().all(|(_, v)| v.shape() == [4, 4]));
    let alone = disk_sample(20, 6.0, 6.0, 3.0, &["a"], 0.2);
    assert_eq!(alone.p(), 1);
}

#[test]
fn missing_donor_is_an_error() {
    let target = Volume::from_fn(vec![10, 10], |i| i[0] as f64).unwrap();
    let mask = Mask::empty(vec![10, 10]).unwrap();
    let err = ModalitySample::new(
        "s",
        "a",
        &target,
        mask,
        &BTreeMap::new(),
        &["a".to_string(), "z".to_string()],
        SplitConfig::new(0.2).unwrap(),
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::MissingDonor(m) if m == "z"));
}

#[test]
fn donor_of_other_shape_is_resized() {
    let target = Volume::from_fn(vec![20, 20], |i| (i[0] + i[1]) as f64).unwrap();
    let mut donors = BTreeMap::new();
    donors.insert("b".to_string(), Volume::from_fn(vec![13, 27], |i| (i[0] * i[1]) as f64).unwrap());
    let split = SplitConfig::new(0.2).unwrap();
    let list = build_prior_list("a", &target, &donors, &["a".into(), "b".into()], split).unwrap();
    assert_eq!(list[0].1.shape(), list[1].1.shape());
}

#[test]
fn parameter_count_is_independent_of_prior_count() {
    let model = Model::new(tiny_arch(ModelKind::Proposed, 0.25), 3).unwrap();
    let count = model.parameter_count();
    for combo in [vec!["a"], vec!["a", "b"], vec!["a", "b", "c"], vec!["a", "b", "c", "d"]] {
        let s = disk_sample(16, 5.0, 5.0, 2.5, &combo, 0.25);
        let maps = model.forward(&s).unwrap();
        assert_eq!(maps.len(), combo.len());
        assert_eq!(model.parameter_count(), count);
    }
    // baseline shares the backbone and head but has no shared layer
    let base = Model::new(tiny_arch(ModelKind::Baseline, 0.25), 3).unwrap();
    assert_eq!(
        base.parameter_count_with_prefix("backbone."),
        model.parameter_count_with_prefix("backbone.")
    );
    assert_eq!(
        model.parameter_count() - base.parameter_count(),
        model.parameter_count_with_prefix("shared.")
    );
}

#[test]
fn fused_maps_agree_outside_the_crop() {
    let theta = 0.25;
    let model = Model::new(tiny_arch(ModelKind::Proposed, theta), 5).unwrap();
    let s = disk_sample(16, 5.0, 5.0, 2.5, &["a", "b", "c"], theta);
    let prepared = model.prepare(&s).unwrap();
    let mut g = Graph::eval();
    let out = model.forward_graph(&mut g, &prepared).unwrap();
    let bounds = crop_bounds(&[16, 16], theta).unwrap();
    let inside = |flat: usize| {
        let (y, x) = ((flat % 256) / 16, flat % 16);
        bounds[0].contains(&y) && bounds[1].contains(&x)
    };
    let first = g.value(out.fused[0]).data().to_vec();
    for f in &out.fused[1..] {
        let other = g.value(*f).data();
        for (k, (a, b)) in first.iter().zip(other).enumerate() {
            if !inside(k) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
    // predictions differ only inside the crop (the head is pointwise)
    let p0 = g.value(out.predictions[0]).data();
    let p1 = g.value(out.predictions[1]).data();
    for k in 0..256 {
        if !inside(k) {
            assert_eq!(p0[k].to_bits(), p1[k].to_bits());
        }
    }
    assert!((0..256).filter(|&k| inside(k)).any(|k| p0[k] != p1[k]));
}

#[test]
fn single_prior_and_identical_heads_predict_like_one_head() {
    let maps = vec![vec![0.2, 0.7, 0.5, 0.9]];
    assert_eq!(predict(vec![4], &maps).unwrap().data(), &[0, 1, 0, 1]);
    let same = vec![maps[0].clone(), maps[0].clone(), maps[0].clone()];
    assert_eq!(predict(vec![4], &same).unwrap(), predict(vec![4], &maps).unwrap());
    let mixed = vec![vec![0.4], vec![0.8]];
    assert_eq!(predict(vec![1], &mixed).unwrap().data(), &[1]);
}

#[test]
fn loss_sums_per_head_dice() {
    let model = Model::new(tiny_arch(ModelKind::Proposed, 0.25), 8).unwrap();
    let s = disk_sample(16, 5.0, 5.0, 2.5, &["a", "b"], 0.25);
    let prepared = model.prepare(&s).unwrap();
    let mut g = Graph::eval();
    let out = model.forward_graph(&mut g, &prepared).unwrap();
    let total = model.loss(&mut g, &out, &prepared.target).unwrap();
    let expected: f64 = out
        .predictions
        .iter()
        .map(|&p| {
            let v = g.value(p).data();
            let inter: f64 = v.iter().zip(&prepared.target).map(|(a, b)| a * b).sum();
            let sum: f64 = v.iter().sum::<f64>() + prepared.target.iter().sum::<f64>();
            1.0 - (2.0 * inter + 1.0) / (sum + 1.0)
        })
        .sum();
    assert!((g.scalar(total) - expected).abs() < 1e-12);
}

#[test]
fn identical_predictions_double_the_loss() {
    let target = vec![1.0, 0.0, 1.0, 1.0];
    let mut g = Graph::eval();
    let p = g.input(crate::nn::Tensor::new(vec![1, 4], vec![0.9, 0.2, 0.6, 0.7]).unwrap());
    let one = g.dice_loss(p, &target, 1.0).unwrap();
    let two = g.dice_loss(p, &target, 1.0).unwrap();
    let both = g.sum(&[one, two]).unwrap();
    assert_eq!(g.scalar(both), 2.0 * g.scalar(one));
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let theta = 0.25;
    let model = Model::new(tiny_arch(ModelKind::Proposed, theta), 11).unwrap();
    let s = disk_sample(8, 3.0, 3.0, 1.5, &["a", "b"], theta);
    let prepared = model.prepare(&s).unwrap();
    let report = grad_check(
        model.params(),
        |g, params| {
            let m = Model::from_params(model.arch().clone(), params.clone())?;
            let out = m.forward_graph(g, &prepared)?;
            m.loss(g, &out, &prepared.target)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
    assert!(report.kinks * 10 <= report.checked, "{report:?}");
}

#[test]
fn shared_layer_receives_gradient() {
    let model = Model::new(tiny_arch(ModelKind::Proposed, 0.25), 2).unwrap();
    let s = disk_sample(16, 5.0, 5.0, 2.5, &["a", "b"], 0.25);
    let prepared = model.prepare(&s).unwrap();
    let mut g = Graph::new(crate::nn::DropoutMode::Sample(1));
    let out = model.forward_graph(&mut g, &prepared).unwrap();
    let loss = model.loss(&mut g, &out, &prepared.target).unwrap();
    let grads = g.param_grads(&g.backward(loss), model.params());
    let shared: f64 = model
        .params()
        .iter()
        .zip(&grads)
        .filter(|(e, _)| e.name.starts_with("shared."))
        .flat_map(|(_, g)| g.iter().map(|v| v.abs()))
        .sum();
    assert!(shared > 0.0);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let arch = tiny_arch(ModelKind::Proposed, 0.25);
    let train_set = vec![
        disk_sample(16, 5.0, 5.0, 2.5, &["a", "b"], 0.25),
        disk_sample(16, 11.0, 10.0, 3.0, &["a", "b"], 0.25),
    ];
    let cfg = TrainConfig {
        epochs: 3,
        seed: 17,
        ..TrainConfig::default()
    };
    let a = train(&arch, &train_set, &train_set[..1], &cfg).unwrap();
    let b = train(&arch, &train_set, &train_set[..1], &cfg).unwrap();
    let ca = Checkpoint::new(a.model.clone(), a.seed, a.steps, a.best_epoch);
    let cb = Checkpoint::new(b.model, b.seed, b.steps, b.best_epoch);
    assert_eq!(ca.to_bytes().unwrap(), cb.to_bytes().unwrap());
    assert_eq!(a.steps, 6);
    assert_eq!(a.log.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ca.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.descriptor, ca.descriptor);
    for (x, y) in loaded.model.params().iter().zip(a.model.params().iter()) {
        for (u, v) in x.value.iter().zip(&y.value) {
            assert_eq!(*u, *v as f32 as f64);
        }
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let arch = tiny_arch(ModelKind::Baseline, 0.25);
    assert!(matches!(
        train(&arch, &[], &[], &TrainConfig::default()),
        Err(crate::Error::EmptyDataset)
    ));
}

