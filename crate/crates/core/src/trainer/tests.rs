use std::collections::HashSet;

use super::*;
use crate::data::{generate_synthetic_dataset, SyntheticFactorSpec};
use crate::losses::ROUTING_TABLE;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 6,
        stem_channels: 3,
        trunk_channels: vec![4],
        feature_dim: 8,
        hidden_dim: 5,
        decoder_channels: 3,
        target_size: 8,
        ..TrainConfig::default()
    }
}

fn tiny_data(n_domains: usize, n: usize) -> Vec<LabeledSample> {
    let spec = SyntheticFactorSpec {
        n_domains,
        n_per_domain: n,
        image_size: 16,
        ..SyntheticFactorSpec::default()
    };
    generate_synthetic_dataset(&spec).unwrap().0
}

fn tiny_batch(cfg: &TrainConfig, samples: &[LabeledSample], n: usize) -> (ModelParams, Batch) {
    let model = cfg.model_config(16, 3);
    let params = ModelParams::init(&model, 4).unwrap();
    let picked: Vec<&LabeledSample> = samples.iter().take(n).collect();
    let images: Vec<_> = picked.iter().map(|s| s.image.clone()).collect();
    let mut content = Matrix::zeros(n, 64);
    for (r, s) in picked.iter().enumerate() {
        let t = content_target(&s.image, &s.sample_id, &ContentMode::ShapeMask, 8).unwrap();
        content.row_mut(r).copy_from_slice(&t.map);
    }
    let batch = Batch {
        images: images_to_act(&images, 16).unwrap(),
        liveness: picked.iter().map(|s| s.liveness.index()).collect(),
        domains: picked.iter().map(|s| s.domain).collect(),
        content,
    };
    (params, batch)
}

fn group_norms(g: &ModelParams) -> BTreeMap<ParamGroup, f64> {
    let mut out = BTreeMap::new();
    for (grp, _, t) in g.tensors() {
        *out.entry(grp).or_insert(0.0) += t.data.iter().map(|v| v * v).sum::<f64>();
    }
    out
}

#[test]
fn ablation_masks() {
    let w = LossWeights::uniform(1.0);
    let on = |a: Ablation| a.mask(&w).active().collect::<Vec<_>>();
    assert_eq!(on(Ablation::Full).len(), 6);
    assert_eq!(on(Ablation::Baseline), vec![LossKind::Liveness]);
    assert_eq!(
        on(Ablation::ContentOnly),
        vec![LossKind::Content, LossKind::ContentConfusion, LossKind::Liveness]
    );
    assert_eq!(
        on(Ablation::DomainOnly),
        vec![
            LossKind::Domain,
            LossKind::DomainConfusion,
            LossKind::Liveness,
            LossKind::LivenessConfusion
        ]
    );
    let active = active_groups(&Ablation::Baseline.mask(&w));
    assert_eq!(
        active,
        [ParamGroup::Stem, ParamGroup::EncLiveness, ParamGroup::WLive].into()
    );
    for a in Ablation::ALL {
        assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
    }
}

#[test]
fn each_loss_writes_only_its_route() {
    let data = tiny_data(3, 4);
    let cfg = tiny_config();
    let (params, batch) = tiny_batch(&cfg, &data, 6);
    for r in &ROUTING_TABLE {
        let mut g = params.zeros_like();
        compute_objective(&params, &batch, &LossWeights::only(r.loss), Some(&mut g)).unwrap();
        for (grp, norm) in group_norms(&g) {
            if r.updates(grp) {
                assert!(norm > 0.0, "{:?} should reach {grp}", r.loss);
            } else {
                assert_eq!(norm, 0.0, "{:?} leaked into {grp}", r.loss);
            }
        }
    }
}

#[test]
fn baseline_leaves_auxiliary_gradients_zero() {
    let data = tiny_data(3, 4);
    let cfg = tiny_config();
    let (params, batch) = tiny_batch(&cfg, &data, 6);
    let mut g = params.zeros_like();
    let w = Ablation::Baseline.mask(&LossWeights::default());
    let b = compute_objective(&params, &batch, &w, Some(&mut g)).unwrap();
    for (grp, norm) in group_norms(&g) {
        if grp.is_auxiliary() {
            assert_eq!(norm, 0.0, "{grp}");
        }
    }
    for k in LossKind::ALL {
        assert_eq!(b.get(k) != 0.0, k == LossKind::Liveness, "{k:?}");
    }
}

#[test]
fn zero_weights_leave_params_unchanged() {
    let data = tiny_data(3, 4);
    let mut cfg = tiny_config();
    cfg.loss_weights = LossWeights::uniform(0.0);
    let (mut params, batch) = tiny_batch(&cfg, &data, 6);
    let before = params.clone();
    let mut st = OptimizerState::new();
    let b = train_step(&mut params, &mut st, &batch, &cfg).unwrap();
    assert_eq!(b.total, 0.0);
    assert_eq!(params, before);
}

#[test]
fn stem_gradient_is_sum_of_paths() {
    let data = tiny_data(3, 4);
    let cfg = tiny_config();
    let (params, batch) = tiny_batch(&cfg, &data, 6);
    let mut all = params.zeros_like();
    compute_objective(&params, &batch, &LossWeights::default(), Some(&mut all)).unwrap();
    let paths = [
        [LossKind::Liveness, LossKind::LivenessConfusion],
        [LossKind::Domain, LossKind::DomainConfusion],
        [LossKind::Content, LossKind::ContentConfusion],
    ];
    let mut sum = vec![0.0; all.stem.weight.len()];
    for ks in paths {
        let mut w = LossWeights::uniform(0.0);
        ks.iter().for_each(|&k| w.set(k, 1.0));
        let mut g = params.zeros_like();
        compute_objective(&params, &batch, &w, Some(&mut g)).unwrap();
        sum.iter_mut().zip(&g.stem.weight.data).for_each(|(s, v)| *s += v);
    }
    let diff: f64 = sum.iter().zip(&all.stem.weight.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = all.stem.weight.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / norm < 1e-5, "{}", diff / norm);
}

#[test]
fn spot_check_gradients_by_finite_differences() {
    let data = tiny_data(3, 4);
    let cfg = tiny_config();
    let (params, batch) = tiny_batch(&cfg, &data, 4);
    let h = 1e-5;
    for r in &ROUTING_TABLE {
        let w = LossWeights::only(r.loss);
        let mut g = params.zeros_like();
        compute_objective(&params, &batch, &w, Some(&mut g)).unwrap();
        let analytic: Vec<(ParamGroup, String, Vec<f64>)> =
            g.tensors().into_iter().map(|(grp, n, t)| (grp, n, t.data.clone())).collect();
        for (ti, (grp, name, grad)) in analytic.iter().enumerate() {
            if !r.updates(*grp) {
                continue;
            }
            for i in [0, grad.len() / 2] {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()[ti].2.data[i] += delta;
                    compute_objective(&p, &batch, &w, None).unwrap().total
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let a = grad[i];
                let err = (a - num).abs() / (a.abs() + num.abs()).max(1e-8);
                assert!(err < 1e-4 || (a - num).abs() < 1e-9, "{:?} {name}[{i}]: {a} vs {num}", r.loss);
            }
        }
    }
}

#[test]
fn steps_per_epoch_arithmetic() {
    let data = tiny_data(4, 200);
    let cfg = TrainConfig {
        epochs: 0,
        batch_size: 10,
        validation_fraction: 0.0,
        ..tiny_config()
    };
    let out = train(&data, &ProtocolSplit::new([0, 1, 2], 3), &cfg, None).unwrap();
    assert_eq!(out.report.n_train, 600);
    assert_eq!(out.report.steps_per_epoch, 60);
}

#[test]
fn batches_merge_singletons_and_mix_classes() {
    let order: Vec<usize> = (0..21).collect();
    let b = batches(&order, 10);
    assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![10, 11]);
    let b = batches(&order, 4);
    assert_eq!(b.len(), 5);
    assert_eq!(b.last().unwrap().len(), 5);

    let data = tiny_data(3, 20);
    let items: Vec<Prepared> = data
        .iter()
        .map(|s| Prepared {
            sample: s,
            domain: s.domain,
            content: vec![],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for balance in [false, true] {
        let order = epoch_order(&items, balance, &mut rng);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..items.len()).collect::<Vec<_>>());
        for b in batches(&order, 10) {
            let reals = b.iter().filter(|&&i| items[i].sample.liveness.is_real()).count();
            assert!(reals > 0 && reals < b.len());
        }
    }
}

#[test]
fn training_respects_protocol() {
    let data = tiny_data(4, 12);
    let split = ProtocolSplit::new([0, 2, 3], 1).with_held_out(["grid"]);
    let cfg = tiny_config();
    let out = train(&data, &split, &cfg, None).unwrap();
    let ids: HashSet<&str> = out.meta.trained_sample_ids.iter().map(String::as_str).collect();
    for s in &data {
        if ids.contains(s.sample_id.as_str()) {
            assert_ne!(s.domain, 1);
            assert_ne!(s.spoof_type, "grid");
        }
    }
    let val: HashSet<&str> = out.meta.validation_sample_ids.iter().map(String::as_str).collect();
    assert!(ids.is_disjoint(&val));
    assert_eq!(out.params.config.n_domains, 3);
    assert_eq!(out.report.loss_history.len(), 2);
    assert_eq!(out.report.val_metrics.len(), 2);

    let bad = ProtocolSplit::new([0, 1], 1);
    assert!(matches!(train(&data, &bad, &cfg, None), Err(Error::Protocol(_))));
    let empty = ProtocolSplit::new([0, 7], 1);
    assert!(matches!(train(&data, &empty, &cfg, None), Err(Error::Protocol(_))));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(3, 6);
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny_config()
    };
    let out = train(&data, &ProtocolSplit::new([0, 1], 2), &cfg, Some(dir.path())).unwrap();
    assert!(out.report.loss_history.is_empty());
    let ck = crate::model::read_checkpoint(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(ck.epoch, 0);
    let init = ModelParams::init(&out.params.config, cfg.seed).unwrap();
    assert_eq!(out.params, init);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["epochs", "loss_history", "val_metrics", "config", "checkpoints"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn runs_are_reproducible() {
    let data = tiny_data(3, 10);
    let split = ProtocolSplit::new([0, 1], 2);
    for mode in [UpdateMode::Joint, UpdateMode::Sequential] {
        let cfg = TrainConfig {
            update_mode: mode,
            ..tiny_config()
        };
        let a = train(&data, &split, &cfg, None).unwrap();
        let b = train(&data, &split, &cfg, None).unwrap();
        assert_eq!(a.report.loss_history, b.report.loss_history);
        assert_eq!(a.report.val_metrics, b.report.val_metrics);
        assert_eq!(a.params, b.params);
    }
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
    let full = TrainConfig::full_scale_preset();
    assert_eq!((full.epochs, full.batch_size, full.learning_rate), (200, 10, 1.5e-4));
}
