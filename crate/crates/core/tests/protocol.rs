use disfas::data::{generate_synthetic_dataset, LabeledSample, Liveness, SyntheticFactorSpec};
use disfas::eval::{
    domain_probe, evaluate_protocol, hter, leave_one_out_splits, read_score_tsv, write_score_tsv,
    ProbeConfig, ProtocolSplit, ThresholdPolicy,
};
use disfas::model::{CheckpointMeta, Head, ModelParams};
use disfas::trainer::{train, TrainConfig};
use disfas::Error;

fn small_data() -> Vec<LabeledSample> {
    let spec = SyntheticFactorSpec {
        n_domains: 4,
        n_per_domain: 60,
        ..SyntheticFactorSpec::default()
    };
    generate_synthetic_dataset(&spec).unwrap().0
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }
}

fn untrained(seed: u64) -> ModelParams {
    ModelParams::init(&TrainConfig::default().model_config(32, 3), seed).unwrap()
}

#[test]
fn probe_leaves_params_untouched() {
    let data = small_data();
    let split = ProtocolSplit::new([0, 1, 2], 3);
    let params = untrained(3);
    let before = params.clone();
    domain_probe(&params, &data, &split, Head::Liveness, &ProbeConfig::default()).unwrap();
    domain_probe(&params, &data, &split, Head::Domain, &ProbeConfig::default()).unwrap();
    assert_eq!(params, before);
}

#[test]
fn untrained_liveness_probe_stays_in_expected_range() {
    let data = small_data();
    let split = ProtocolSplit::new([0, 1, 2], 3);
    for seed in 0..3 {
        let cfg = ProbeConfig { seed, ..ProbeConfig::default() };
        let r = domain_probe(&untrained(seed), &data, &split, Head::Liveness, &cfg).unwrap();
        assert!((0.2..=0.55).contains(&r.accuracy), "{}", r.accuracy);
        assert_eq!(r.n_classes, 3);
    }
}

#[test]
fn shuffled_labels_probe_at_chance() {
    let data = small_data();
    let split = ProtocolSplit::new([0, 1, 2], 3);
    let params = untrained(0);
    let mut acc = 0.0;
    for seed in 0..4 {
        let cfg = ProbeConfig { seed, shuffle_labels: true, ..ProbeConfig::default() };
        acc += domain_probe(&params, &data, &split, Head::Domain, &cfg).unwrap().accuracy / 4.0;
    }
    assert!((acc - 1.0 / 3.0).abs() < 0.12, "{acc}");
}

#[test]
fn probe_needs_two_sources() {
    let data = small_data();
    let split = ProtocolSplit::new([0], 3);
    assert!(domain_probe(&untrained(0), &data, &split, Head::Liveness, &ProbeConfig::default()).is_err());
}

#[test]
fn leave_one_out_gives_one_report_per_target() {
    let data = small_data();
    let cfg = TrainConfig { epochs: 1, ..small_config() };
    let splits = leave_one_out_splits(4);
    assert_eq!(splits.len(), 4);
    for split in splits {
        let out = train(&data, &split, &cfg, None).unwrap();
        let (report, rows) =
            evaluate_protocol(&out.params, &data, &split, ThresholdPolicy::EerOnValidation, &out.meta).unwrap();
        assert_eq!(report.n_real + report.n_spoof, 60);
        assert!(rows.iter().all(|r| r.domain == split.target_domain));
    }
}

#[test]
fn held_out_attack_never_trained_and_dump_recomputes() {
    let data = small_data();
    let split = ProtocolSplit::new([0, 1, 2], 3).with_held_out(["grid"]);
    let out = train(&data, &split, &small_config(), None).unwrap();
    let by_id: std::collections::HashMap<_, _> = data.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    assert!(out.meta.trained_sample_ids.iter().all(|id| by_id[id.as_str()].spoof_type != "grid"));
    assert!(out.meta.trained_sample_ids.iter().all(|id| by_id[id.as_str()].domain != 3));

    let (report, rows) =
        evaluate_protocol(&out.params, &data, &split, ThresholdPolicy::EerOnValidation, &out.meta).unwrap();
    assert!(report.per_spoof_type.iter().any(|m| m.spoof_type == "grid"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.tsv");
    write_score_tsv(&rows, &path).unwrap();
    let dumped = read_score_tsv(&path).unwrap();
    let real: Vec<f64> = dumped.iter().filter(|r| r.liveness == Liveness::Real).map(|r| r.score).collect();
    let spoof: Vec<f64> = dumped.iter().filter(|r| r.liveness == Liveness::Spoof).map(|r| r.score).collect();
    let far = spoof.iter().filter(|&&s| s >= report.threshold).count() as f64 / spoof.len() as f64;
    let frr = real.iter().filter(|&&s| s < report.threshold).count() as f64 / real.len() as f64;
    assert!((report.hter - (far + frr) / 2.0).abs() < 1e-12);
    assert_eq!(report.hter, hter(&real, &spoof, report.threshold).unwrap().hter);
}

#[test]
fn evaluating_a_trained_target_is_a_protocol_error() {
    let data = small_data();
    let split = ProtocolSplit::new([0, 1, 2], 3);
    let leaked = CheckpointMeta {
        source_domains: vec![0, 1, 2],
        target_domain: Some(3),
        trained_sample_ids: vec![data.iter().find(|s| s.domain == 3).unwrap().sample_id.clone()],
        ..CheckpointMeta::default()
    };
    let err = evaluate_protocol(&untrained(0), &data, &split, ThresholdPolicy::FixedHalf, &leaked).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");

    let wrong_target = CheckpointMeta {
        source_domains: vec![0, 1, 3],
        ..CheckpointMeta::default()
    };
    let err = evaluate_protocol(&untrained(0), &data, &split, ThresholdPolicy::FixedHalf, &wrong_target).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn reference_run_loss_descends() {
    let data = generate_synthetic_dataset(&SyntheticFactorSpec::default()).unwrap().0;
    let split = ProtocolSplit::new([0, 1, 2], 3);
    let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    let out = train(&data, &split, &cfg, None).unwrap();
    let totals: Vec<f64> = out.report.loss_history.iter().map(|b| b.total).collect();
    let avg: Vec<f64> = totals.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let steps = avg.windows(2).count();
    let down = avg.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.8 * steps as f64, "{down}/{steps} in {totals:?}");
}
