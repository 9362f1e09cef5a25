use disfas_web::{lmcl_samples, parse_scores, roc_summary, sample_view};

#[test]
fn sample_view_matches_generator() {
    let v = sample_view(4, 1, 3, 7, 32, "stripes,grid,blur-halo").unwrap();
    assert_eq!(v.size(), 32);
    assert_eq!(v.image_rgba().len(), 32 * 32 * 4);
    assert_eq!(v.target_rgba().len(), 16 * 16 * 4);
    // odd indices are spoofs
    assert!(!v.real());
    assert!(!v.spoof_type().is_empty());
    let real = sample_view(4, 1, 2, 7, 32, "grid").unwrap();
    assert!(real.real());
    assert!(sample_view(4, 9, 0, 7, 32, "grid").is_err());
    assert!(sample_view(4, 0, 0, 7, 32, "sparkles").is_err());
}

#[test]
fn lmcl_curve_shape() {
    let d = lmcl_samples(8.0, 0.0, 5).unwrap();
    assert_eq!(d.len(), 15);
    // δ = 0 with no margin: ln 2 and p = 1/2
    assert_eq!(d[6], 0.0);
    assert!((d[7] - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((d[8] - 0.5).abs() < 1e-12);
    let with_margin = lmcl_samples(8.0, 0.35, 5).unwrap();
    assert!(with_margin[7] > d[7]);
    for w in d.chunks(3).collect::<Vec<_>>().windows(2) {
        assert!(w[1][1] < w[0][1]);
    }
}

#[test]
fn roc_summary_values() {
    let r = roc_summary(&[0.9, 0.4], &[0.6, 0.1], 0.5).unwrap();
    assert_eq!(r.auc, 0.75);
    assert_eq!((r.far, r.frr, r.hter), (0.5, 0.5, 0.5));
    assert_eq!(r.roc.first(), Some(&(1.0, 1.0)));
    assert_eq!(r.roc.last(), Some(&(0.0, 0.0)));
    assert!(roc_summary(&[], &[0.1], 0.5).is_err());
    assert_eq!(parse_scores("0.1, 0.2\n0.3").unwrap(), vec![0.1, 0.2, 0.3]);
    assert!(parse_scores("0.1 x").is_err());
}
