use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset placed below the smallest and above the largest validation score
/// when sweeping thresholds.
pub const THRESHOLD_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    FixedHalf,
    EerOnValidation,
}

impl ThresholdPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdPolicy::FixedHalf => "fixed_half",
            ThresholdPolicy::EerOnValidation => "eer_on_validation",
        }
    }
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_half" => Ok(ThresholdPolicy::FixedHalf),
            "eer_on_validation" => Ok(ThresholdPolicy::EerOnValidation),
            other => Err(Error::Config(format!("unknown threshold policy `{other}`"))),
        }
    }
}

/// Error rates at one threshold. A score equal to the threshold is accepted as real.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HterReport {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
}

/// Area under the ROC curve as the normalized Mann–Whitney statistic:
/// `(#{r > s} + ½ #{r == s}) / (n_real · n_spoof)`.
pub fn roc_auc(scores_real: &[f64], scores_spoof: &[f64]) -> Result<f64> {
    if scores_real.is_empty() || scores_spoof.is_empty() {
        return Err(Error::Metric(format!(
            "AUC needs both classes (n_real={}, n_spoof={})",
            scores_real.len(),
            scores_spoof.len()
        )));
    }
    if scores_real.iter().chain(scores_spoof).any(|v| v.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut spoof = scores_spoof.to_vec();
    spoof.sort_by(f64::total_cmp);
    // twice the statistic, kept integral so the final division is exact
    let mut doubled: u64 = 0;
    for &r in scores_real {
        let below = spoof.partition_point(|&s| s < r);
        let not_above = spoof.partition_point(|&s| s <= r);
        doubled += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(doubled as f64 / 2.0 / (scores_real.len() * scores_spoof.len()) as f64)
}

pub fn hter(scores_real: &[f64], scores_spoof: &[f64], threshold: f64) -> Result<HterReport> {
    if scores_real.is_empty() || scores_spoof.is_empty() {
        return Err(Error::Metric("HTER needs both classes".into()));
    }
    let accepted_spoof = scores_spoof.iter().filter(|&&s| s >= threshold).count();
    let rejected_real = scores_real.iter().filter(|&&s| s < threshold).count();
    let far = accepted_spoof as f64 / scores_spoof.len() as f64;
    let frr = rejected_real as f64 / scores_real.len() as f64;
    Ok(HterReport {
        threshold,
        far,
        frr,
        hter: (far + frr) / 2.0,
    })
}

/// Threshold candidates: midpoints between consecutive distinct scores, plus
/// one point just below the minimum and one just above the maximum.
pub fn threshold_candidates(scores_real: &[f64], scores_spoof: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = scores_real.iter().chain(scores_spoof).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut out = Vec::with_capacity(all.len() + 1);
    if let (Some(&lo), Some(&hi)) = (all.first(), all.last()) {
        out.push(lo - THRESHOLD_EPS);
        out.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        out.push(hi + THRESHOLD_EPS);
    }
    out
}

/// `fixed_half` returns 0.5. `eer_on_validation` sweeps the candidates and
/// returns the one minimizing `|FAR − FRR|`, preferring the smaller
/// threshold on ties.
pub fn select_threshold(
    val_real: &[f64],
    val_spoof: &[f64],
    policy: ThresholdPolicy,
) -> Result<f64> {
    match policy {
        ThresholdPolicy::FixedHalf => Ok(0.5),
        ThresholdPolicy::EerOnValidation => {
            if val_real.is_empty() || val_spoof.is_empty() {
                return Err(Error::Metric(
                    "EER threshold needs validation scores of both classes".into(),
                ));
            }
            let mut best: Option<(f64, f64)> = None;
            for t in threshold_candidates(val_real, val_spoof) {
                let r = hter(val_real, val_spoof, t)?;
                let gap = (r.far - r.frr).abs();
                let better = match best {
                    None => true,
                    Some((g, bt)) => match gap.partial_cmp(&g) {
                        Some(Ordering::Less) => true,
                        Some(Ordering::Equal) => t < bt,
                        _ => false,
                    },
                };
                if better {
                    best = Some((gap, t));
                }
            }
            Ok(best.expect("at least two candidates").1)
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute_auc(real: &[f64], spoof: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in real {
            for s in spoof {
                if r > s {
                    acc += 1.0;
                } else if r == s {
                    acc += 0.5;
                }
            }
        }
        acc / (real.len() * spoof.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.4], &[0.6, 0.1]).unwrap(), 0.75);
        assert!(roc_auc(&[], &[0.1]).is_err());
    }

    #[test]
    fn hter_examples() {
        let r = hter(&[0.9, 0.8], &[0.1, 0.2], 0.5).unwrap();
        assert_eq!((r.far, r.frr, r.hter), (0.0, 0.0, 0.0));
        let r = hter(&[0.9, 0.4], &[0.6, 0.1], 0.5).unwrap();
        assert_eq!((r.far, r.frr, r.hter), (0.5, 0.5, 0.5));
        let r = hter(&[0.9, 0.4], &[0.6, 0.1], 0.0).unwrap();
        assert_eq!((r.far, r.frr, r.hter), (1.0, 0.0, 0.5));
        // equality counts as accept
        let r = hter(&[0.5], &[0.5], 0.5).unwrap();
        assert_eq!((r.far, r.frr), (1.0, 0.0));
    }

    #[test]
    fn threshold_policies() {
        assert_eq!(select_threshold(&[], &[], ThresholdPolicy::FixedHalf).unwrap(), 0.5);
        let t = select_threshold(&[0.9, 0.8], &[0.1, 0.2], ThresholdPolicy::EerOnValidation).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        let t = select_threshold(&[0.7], &[0.3], ThresholdPolicy::EerOnValidation).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert!(select_threshold(&[0.7], &[], ThresholdPolicy::EerOnValidation).is_err());
    }

    #[test]
    fn eer_matches_exhaustive_sweep() {
        let real = [0.91, 0.62, 0.55, 0.40, 0.88];
        let spoof = [0.12, 0.58, 0.33, 0.61];
        let t = select_threshold(&real, &spoof, ThresholdPolicy::EerOnValidation).unwrap();
        let gap = |t: f64| {
            let r = hter(&real, &spoof, t).unwrap();
            (r.far - r.frr).abs()
        };
        // every grid point between and around the scores is no better
        let best = gap(t);
        for i in 0..=2000 {
            let u = -0.01 + i as f64 * 0.0005;
            assert!(gap(u) >= best);
        }
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration(
            real in prop::collection::vec(0u8..6, 1..4),
            spoof in prop::collection::vec(0u8..6, 1..4),
        ) {
            let r: Vec<f64> = real.iter().map(|&v| v as f64 / 5.0).collect();
            let s: Vec<f64> = spoof.iter().map(|&v| v as f64 / 5.0).collect();
            prop_assert_eq!(roc_auc(&r, &s).unwrap(), brute_auc(&r, &s));
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            real in prop::collection::vec(-3.0f64..3.0, 1..12),
            spoof in prop::collection::vec(-3.0f64..3.0, 1..12),
        ) {
            let f = |v: &f64| 1.0 / (1.0 + (-2.0 * v).exp()) + v.powi(3);
            let a = roc_auc(&real, &spoof).unwrap();
            let b = roc_auc(
                &real.iter().map(f).collect::<Vec<_>>(),
                &spoof.iter().map(f).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn error_rates_monotone_in_threshold(
            real in prop::collection::vec(0.0f64..1.0, 1..10),
            spoof in prop::collection::vec(0.0f64..1.0, 1..10),
        ) {
            let mut prev: Option<HterReport> = None;
            for i in 0..=60 {
                let t = -0.1 + i as f64 * 0.02;
                let r = hter(&real, &spoof, t).unwrap();
                if let Some(p) = prev {
                    prop_assert!(r.far <= p.far);
                    prop_assert!(r.frr >= p.frr);
                }
                prev = Some(r);
            }
            let lo = hter(&real, &spoof, -1.0).unwrap();
            let hi = hter(&real, &spoof, 2.0).unwrap();
            prop_assert_eq!((lo.far, lo.frr), (1.0, 0.0));
            prop_assert_eq!((hi.far, hi.frr), (0.0, 1.0));
        }
    }
}
