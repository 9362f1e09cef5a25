//! Scoring, HTER/AUC metrics, protocol evaluation and the domain probe.

mod metrics;
mod probe;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Image, LabeledSample, Liveness};
use crate::error::{Error, Result};
use crate::model::{
    cosine_forward, images_to_act, prob_real_from_cosines, CheckpointMeta, ModelParams,
};

pub use metrics::{
    hter, roc_auc, select_threshold, threshold_candidates, HterReport, ThresholdPolicy,
    THRESHOLD_EPS,
};
pub use probe::{domain_probe, ProbeConfig, ProbeReport};

/// Images per forward pass when scoring.
const SCORE_CHUNK: usize = 64;

/// Which domains train the model, which one it is tested on, and which spoof
/// types are withheld from training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSplit {
    pub source_domains: BTreeSet<usize>,
    pub target_domain: usize,
    #[serde(default)]
    pub held_out_spoof_types: BTreeSet<String>,
}

impl ProtocolSplit {
    pub fn new(sources: impl IntoIterator<Item = usize>, target: usize) -> Self {
        Self {
            source_domains: sources.into_iter().collect(),
            target_domain: target,
            held_out_spoof_types: BTreeSet::new(),
        }
    }

    pub fn with_held_out(mut self, types: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.held_out_spoof_types = types.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_domains.is_empty() {
            return Err(Error::Protocol("no source domains".into()));
        }
        if self.source_domains.contains(&self.target_domain) {
            return Err(Error::Protocol(format!(
                "target domain {} is also a source domain",
                self.target_domain
            )));
        }
        Ok(())
    }

    /// Whether a sample may be used for training under this split.
    pub fn admits_for_training(&self, s: &LabeledSample) -> bool {
        self.source_domains.contains(&s.domain) && !self.held_out_spoof_types.contains(&s.spoof_type)
    }

    /// Source domain id → re-indexed label in `[0, |sources|)`.
    pub fn reindex(&self) -> BTreeMap<usize, usize> {
        self.source_domains
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, i))
            .collect()
    }
}

/// Every leave-one-domain-out split over `n_domains` domains.
pub fn leave_one_out_splits(n_domains: usize) -> Vec<ProtocolSplit> {
    (0..n_domains)
        .map(|t| ProtocolSplit::new((0..n_domains).filter(|&d| d != t), t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoofTypeMetrics {
    pub spoof_type: String,
    pub n_spoof: usize,
    /// AUC of all real samples against this spoof type only.
    pub auc: f64,
    pub far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: usize,
    pub n_real: usize,
    pub n_spoof: usize,
    pub auc: f64,
    pub hter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub hter: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub n_real: usize,
    pub n_spoof: usize,
    pub policy: ThresholdPolicy,
    /// HTER at τ = 0.5, reported whatever the policy.
    pub hter_fixed_half: f64,
    pub per_domain: Vec<DomainMetrics>,
    pub per_spoof_type: Vec<SpoofTypeMetrics>,
}

/// One line of the score dump.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub domain: usize,
    pub liveness: Liveness,
    pub spoof_type: String,
    pub score: f64,
}

/// Probability of "real" per image, from the liveness encoder and classifier only.
pub fn score(params: &ModelParams, images: &[Image]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(SCORE_CHUNK) {
        let x = images_to_act(chunk, params.config.image_size)?;
        let (stem, _) = params.stem_forward(&x);
        let (feats, _) = params.enc_liveness.forward(&stem);
        let cache = cosine_forward(&params.w_live, &feats)?;
        out.extend(prob_real_from_cosines(&cache.cos, params.config.alpha));
    }
    Ok(out)
}

/// Metrics for already-collected rows under a given threshold.
pub fn metrics_from_rows(
    rows: &[ScoreRow],
    threshold: f64,
    policy: ThresholdPolicy,
) -> Result<MetricsReport> {
    let split = |rows: &[&ScoreRow]| -> (Vec<f64>, Vec<f64>) {
        let real = rows.iter().filter(|r| r.liveness.is_real()).map(|r| r.score).collect();
        let spoof = rows.iter().filter(|r| !r.liveness.is_real()).map(|r| r.score).collect();
        (real, spoof)
    };
    let all: Vec<&ScoreRow> = rows.iter().collect();
    let (real, spoof) = split(&all);
    let auc = roc_auc(&real, &spoof)?;
    let at = hter(&real, &spoof, threshold)?;
    let half = hter(&real, &spoof, 0.5)?;

    let domains: BTreeSet<usize> = rows.iter().map(|r| r.domain).collect();
    let mut per_domain = Vec::new();
    for d in domains {
        let sub: Vec<&ScoreRow> = rows.iter().filter(|r| r.domain == d).collect();
        let (r, s) = split(&sub);
        if r.is_empty() || s.is_empty() {
            continue;
        }
        per_domain.push(DomainMetrics {
            domain: d,
            n_real: r.len(),
            n_spoof: s.len(),
            auc: roc_auc(&r, &s)?,
            hter: hter(&r, &s, threshold)?.hter,
        });
    }

    let types: BTreeSet<&str> = rows
        .iter()
        .filter(|r| !r.liveness.is_real())
        .map(|r| r.spoof_type.as_str())
        .collect();
    let mut per_spoof_type = Vec::new();
    for t in types {
        let s: Vec<f64> = rows
            .iter()
            .filter(|r| !r.liveness.is_real() && r.spoof_type == t)
            .map(|r| r.score)
            .collect();
        per_spoof_type.push(SpoofTypeMetrics {
            spoof_type: t.to_string(),
            n_spoof: s.len(),
            auc: roc_auc(&real, &s)?,
            far: hter(&real, &s, threshold)?.far,
        });
    }

    Ok(MetricsReport {
        auc,
        hter: at.hter,
        threshold,
        far: at.far,
        frr: at.frr,
        n_real: real.len(),
        n_spoof: spoof.len(),
        policy,
        hter_fixed_half: half.hter,
        per_domain,
        per_spoof_type,
    })
}

fn score_samples(params: &ModelParams, samples: &[&LabeledSample]) -> Result<Vec<ScoreRow>> {
    // scoring sees images only; labels are attached afterwards
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let scores = score(params, &images)?;
    Ok(samples
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreRow {
            sample_id: s.sample_id.clone(),
            domain: s.domain,
            liveness: s.liveness,
            spoof_type: s.spoof_type.clone(),
            score,
        })
        .collect())
}

/// Check that nothing from the target domain reached training.
pub fn audit_protocol(meta: &CheckpointMeta, split: &ProtocolSplit, samples: &[LabeledSample]) -> Result<()> {
    if meta.source_domains.contains(&split.target_domain) {
        return Err(Error::Protocol(format!(
            "model was trained on target domain {}",
            split.target_domain
        )));
    }
    let trained: HashSet<&str> = meta.trained_sample_ids.iter().map(String::as_str).collect();
    if let Some(s) = samples
        .iter()
        .find(|s| s.domain == split.target_domain && trained.contains(s.sample_id.as_str()))
    {
        return Err(Error::Protocol(format!(
            "target sample `{}` appears in the training set",
            s.sample_id
        )));
    }
    Ok(())
}

/// Score every target-domain sample and summarize. The EER policy picks its
/// threshold on the source validation slice recorded in `meta`.
pub fn evaluate_protocol(
    params: &ModelParams,
    samples: &[LabeledSample],
    split: &ProtocolSplit,
    policy: ThresholdPolicy,
    meta: &CheckpointMeta,
) -> Result<(MetricsReport, Vec<ScoreRow>)> {
    audit_protocol(meta, split, samples)?;
    let targets: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.domain == split.target_domain)
        .collect();
    if targets.is_empty() {
        return Err(Error::Protocol(format!(
            "no samples in target domain {}",
            split.target_domain
        )));
    }
    let rows = score_samples(params, &targets)?;
    let threshold = match policy {
        ThresholdPolicy::FixedHalf => 0.5,
        ThresholdPolicy::EerOnValidation => {
            let ids: HashSet<&str> = meta.validation_sample_ids.iter().map(String::as_str).collect();
            let val: Vec<&LabeledSample> = samples
                .iter()
                .filter(|s| ids.contains(s.sample_id.as_str()))
                .collect();
            let val_rows = score_samples(params, &val)?;
            let (r, s): (Vec<&ScoreRow>, Vec<&ScoreRow>) =
                val_rows.iter().partition(|r| r.liveness.is_real());
            let r: Vec<f64> = r.iter().map(|x| x.score).collect();
            let s: Vec<f64> = s.iter().map(|x| x.score).collect();
            select_threshold(&r, &s, policy)?
        }
    };
    let report = metrics_from_rows(&rows, threshold, policy)?;
    Ok((report, rows))
}

pub const SCORE_TSV_HEADER: &str = "sample_id\tdomain\tliveness\tspoof_type\tscore";

pub fn write_score_tsv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut out = String::from(SCORE_TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}",
            r.sample_id, r.domain, r.liveness, r.spoof_type, r.score
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_score_tsv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Metric(format!("malformed score row at line {}", i + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        rows.push(ScoreRow {
            sample_id: f[0].to_string(),
            domain: f[1].parse().map_err(|_| bad())?,
            liveness: f[2].parse().map_err(|_| bad())?,
            spoof_type: f[3].to_string(),
            score: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, live: Liveness, t: &str, score: f64) -> ScoreRow {
        ScoreRow {
            sample_id: id.into(),
            domain: 3,
            liveness: live,
            spoof_type: t.into(),
            score,
        }
    }

    #[test]
    fn split_validation() {
        assert!(ProtocolSplit::new([0, 1], 1).validate().is_err());
        assert!(ProtocolSplit::new([], 1).validate().is_err());
        assert!(ProtocolSplit::new([0, 2], 1).validate().is_ok());
        let r = ProtocolSplit::new([3, 0, 2], 1).reindex();
        assert_eq!(r[&0], 0);
        assert_eq!(r[&2], 1);
        assert_eq!(r[&3], 2);
        assert_eq!(leave_one_out_splits(4).len(), 4);
    }

    #[test]
    fn report_fields_consistent() {
        let rows = vec![
            row("a", Liveness::Real, "", 0.9),
            row("b", Liveness::Real, "", 0.4),
            row("c", Liveness::Spoof, "grid", 0.6),
            row("d", Liveness::Spoof, "stripes", 0.1),
        ];
        let m = metrics_from_rows(&rows, 0.5, ThresholdPolicy::FixedHalf).unwrap();
        assert_eq!(m.auc, 0.75);
        assert_eq!(m.hter, (m.far + m.frr) / 2.0);
        assert_eq!(m.hter, 0.5);
        assert_eq!((m.n_real, m.n_spoof), (2, 2));
        assert_eq!(m.per_spoof_type.len(), 2);
        assert_eq!(m.per_spoof_type[0].spoof_type, "grid");
        assert_eq!(m.per_spoof_type[0].auc, 0.5);
        let json = serde_json::to_value(&m).unwrap();
        for key in ["auc", "hter", "threshold", "far", "frr", "n_real", "n_spoof", "policy"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["policy"], "fixed_half");
    }

    #[test]
    fn score_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("d3/00001", Liveness::Spoof, "grid", 0.123456789012345),
            row("d3/00002", Liveness::Real, "", 0.9),
        ];
        let path = dir.path().join("scores.tsv");
        write_score_tsv(&rows, &path).unwrap();
        assert_eq!(read_score_tsv(&path).unwrap(), rows);
    }
}
