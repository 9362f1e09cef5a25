//! Linear domain probe on frozen encoder features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolSplit;
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{encode, softmax_rows, Head, ModelParams};
use crate::tensor::Matrix;

/// Fixed schedule so accuracies are comparable between runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Permute the training labels; the probe should then sit at chance.
    pub shuffle_labels: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.5,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub head: Head,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub chance: f64,
}

/// Fit a softmax regression from frozen `head` features to re-indexed source
/// domain labels on half of the source samples and report accuracy on the
/// other half. The halves are stratified by domain.
pub fn domain_probe(
    params: &ModelParams,
    samples: &[LabeledSample],
    split: &ProtocolSplit,
    head: Head,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let s = split.source_domains.len();
    if s < 2 {
        return Err(Error::Protocol("domain probe needs at least 2 source domains".into()));
    }
    let index = split.reindex();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut by_domain: BTreeMap<usize, Vec<&LabeledSample>> = BTreeMap::new();
    for smp in samples.iter().filter(|x| split.source_domains.contains(&x.domain)) {
        by_domain.entry(smp.domain).or_default().push(smp);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (&d, list) in &mut by_domain {
        if list.len() < 2 {
            return Err(Error::Protocol(format!("domain {d} has too few samples to probe")));
        }
        list.shuffle(&mut rng);
        let half = list.len() / 2;
        train.extend(list[..half].iter().map(|x| (*x, index[&d])));
        test.extend(list[half..].iter().map(|x| (*x, index[&d])));
    }
    if by_domain.len() < s {
        return Err(Error::Protocol("a source domain has no samples".into()));
    }

    let feats = |set: &[(&LabeledSample, usize)]| -> Result<Matrix> {
        let images: Vec<_> = set.iter().map(|(x, _)| x.image.clone()).collect();
        let mut out = Matrix::zeros(0, params.config.feature_dim);
        for chunk in images.chunks(64) {
            let m = encode(params, chunk, head)?;
            out.data.extend(m.data);
            out.rows += m.rows;
        }
        Ok(out)
    };
    let mut xtr = feats(&train)?;
    let mut xte = feats(&test)?;
    let mut ytr: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    let yte: Vec<usize> = test.iter().map(|(_, y)| *y).collect();
    if config.shuffle_labels {
        ytr.shuffle(&mut rng);
    }
    standardize(&mut xtr, &mut xte);

    let f = xtr.cols;
    let mut w = Matrix::zeros(f, s);
    let mut b = vec![0.0; s];
    let n = xtr.rows as f64;
    for _ in 0..config.epochs {
        let p = softmax_rows(&logits(&xtr, &w, &b));
        let mut gw = Matrix::zeros(f, s);
        let mut gb = vec![0.0; s];
        for r in 0..xtr.rows {
            for k in 0..s {
                let g = (p.get(r, k) - if ytr[r] == k { 1.0 } else { 0.0 }) / n;
                gb[k] += g;
                for (i, &x) in xtr.row(r).iter().enumerate() {
                    gw.data[i * s + k] += g * x;
                }
            }
        }
        for (wv, g) in w.data.iter_mut().zip(&gw.data) {
            *wv -= config.learning_rate * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= config.learning_rate * g;
        }
    }
    Ok(ProbeReport {
        head,
        accuracy: accuracy(&xte, &yte, &w, &b),
        train_accuracy: accuracy(&xtr, &ytr, &w, &b),
        n_train: xtr.rows,
        n_test: xte.rows,
        n_classes: s,
        chance: 1.0 / s as f64,
    })
}

/// Zero mean, unit variance per column using the training statistics.
fn standardize(train: &mut Matrix, test: &mut Matrix) {
    let n = train.rows as f64;
    for c in 0..train.cols {
        let mean = (0..train.rows).map(|r| train.get(r, c)).sum::<f64>() / n;
        let var = (0..train.rows).map(|r| (train.get(r, c) - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
        for m in [&mut *train, &mut *test] {
            for r in 0..m.rows {
                let v = &mut m.data[r * m.cols + c];
                *v = (*v - mean) / sd;
            }
        }
    }
}

fn logits(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let s = b.len();
    let mut out = Matrix::zeros(x.rows, s);
    for r in 0..x.rows {
        for k in 0..s {
            let mut z = b[k];
            for (i, &v) in x.row(r).iter().enumerate() {
                z += v * w.data[i * s + k];
            }
            out.data[r * s + k] = z;
        }
    }
    out
}

fn accuracy(x: &Matrix, y: &[usize], w: &Matrix, b: &[f64]) -> f64 {
    let z = logits(x, w, b);
    let hits = (0..z.rows)
        .filter(|&r| {
            let row = z.row(r);
            let arg = (0..row.len())
                .fold(0, |best, k| if row[k] > row[best] { k } else { best });
            arg == y[r]
        })
        .count();
    hits as f64 / y.len() as f64
}
