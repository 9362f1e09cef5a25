//! Joint optimization of all branches with routed gradients, ablation
//! switches and seeded, reproducible batching.

mod objective;
mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{content_target, ContentMode, LabeledSample};
use crate::error::{Error, Result};
use crate::eval::{
    metrics_from_rows, score, select_threshold, MetricsReport, ProtocolSplit, ScoreRow,
    ThresholdPolicy,
};
use crate::losses::{route, LossBundle, LossKind, LossWeights};
use crate::model::{images_to_act, write_checkpoint, Checkpoint, CheckpointMeta, ModelConfig, ModelParams, ParamGroup};
use crate::tensor::Matrix;

pub use objective::{compute_objective, Batch};
pub use optim::{adamw_step, AdamWConfig, MomentState, OptimizerState};

/// Which disentanglement branches take part in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    ContentOnly,
    DomainOnly,
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::ContentOnly,
        Ablation::DomainOnly,
        Ablation::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::ContentOnly => "content_only",
            Ablation::DomainOnly => "domain_only",
            Ablation::Baseline => "baseline",
        }
    }

    /// Weights with the masked losses zeroed.
    pub fn mask(self, w: &LossWeights) -> LossWeights {
        let mut out = *w;
        let off: &[LossKind] = match self {
            Ablation::Full => &[],
            Ablation::ContentOnly => &[
                LossKind::Domain,
                LossKind::DomainConfusion,
                LossKind::LivenessConfusion,
            ],
            Ablation::DomainOnly => &[LossKind::Content, LossKind::ContentConfusion],
            Ablation::Baseline => &[
                LossKind::Content,
                LossKind::ContentConfusion,
                LossKind::Domain,
                LossKind::DomainConfusion,
                LossKind::LivenessConfusion,
            ],
        };
        for &k in off {
            out.set(k, 0.0);
        }
        out
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One optimizer step on the weighted sum of all routed losses.
    #[default]
    Joint,
    /// Content, then domain, then liveness sub-steps, each on fresh forwards.
    Sequential,
}

impl FromStr for UpdateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(UpdateMode::Joint),
            "sequential" => Ok(UpdateMode::Sequential),
            _ => Err(Error::Config(format!("unknown update mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub alpha: f64,
    pub margin: f64,
    pub ablation: Ablation,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    pub update_mode: UpdateMode,
    /// Spread each batch over the source domains in round-robin order.
    pub balance_domains: bool,
    pub validation_fraction: f64,
    pub stem_channels: usize,
    pub trunk_channels: Vec<usize>,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub decoder_channels: usize,
    pub target_size: usize,
    pub content_mode: ContentMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            seed: 0,
            loss_weights: LossWeights::default(),
            alpha: m.alpha,
            margin: m.margin,
            ablation: Ablation::Full,
            eval_every: 1,
            update_mode: UpdateMode::Joint,
            balance_domains: false,
            validation_fraction: 0.1,
            stem_channels: m.stem_channels,
            trunk_channels: m.trunk_channels,
            feature_dim: m.feature_dim,
            hidden_dim: m.hidden_dim,
            decoder_channels: m.decoder_channels,
            target_size: m.target_size,
            content_mode: ContentMode::ShapeMask,
        }
    }
}

impl TrainConfig {
    /// 256×256 inputs, 64×64 content maps, learning rate 1.5e-4, 200 epochs.
    pub fn full_scale_preset() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1.5e-4,
            target_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        for k in LossKind::ALL {
            let v = self.loss_weights.get(k);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight for {} must be >= 0", k.name())));
            }
        }
        Ok(())
    }

    /// Loss weights after the ablation mask.
    pub fn effective_weights(&self) -> LossWeights {
        self.ablation.mask(&self.loss_weights)
    }

    pub fn model_config(&self, image_size: usize, n_domains: usize) -> ModelConfig {
        ModelConfig {
            image_size,
            stem_channels: self.stem_channels,
            trunk_channels: self.trunk_channels.clone(),
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            n_domains,
            target_size: self.target_size,
            decoder_channels: self.decoder_channels,
            alpha: self.alpha,
            margin: self.margin,
            loss_weights: self.effective_weights(),
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig::new(self.learning_rate, self.weight_decay)
    }
}

/// Parameter groups that receive a gradient from at least one weighted loss.
pub fn active_groups(weights: &LossWeights) -> BTreeSet<ParamGroup> {
    weights
        .active()
        .flat_map(|k| route(k).receives.iter().copied())
        .collect()
}

fn step_on(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &Batch,
    weights: &LossWeights,
    opt: &AdamWConfig,
) -> Result<LossBundle> {
    let mut grads = params.zeros_like();
    let bundle = compute_objective(params, batch, weights, Some(&mut grads))?;
    adamw_step(params, &grads, state, &active_groups(weights), opt);
    if !params.is_finite() {
        return Err(Error::Divergence {
            component: "parameters".into(),
            value: f64::NAN,
        });
    }
    Ok(bundle)
}

/// One optimizer update (or three sub-updates in sequential mode).
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<LossBundle> {
    let weights = config.effective_weights();
    let opt = config.optimizer();
    match config.update_mode {
        UpdateMode::Joint => step_on(params, state, batch, &weights, &opt),
        UpdateMode::Sequential => {
            let stages = [
                [LossKind::Content, LossKind::ContentConfusion],
                [LossKind::Domain, LossKind::DomainConfusion],
                [LossKind::Liveness, LossKind::LivenessConfusion],
            ];
            let mut values = [0.0; 6];
            for stage in stages {
                let mut w = LossWeights::uniform(0.0);
                for k in stage {
                    w.set(k, weights.get(k));
                }
                if w.active().next().is_none() {
                    continue;
                }
                let b = step_on(params, state, batch, &w, &opt)?;
                for k in stage {
                    values[LossKind::ALL.iter().position(|x| *x == k).unwrap()] = b.get(k);
                }
            }
            crate::losses::total_loss(&values, &weights)
        }
    }
}

/// Validation metrics recorded at one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPaths {
    pub last: Option<PathBuf>,
    pub best: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean loss bundle per epoch.
    pub loss_history: Vec<LossBundle>,
    pub val_metrics: Vec<ValidationRecord>,
    pub config: TrainConfig,
    pub checkpoints: CheckpointPaths,
    pub wall_clock_seconds: f64,
    pub steps_per_epoch: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub best_epoch: usize,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Parameters at the best validation AUC (the initial ones if never validated).
    pub best: ModelParams,
    pub meta: CheckpointMeta,
}

struct Prepared<'a> {
    sample: &'a LabeledSample,
    domain: usize,
    content: Vec<f64>,
}

/// Stratified by (domain, liveness): `round(n·fraction)` of each stratum,
/// at least one when the stratum has two or more samples.
fn validation_split<'a>(
    samples: Vec<&'a LabeledSample>,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<&'a LabeledSample>, Vec<&'a LabeledSample>) {
    if fraction == 0.0 {
        return (samples, Vec::new());
    }
    let mut strata: BTreeMap<(usize, bool), Vec<&LabeledSample>> = BTreeMap::new();
    for s in samples {
        strata.entry((s.domain, s.liveness.is_real())).or_default().push(s);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for list in strata.values_mut() {
        list.shuffle(rng);
        let mut k = (list.len() as f64 * fraction).round() as usize;
        if k == 0 && list.len() >= 2 {
            k = 1;
        }
        val.extend_from_slice(&list[..k]);
        train.extend_from_slice(&list[k..]);
    }
    train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    val.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    (train, val)
}

/// Shuffle each liveness class, optionally spread domains round-robin, then
/// interleave the classes in proportion so that every batch holds both
/// where the class counts allow it.
fn epoch_order(items: &[Prepared<'_>], balance_domains: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, it) in items.iter().enumerate() {
        classes[it.sample.liveness.index()].push(i);
    }
    for c in &mut classes {
        c.shuffle(rng);
        if balance_domains {
            let mut by_dom: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in c.iter() {
                by_dom.entry(items[i].domain).or_default().push(i);
            }
            let mut queues: Vec<_> = by_dom.into_values().map(|v| v.into_iter()).collect();
            c.clear();
            loop {
                let before = c.len();
                for q in &mut queues {
                    c.extend(q.next());
                }
                if c.len() == before {
                    break;
                }
            }
        }
    }
    let total = items.len();
    let (n0, n1) = (classes[0].len(), classes[1].len());
    let mut out = Vec::with_capacity(total);
    let (mut i0, mut i1) = (0, 0);
    for t in 0..total {
        // take class 1 whenever its share of the first t+1 slots is due
        let due1 = ((t + 1) * n1).div_ceil(total.max(1));
        if i1 < n1 && (i1 < due1 || i0 >= n0) {
            out.push(classes[1][i1]);
            i1 += 1;
        } else {
            out.push(classes[0][i0]);
            i0 += 1;
        }
    }
    out
}

/// Split an order into batches; a trailing batch of one is merged into the
/// previous batch.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn build_batch(items: &[Prepared<'_>], idx: &[usize], image_size: usize) -> Result<Batch> {
    let images: Vec<_> = idx.iter().map(|&i| items[i].sample.image.clone()).collect();
    let cols = items[idx[0]].content.len();
    let mut content = Matrix::zeros(idx.len(), cols);
    for (r, &i) in idx.iter().enumerate() {
        content.row_mut(r).copy_from_slice(&items[i].content);
    }
    Ok(Batch {
        images: images_to_act(&images, image_size)?,
        liveness: idx.iter().map(|&i| items[i].sample.liveness.index()).collect(),
        domains: idx.iter().map(|&i| items[i].domain).collect(),
        content,
    })
}

fn validate_model(params: &ModelParams, val: &[&LabeledSample]) -> Result<MetricsReport> {
    let images: Vec<_> = val.iter().map(|s| s.image.clone()).collect();
    let scores = score(params, &images)?;
    let rows: Vec<ScoreRow> = val
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreRow {
            sample_id: s.sample_id.clone(),
            domain: s.domain,
            liveness: s.liveness,
            spoof_type: s.spoof_type.clone(),
            score,
        })
        .collect();
    let (r, s): (Vec<&ScoreRow>, Vec<&ScoreRow>) = rows.iter().partition(|r| r.liveness.is_real());
    let r: Vec<f64> = r.iter().map(|x| x.score).collect();
    let s: Vec<f64> = s.iter().map(|x| x.score).collect();
    let tau = select_threshold(&r, &s, ThresholdPolicy::EerOnValidation)?;
    metrics_from_rows(&rows, tau, ThresholdPolicy::EerOnValidation)
}

/// Train on the source domains of `split`. When `out_dir` is given, writes
/// `last.ckpt`, `best.ckpt` and `report.json` there.
pub fn train(
    samples: &[LabeledSample],
    split: &ProtocolSplit,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    config.validate()?;
    split.validate()?;
    let reindex = split.reindex();
    let eligible: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| split.admits_for_training(s))
        .collect();
    for &d in &split.source_domains {
        if !eligible.iter().any(|s| s.domain == d) {
            return Err(Error::Protocol(format!("source domain {d} has no training samples")));
        }
    }
    let image_size = eligible[0].image.height;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (train_set, val_set) = validation_split(eligible, config.validation_fraction, &mut rng);
    if train_set.is_empty() {
        return Err(Error::Protocol("no training samples after the validation split".into()));
    }
    if train_set.iter().any(|s| s.domain == split.target_domain) {
        return Err(Error::Protocol("target sample in training set".into()));
    }

    let items = train_set
        .iter()
        .map(|&s| {
            let ct = content_target(&s.image, &s.sample_id, &config.content_mode, config.target_size)?;
            Ok(Prepared {
                sample: s,
                domain: reindex[&s.domain],
                content: ct.map,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let model_cfg = config.model_config(image_size, split.source_domains.len());
    let mut params = ModelParams::init(&model_cfg, config.seed)?;
    let mut state = OptimizerState::new();
    let meta = CheckpointMeta {
        source_domains: split.source_domains.iter().copied().collect(),
        target_domain: Some(split.target_domain),
        held_out_spoof_types: split.held_out_spoof_types.iter().cloned().collect(),
        trained_sample_ids: train_set.iter().map(|s| s.sample_id.clone()).collect(),
        validation_sample_ids: val_set.iter().map(|s| s.sample_id.clone()).collect(),
        seed: config.seed,
        tag: config.ablation.name().to_string(),
    };

    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut val_metrics = Vec::new();
    let mut best = params.clone();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut steps_per_epoch = 0;
    let can_validate = config.eval_every > 0
        && val_set.iter().any(|s| s.liveness.is_real())
        && val_set.iter().any(|s| !s.liveness.is_real());

    for epoch in 1..=config.epochs {
        let order = epoch_order(&items, config.balance_domains, &mut rng);
        let bs = batches(&order, config.batch_size);
        steps_per_epoch = bs.len();
        let mut bundles = Vec::with_capacity(bs.len());
        for idx in bs {
            let batch = build_batch(&items, idx, image_size)?;
            bundles.push(train_step(&mut params, &mut state, &batch, config)?);
        }
        loss_history.push(LossBundle::mean(&bundles).expect("at least one batch"));
        if can_validate && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let m = validate_model(&params, &val_set)?;
            if m.auc > best_auc {
                best_auc = m.auc;
                best = params.clone();
                best_epoch = epoch;
            }
            val_metrics.push(ValidationRecord { epoch, metrics: m });
        }
    }
    if config.epochs == 0 {
        steps_per_epoch = batches(&(0..items.len()).collect::<Vec<_>>(), config.batch_size).len();
    }
    if best_epoch == 0 {
        best = params.clone();
        best_epoch = config.epochs;
    }

    let mut checkpoints = CheckpointPaths::default();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let last = dir.join("last.ckpt");
        write_checkpoint(
            &Checkpoint {
                params: params.clone(),
                optimizer: Some(state.clone()),
                epoch: config.epochs,
                meta: meta.clone(),
            },
            &last,
        )?;
        let best_path = dir.join("best.ckpt");
        write_checkpoint(
            &Checkpoint {
                params: best.clone(),
                optimizer: None,
                epoch: best_epoch,
                meta: meta.clone(),
            },
            &best_path,
        )?;
        checkpoints = CheckpointPaths {
            last: Some(last),
            best: Some(best_path),
        };
    }
    let report = TrainReport {
        epochs: config.epochs,
        loss_history,
        val_metrics,
        config: config.clone(),
        checkpoints,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        steps_per_epoch,
        n_train: train_set.len(),
        n_validation: val_set.len(),
        best_epoch,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(TrainOutcome {
        report,
        params,
        optimizer: state,
        best,
        meta,
    })
}

#[cfg(test)]
mod tests;
