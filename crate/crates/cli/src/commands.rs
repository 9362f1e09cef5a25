use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use disfas::data::{generate_synthetic_dataset, load_dataset, load_manifest, write_manifest, write_png, LabeledSample};
use disfas::eval::{evaluate_protocol, write_score_tsv, MetricsReport, ProtocolSplit, ThresholdPolicy};
use disfas::model::read_checkpoint;
use disfas::trainer::{train as run_training, Ablation, TrainConfig, UpdateMode};
use disfas::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{self, RunConfig};
use crate::ConfigArgs;

/// Exit status when at least one sweep cell failed.
const SWEEP_FAILED: u8 = 6;

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| Error::Config(format!("bad {what} `{x}`"))))
        .collect()
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn is_non_empty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).is_ok_and(|mut d| d.next().is_some())
}

pub fn generate(args: &ConfigArgs, out: &Path, force: bool) -> Result<u8> {
    let cfg = load_config(args)?;
    if is_non_empty_dir(out) && !force {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} is not empty (use --force to overwrite)", out.display()),
        )));
    }
    let (samples, mut manifest) = generate_synthetic_dataset(&cfg.data.spec())?;
    fs::create_dir_all(out)?;
    manifest.root = out.to_path_buf();
    for (s, r) in samples.iter().zip(&manifest.records) {
        write_png(&s.image, &out.join(&r.relative_path))?;
    }
    write_manifest(&manifest, &out.join("manifest.tsv"))?;
    config::write_resolved(&cfg, out)?;
    for d in 0..manifest.n_domains {
        let real = samples.iter().filter(|s| s.domain == d && s.liveness.is_real()).count();
        let spoof = samples.iter().filter(|s| s.domain == d && !s.liveness.is_real()).count();
        println!("domain={d} real={real} spoof={spoof}");
    }
    Ok(0)
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// Manifest TSV; overrides `data.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// full, content_only, domain_only or baseline
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// joint or sequential
    #[arg(long)]
    pub update_mode: Option<UpdateMode>,
    #[arg(long)]
    pub target: Option<usize>,
    /// Comma-separated source domains.
    #[arg(long)]
    pub sources: Option<String>,
    /// Comma-separated spoof types withheld from training.
    #[arg(long)]
    pub hold_out: Option<String>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(m) = &self.manifest {
            cfg.data.manifest = Some(m.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(a) = self.ablation {
            cfg.train.ablation = a;
        }
        if let Some(u) = self.update_mode {
            cfg.train.update_mode = u;
        }
        if let Some(t) = self.target {
            cfg.protocol.target_domain = Some(t);
        }
        if let Some(s) = &self.sources {
            cfg.protocol.source_domains = Some(parse_list(s, "domain")?);
        }
        if let Some(h) = &self.hold_out {
            cfg.protocol.held_out_spoof_types = parse_list(h, "spoof type")?;
        }
        Ok(())
    }
}

fn load_samples(cfg: &RunConfig) -> Result<(Vec<LabeledSample>, usize)> {
    let path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest given (--manifest or data.manifest)".into()))?;
    let manifest = load_manifest(path)?;
    Ok((load_dataset(&manifest)?, manifest.n_domains))
}

pub fn train(args: &ConfigArgs, targs: &TrainArgs, out: &Path) -> Result<u8> {
    let mut cfg = load_config(args)?;
    targs.apply(&mut cfg)?;
    cfg.train.validate()?;
    let (samples, n_domains) = load_samples(&cfg)?;
    let split = cfg.protocol.split(n_domains)?;
    fs::create_dir_all(out)?;
    config::write_resolved(&cfg, out)?;
    let outcome = run_training(&samples, &split, &cfg.train, Some(out))?;
    let r = &outcome.report;
    println!(
        "sources={:?} target={} train={} val={} steps/epoch={}",
        split.source_domains, split.target_domain, r.n_train, r.n_validation, r.steps_per_epoch
    );
    if let Some(last) = r.loss_history.last() {
        println!("epochs={} final_total={:.4} l_live={:.4}", r.epochs, last.total, last.l_live);
    }
    if let Some(v) = r.val_metrics.last() {
        println!("val_auc={:.4} best_epoch={}", v.metrics.auc, r.best_epoch);
    }
    println!("checkpoint={}", out.join("last.ckpt").display());
    Ok(0)
}

fn eval_split(meta_sources: &[usize], held_out: &[String], n_domains: usize, target: usize) -> ProtocolSplit {
    let sources: Vec<usize> = if meta_sources.is_empty() {
        (0..n_domains).filter(|&d| d != target).collect()
    } else {
        meta_sources.to_vec()
    };
    ProtocolSplit::new(sources, target).with_held_out(held_out.iter().cloned())
}

pub fn eval(checkpoint: &Path, manifest: &Path, target: usize, policy: &str, out: &Path) -> Result<u8> {
    let policy: ThresholdPolicy = policy.parse()?;
    let ckpt = read_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest)?;
    if target >= manifest.n_domains {
        return Err(Error::Config(format!("target {target} outside 0..{}", manifest.n_domains)));
    }
    let split = eval_split(&ckpt.meta.source_domains, &ckpt.meta.held_out_spoof_types, manifest.n_domains, target);
    split.validate()?;
    let samples = load_dataset(&manifest)?;
    let (report, rows) = evaluate_protocol(&ckpt.params, &samples, &split, policy, &ckpt.meta)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    write_score_tsv(&rows, &out.join("scores.tsv"))?;
    println!("target={target} AUC={:.4} HTER={:.4}", report.auc, report.hter);
    Ok(0)
}

#[derive(Args, Clone, Debug, Default)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Use every domain in turn as the target.
    #[arg(long)]
    pub leave_one_out: bool,
    /// Comma-separated ablations (default: the configured one).
    #[arg(long)]
    pub ablations: Option<String>,
    /// Comma-separated seeds (default: the configured one).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Reuse cells that already have results.
    #[arg(long)]
    pub resume: bool,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub target: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub auc: f64,
    pub hter: f64,
}

struct Cell {
    target: usize,
    ablation: Ablation,
    seed: u64,
}

impl Cell {
    fn dir(&self, out: &Path) -> PathBuf {
        out.join("cells")
            .join(format!("t{}-{}-s{}", self.target, self.ablation, self.seed))
    }
}

fn run_cell(cell: &Cell, cfg: &RunConfig, samples: &[LabeledSample], split: &ProtocolSplit, dir: &Path) -> Result<CellResult> {
    let train_cfg = TrainConfig {
        ablation: cell.ablation,
        seed: cell.seed,
        ..cfg.train.clone()
    };
    let outcome = run_training(samples, split, &train_cfg, Some(dir))?;
    let params = if cfg.eval.checkpoint == "best" {
        &outcome.best
    } else {
        &outcome.params
    };
    let (report, rows): (MetricsReport, _) =
        evaluate_protocol(params, samples, split, cfg.eval.policy, &outcome.meta)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    write_score_tsv(&rows, &dir.join("scores.tsv"))?;
    let result = CellResult {
        target: cell.target,
        ablation: cell.ablation,
        seed: cell.seed,
        auc: report.auc,
        hter: report.hter,
    };
    fs::write(dir.join("cell.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const RESULTS_HEADER: &str = "target\tablation\tseed\tauc\thter";

pub fn sweep(args: &ConfigArgs, sargs: &SweepArgs, out: &Path) -> Result<u8> {
    let mut cfg = load_config(args)?;
    if let Some(m) = &sargs.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(e) = sargs.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate()?;
    if cfg.eval.checkpoint != "best" && cfg.eval.checkpoint != "last" {
        return Err(Error::Config(format!("eval.checkpoint must be best or last, got `{}`", cfg.eval.checkpoint)));
    }
    let ablations = match &sargs.ablations {
        Some(s) => parse_list::<Ablation>(s, "ablation")?,
        None => vec![cfg.train.ablation],
    };
    let seeds = match &sargs.seeds {
        Some(s) => parse_list::<u64>(s, "seed")?,
        None => vec![cfg.train.seed],
    };
    let (samples, n_domains) = load_samples(&cfg)?;
    let splits: Vec<ProtocolSplit> = if sargs.leave_one_out {
        if n_domains < 3 {
            return Err(Error::Config("leave-one-out needs at least 3 domains".into()));
        }
        (0..n_domains)
            .map(|t| {
                ProtocolSplit::new((0..n_domains).filter(|&d| d != t), t)
                    .with_held_out(cfg.protocol.held_out_spoof_types.iter().cloned())
            })
            .collect()
    } else {
        vec![cfg.protocol.split(n_domains)?]
    };
    let mut cells = Vec::new();
    for split in &splits {
        for &ablation in &ablations {
            for &seed in &seeds {
                cells.push(Cell {
                    target: split.target_domain,
                    ablation,
                    seed,
                });
            }
        }
    }
    fs::create_dir_all(out.join("cells"))?;
    config::write_resolved(&cfg, out)?;
    let split_for = |t: usize| splits.iter().find(|s| s.target_domain == t).expect("split exists");

    let results: Mutex<Vec<Option<std::result::Result<CellResult, String>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        let dir = cell.dir(out);
        let cached = dir.join("cell.json");
        let r = if sargs.resume && cached.exists() {
            fs::read_to_string(&cached)
                .map_err(Error::from)
                .and_then(|t| Ok(serde_json::from_str::<CellResult>(&t)?))
        } else {
            fs::create_dir_all(&dir)
                .map_err(Error::from)
                .and_then(|_| run_cell(cell, &cfg, &samples, split_for(cell.target), &dir))
        };
        let r = r.map_err(|e| e.to_string());
        match &r {
            Ok(c) => println!("cell target={} ablation={} seed={} AUC={:.4} HTER={:.4}", c.target, c.ablation, c.seed, c.auc, c.hter),
            Err(e) => eprintln!("cell target={} ablation={} seed={} failed: {e}", cell.target, cell.ablation, cell.seed),
        }
        results.lock().unwrap()[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..sargs.jobs.max(1) {
            s.spawn(worker);
        }
    });

    let results = results.into_inner().unwrap();
    let mut table = String::from(RESULTS_HEADER);
    table.push('\n');
    let mut failures = String::new();
    let mut groups: BTreeMap<(String, Ablation), Vec<&CellResult>> = BTreeMap::new();
    for (cell, r) in cells.iter().zip(&results) {
        match r.as_ref().expect("every cell ran") {
            Ok(c) => {
                let _ = writeln!(table, "{}\t{}\t{}\t{:?}\t{:?}", c.target, c.ablation, c.seed, c.auc, c.hter);
                groups.entry((c.target.to_string(), c.ablation)).or_default().push(c);
                groups.entry(("all".into(), c.ablation)).or_default().push(c);
            }
            Err(e) => {
                let _ = writeln!(failures, "{}\t{}\t{}\t{}", cell.target, cell.ablation, cell.seed, e);
            }
        }
    }
    fs::write(out.join("results.tsv"), table)?;
    let mut summary = String::from("target\tablation\tn\tauc_mean\tauc_std\thter_mean\thter_std\n");
    for ((target, ablation), rows) in &groups {
        let (am, asd) = mean_std(&rows.iter().map(|r| r.auc).collect::<Vec<_>>());
        let (hm, hsd) = mean_std(&rows.iter().map(|r| r.hter).collect::<Vec<_>>());
        let _ = writeln!(summary, "{target}\t{ablation}\t{}\t{am:.6}\t{asd:.6}\t{hm:.6}\t{hsd:.6}", rows.len());
        if target == "all" {
            println!("{ablation}: AUC {am:.4} ± {asd:.4}  HTER {hm:.4} ± {hsd:.4}  (n={})", rows.len());
        }
    }
    fs::write(out.join("summary.tsv"), summary)?;
    if failures.is_empty() {
        let _ = fs::remove_file(out.join("failures.tsv"));
        Ok(0)
    } else {
        fs::write(out.join("failures.tsv"), failures)?;
        eprintln!("some sweep cells failed; see failures.tsv");
        Ok(SWEEP_FAILED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<u64>("0, 1,2", "seed").unwrap(), vec![0, 1, 2]);
        assert!(parse_list::<u64>("0,x", "seed").is_err());
        assert_eq!(
            parse_list::<Ablation>("full,baseline", "ablation").unwrap(),
            vec![Ablation::Full, Ablation::Baseline]
        );
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
