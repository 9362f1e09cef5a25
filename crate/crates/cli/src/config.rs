//! Run configuration: TOML (or JSON) with `[data]`, `[train]`, `[protocol]`
//! and `[eval]` sections. Unknown keys are rejected.
//!
//! Precedence: command-line flag, then the file, then `DISFAS_SEED` (seeds
//! only), then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use disfas::data::SyntheticFactorSpec;
use disfas::eval::{ProtocolSplit, ThresholdPolicy};
use disfas::trainer::TrainConfig;
use disfas::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DISFAS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_domains: usize,
    pub n_per_domain: usize,
    pub image_size: usize,
    pub spoof_texture_set: Vec<String>,
    pub seed: u64,
    /// Manifest to train or evaluate on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticFactorSpec::default();
        Self {
            n_domains: s.n_domains,
            n_per_domain: s.n_per_domain,
            image_size: s.image_size,
            spoof_texture_set: s.spoof_texture_set,
            seed: s.seed,
            manifest: None,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> SyntheticFactorSpec {
        SyntheticFactorSpec {
            n_domains: self.n_domains,
            n_per_domain: self.n_per_domain,
            image_size: self.image_size,
            spoof_texture_set: self.spoof_texture_set.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Defaults to every domain except the target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_domains: Option<Vec<usize>>,
    /// Defaults to the last domain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_domain: Option<usize>,
    pub held_out_spoof_types: Vec<String>,
}

impl ProtocolSection {
    pub fn split(&self, n_domains: usize) -> Result<ProtocolSplit> {
        let target = self.target_domain.unwrap_or(n_domains.saturating_sub(1));
        let sources = match &self.source_domains {
            Some(s) => s.clone(),
            None => (0..n_domains).filter(|&d| d != target).collect(),
        };
        if target >= n_domains || sources.iter().any(|&d| d >= n_domains) {
            return Err(Error::Config(format!(
                "protocol refers to a domain outside 0..{n_domains}"
            )));
        }
        let split = ProtocolSplit::new(sources, target)
            .with_held_out(self.held_out_spoof_types.iter().cloned());
        split.validate()?;
        Ok(split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub policy: ThresholdPolicy,
    /// Which checkpoint a sweep evaluates: "best" or "last".
    pub checkpoint: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            policy: ThresholdPolicy::EerOnValidation,
            checkpoint: "last".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    pub protocol: ProtocolSection,
    pub eval: EvalSection,
}

/// Which seeds the file set explicitly, so the environment fallback only
/// fills the others.
#[derive(Default)]
struct SeedPresence {
    data: bool,
    train: bool,
}

fn parse(text: &str, json: bool) -> Result<(RunConfig, SeedPresence)> {
    let (cfg, raw): (RunConfig, serde_json::Value) = if json {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        (serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?, raw)
    } else {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let raw: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        (cfg, serde_json::to_value(raw)?)
    };
    let has = |section: &str| raw.get(section).and_then(|s| s.get("seed")).is_some();
    Ok((
        cfg,
        SeedPresence {
            data: has("data"),
            train: has("train"),
        },
    ))
}

/// Read `path` (or defaults when absent) and apply the seed fallback.
pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let (mut cfg, present) = match path {
        None => (RunConfig::default(), SeedPresence::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let json = p.extension().is_some_and(|e| e == "json");
            parse(&text, json)?
        }
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        let seed: u64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an integer")))?;
        if !present.data {
            cfg.data.seed = seed;
        }
        if !present.train {
            cfg.train.seed = seed;
        }
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
}

/// Write the fully resolved config next to a command's outputs.
pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("resolved_config.toml"), to_toml(cfg)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[train]\nepochz = 3\n",
            "[data]\nn_domain = 3\n",
            "[extra]\na = 1\n",
            "[train.loss_weights]\nlive = 1.0\nliv = 2.0\n",
        ] {
            assert!(matches!(parse(text, false), Err(Error::Config(_))), "{text}");
        }
        assert!(parse(r#"{"train": {"epochz": 1}}"#, true).is_err());
    }

    #[test]
    fn sections_fill_defaults() {
        let (cfg, seeds) = parse(
            "[data]\nn_domains = 3\n[train]\nepochs = 2\nablation = \"baseline\"\n[eval]\npolicy = \"fixed_half\"\n",
            false,
        )
        .unwrap();
        assert_eq!(cfg.data.n_domains, 3);
        assert_eq!(cfg.data.n_per_domain, 300);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, 10);
        assert_eq!(cfg.eval.policy, ThresholdPolicy::FixedHalf);
        assert!(!seeds.data && !seeds.train);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.protocol.target_domain = Some(1);
        cfg.data.manifest = Some("m/manifest.tsv".into());
        let text = to_toml(&cfg).unwrap();
        let (back, seeds) = parse(&text, false).unwrap();
        assert_eq!(back, cfg);
        assert!(seeds.data && seeds.train);
    }

    #[test]
    fn default_split_holds_out_last_domain() {
        let s = ProtocolSection::default().split(4).unwrap();
        assert_eq!(s.target_domain, 3);
        assert_eq!(s.source_domains.len(), 3);
        let bad = ProtocolSection {
            target_domain: Some(9),
            ..Default::default()
        };
        assert!(bad.split(4).is_err());
    }
}
