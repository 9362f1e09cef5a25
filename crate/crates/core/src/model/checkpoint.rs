//! Single-file checkpoint container.
//!
//! Layout: one line of compact UTF-8 JSON (the header, terminated by `\n`)
//! followed by the concatenated little-endian float32 arrays. The header
//! carries the format version, the architecture config, the epoch, the
//! array directory (`name`, `shape`, byte `offset` relative to the end of
//! the header line) and run metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::trainer::{MomentState, OptimizerState};

pub const CHECKPOINT_VERSION: &str = "DISFAS-CKPT v1";
const MAGIC_PREFIX: &str = "DISFAS-CKPT";
const OPT_M: &str = "optimizer.m/";
const OPT_V: &str = "optimizer.v/";

/// Provenance recorded alongside the parameters so evaluation can audit the
/// protocol without the training run at hand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Original (not re-indexed) domain ids the model was trained on.
    pub source_domains: Vec<usize>,
    pub target_domain: Option<usize>,
    pub held_out_spoof_types: Vec<String>,
    pub trained_sample_ids: Vec<String>,
    pub validation_sample_ids: Vec<String>,
    pub seed: u64,
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
    pub epoch: usize,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    epoch: usize,
    inference_only: bool,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    optimizer_steps: Option<BTreeMap<String, u64>>,
    #[serde(default)]
    meta: CheckpointMeta,
}

pub fn save_checkpoint(
    params: &ModelParams,
    optimizer: Option<&OptimizerState>,
    epoch: usize,
    path: &Path,
) -> Result<()> {
    write_checkpoint(
        &Checkpoint {
            params: params.clone(),
            optimizer: optimizer.cloned(),
            epoch,
            meta: CheckpointMeta::default(),
        },
        path,
    )
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<OptimizerState>, usize)> {
    let c = read_checkpoint(path)?;
    Ok((c.params, c.optimizer, c.epoch))
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut body: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
        arrays.push(ArrayEntry {
            name,
            shape,
            offset: body.len(),
        });
        for &v in data {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for (_, name, t) in ckpt.params.tensors() {
        push(name, t.shape.clone(), &t.data);
    }
    let mut steps = None;
    if let Some(opt) = &ckpt.optimizer {
        let mut s = BTreeMap::new();
        for (name, st) in &opt.moments {
            push(format!("{OPT_M}{name}"), vec![st.m.len()], &st.m);
            push(format!("{OPT_V}{name}"), vec![st.v.len()], &st.v);
            s.insert(name.clone(), st.step);
        }
        steps = Some(s);
    }
    let header = Header {
        format: CHECKPOINT_VERSION.to_string(),
        config: ckpt.params.config.clone(),
        epoch: ckpt.epoch,
        inference_only: ckpt.params.aux.is_none(),
        arrays,
        optimizer_steps: steps,
        meta: ckpt.meta.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&body);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ckpt_err("header", "missing header terminator"))?;
    let header_text =
        std::str::from_utf8(&bytes[..nl]).map_err(|_| ckpt_err("header", "header is not UTF-8"))?;
    let raw: serde_json::Value = serde_json::from_str(header_text)?;
    let format = raw.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != CHECKPOINT_VERSION {
        if format.starts_with(MAGIC_PREFIX) {
            return Err(Error::CheckpointVersion {
                found: format.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        return Err(ckpt_err("header", &format!("not a checkpoint (format `{format}`)")));
    }
    let header: Header = serde_json::from_value(raw)?;
    let body = &bytes[nl + 1..];
    let directory: HashMap<&str, &ArrayEntry> =
        header.arrays.iter().map(|a| (a.name.as_str(), a)).collect();

    let read = |name: &str, expected_shape: &[usize]| -> Result<Vec<f64>> {
        let entry = directory
            .get(name)
            .ok_or_else(|| ckpt_err(name, "array missing from checkpoint"))?;
        if entry.shape != expected_shape {
            return Err(ckpt_err(
                name,
                &format!(
                    "stored shape {:?} ({} values) does not match config shape {:?} ({} values)",
                    entry.shape,
                    entry.shape.iter().product::<usize>(),
                    expected_shape,
                    expected_shape.iter().product::<usize>()
                ),
            ));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > body.len() {
            return Err(ckpt_err(name, "file truncated"));
        }
        Ok(body[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };

    let mut params = ModelParams::init(&header.config, 0)?;
    if header.inference_only {
        params.aux = None;
    }
    let mut names = Vec::new();
    for (_, name, t) in params.tensors_mut() {
        t.data = read(&name, &t.shape)?;
        names.push((name, t.shape.clone()));
    }
    if !params.is_finite() {
        return Err(ckpt_err("parameters", "non-finite values stored"));
    }

    let optimizer = match &header.optimizer_steps {
        None => None,
        Some(steps) => {
            let mut moments = BTreeMap::new();
            for (name, shape) in &names {
                let Some(&step) = steps.get(name) else { continue };
                let n = shape.iter().product::<usize>();
                moments.insert(
                    name.clone(),
                    MomentState {
                        m: read(&format!("{OPT_M}{name}"), &[n])?,
                        v: read(&format!("{OPT_V}{name}"), &[n])?,
                        step,
                    },
                );
            }
            Some(OptimizerState { moments })
        }
    };
    Ok(Checkpoint {
        params,
        optimizer,
        epoch: header.epoch,
        meta: header.meta,
    })
}

fn ckpt_err(array: &str, msg: &str) -> Error {
    Error::Checkpoint {
        array: array.to_string(),
        msg: msg.to_string(),
    }
}
