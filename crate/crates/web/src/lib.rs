//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: render a synthetic sample with its content target,
//! trace the large-margin cosine loss against the cosine gap, and compute
//! ROC/HTER figures for a pasted score set.

use disfas::data::{content_target, generate_sample, ContentMode, Image, SpoofTexture, SyntheticFactorSpec};
use disfas::eval::{hter, roc_auc, select_threshold, threshold_candidates, ThresholdPolicy};
use disfas::losses::liveness_loss;
use disfas::tensor::Matrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// A rendered sample: RGBA pixels of the image and of its content target.
#[wasm_bindgen]
pub struct SampleView {
    size: usize,
    target_size: usize,
    image: Vec<u8>,
    target: Vec<u8>,
    real: bool,
    spoof_type: String,
}

#[wasm_bindgen]
impl SampleView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }
    #[wasm_bindgen(getter)]
    pub fn target_size(&self) -> usize {
        self.target_size
    }
    pub fn image_rgba(&self) -> Vec<u8> {
        self.image.clone()
    }
    pub fn target_rgba(&self) -> Vec<u8> {
        self.target.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn real(&self) -> bool {
        self.real
    }
    #[wasm_bindgen(getter)]
    pub fn spoof_type(&self) -> String {
        self.spoof_type.clone()
    }
}

fn to_rgba(image: &Image) -> Vec<u8> {
    image
        .data
        .chunks_exact(3)
        .flat_map(|p| [q(p[0]), q(p[1]), q(p[2]), 255])
        .collect()
}

fn gray_rgba(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| [q(v), q(v), q(v), 255]).collect()
}

fn q(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render sample `index` of `domain` under the generator settings given.
/// `textures` is a comma-separated subset of `stripes,grid,blur-halo`.
pub fn sample_view(
    n_domains: usize,
    domain: usize,
    index: usize,
    seed: u64,
    size: usize,
    textures: &str,
) -> disfas::Result<SampleView> {
    let spec = SyntheticFactorSpec {
        n_domains,
        n_per_domain: index + 1,
        image_size: size,
        spoof_texture_set: textures.split(',').map(|s| s.trim().to_string()).collect(),
        seed,
    };
    let kinds: Vec<SpoofTexture> = spec.validate()?;
    if domain >= n_domains {
        return Err(disfas::Error::Config(format!("domain {domain} outside 0..{n_domains}")));
    }
    let s = generate_sample(&spec, &kinds, domain, index);
    let target_size = size / 2;
    let t = content_target(&s.image, &s.sample_id, &ContentMode::ShapeMask, target_size)?;
    Ok(SampleView {
        size,
        target_size,
        image: to_rgba(&s.image),
        target: gray_rgba(&t.map),
        real: s.liveness.is_real(),
        spoof_type: s.spoof_type,
    })
}

#[wasm_bindgen]
pub fn render_sample(
    n_domains: usize,
    domain: usize,
    index: usize,
    seed: u64,
    size: usize,
    textures: &str,
) -> Result<SampleView, JsError> {
    sample_view(n_domains, domain, index, seed, size, textures).map_err(|e| JsError::new(&e.to_string()))
}

/// `points` samples of the cosine gap `δ = c_true − c_other` over `[−2, 2]`,
/// flattened as `[δ, loss, p_true, …]`. The loss carries the margin; the
/// probability is the inference-time one without it.
pub fn lmcl_samples(alpha: f64, margin: f64, points: usize) -> disfas::Result<Vec<f64>> {
    let n = points.max(2);
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let delta = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
        // label 1 (real): column 1 is the true class
        let cos = Matrix::from_vec(1, 2, vec![-delta / 2.0, delta / 2.0]);
        let loss = liveness_loss(&cos, &[1], alpha, margin)?;
        let p = 1.0 / (1.0 + (-alpha * delta).exp());
        out.extend([delta, loss, p]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn lmcl_curve(alpha: f64, margin: f64, points: usize) -> Result<Vec<f64>, JsError> {
    lmcl_samples(alpha, margin, points).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct RocSummary {
    pub auc: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub eer_threshold: f64,
    /// `(FAR, 1 − FRR)` at every candidate threshold, from high FAR to low.
    pub roc: Vec<(f64, f64)>,
}

pub fn roc_summary(real: &[f64], spoof: &[f64], threshold: f64) -> disfas::Result<RocSummary> {
    let at = hter(real, spoof, threshold)?;
    let roc = threshold_candidates(real, spoof)
        .into_iter()
        .map(|t| hter(real, spoof, t).map(|h| (h.far, 1.0 - h.frr)))
        .collect::<disfas::Result<Vec<_>>>()?;
    Ok(RocSummary {
        auc: roc_auc(real, spoof)?,
        threshold,
        far: at.far,
        frr: at.frr,
        hter: at.hter,
        eer_threshold: select_threshold(real, spoof, ThresholdPolicy::EerOnValidation)?,
        roc,
    })
}

/// Parse whitespace- or comma-separated numbers.
pub fn parse_scores(text: &str) -> disfas::Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| disfas::Error::Metric(format!("`{s}` is not a number")))
        })
        .collect()
}

#[wasm_bindgen]
pub fn roc_explorer(real: &str, spoof: &str, threshold: f64) -> Result<String, JsError> {
    let run = || -> disfas::Result<String> {
        let s = roc_summary(&parse_scores(real)?, &parse_scores(spoof)?, threshold)?;
        Ok(serde_json::to_string(&s)?)
    };
    run().map_err(|e| JsError::new(&e.to_string()))
}
