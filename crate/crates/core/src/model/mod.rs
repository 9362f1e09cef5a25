//! Shared stem, three encoders, cosine-prototype liveness classifier, domain
//! classifier and content decoder.

mod checkpoint;
mod heads;
mod layers;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::tensor::{l2_norm, Act, Matrix, Tensor};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use heads::{ContentDecoder, DomainClassifier, Trunk};
pub(crate) use heads::{
    cosine_backward, cosine_forward, prob_real_from_cosines, softmax_rows,
};
pub use layers::{Conv2d, ConvTranspose2d, Linear};
pub(crate) use layers::{relu_backward, relu_inplace, sigmoid, ConvCache};

/// Norms below this are treated as dead features or prototypes.
pub const MIN_NORM: f64 = 1e-12;

/// Architecture hyperparameters plus the loss scale, margin and weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub stem_channels: usize,
    /// Widths of the downsampling conv blocks before the final block, which
    /// has `feature_dim` channels.
    pub trunk_channels: Vec<usize>,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_domains: usize,
    pub target_size: usize,
    pub decoder_channels: usize,
    pub alpha: f64,
    pub margin: f64,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            stem_channels: 8,
            trunk_channels: vec![16, 32],
            feature_dim: 64,
            hidden_dim: 32,
            n_domains: 3,
            target_size: 16,
            decoder_channels: 8,
            alpha: 8.0,
            margin: 0.35,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    /// 256×256 input and a 64×64 decoder output.
    pub fn full_scale(n_domains: usize) -> Self {
        Self {
            image_size: 256,
            target_size: 64,
            n_domains,
            ..Self::default()
        }
    }

    /// Number of 2× upsampling blocks between the 4×4 seed map and the target.
    pub fn decoder_depth(&self) -> Result<usize> {
        let t = self.target_size;
        if t < 8 || t % 4 != 0 || !(t / 4).is_power_of_two() {
            return Err(Error::Config(format!(
                "target_size {t} must be 4·2^k with k >= 1 to match the decoder"
            )));
        }
        Ok((t / 4).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder_depth()?;
        let positive = [
            ("image_size", self.image_size),
            ("stem_channels", self.stem_channels),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_domains", self.n_domains),
            ("decoder_channels", self.decoder_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.trunk_channels.contains(&0) {
            return Err(Error::Config("trunk channel widths must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Which encoder to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Liveness,
    Content,
    Domain,
}

/// Parameter groups, the unit of gradient routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Stem,
    EncLiveness,
    EncContent,
    EncDomain,
    WLive,
    ClsDomain,
    DecContent,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Stem,
        ParamGroup::EncLiveness,
        ParamGroup::EncContent,
        ParamGroup::EncDomain,
        ParamGroup::WLive,
        ParamGroup::ClsDomain,
        ParamGroup::DecContent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Stem => "stem",
            ParamGroup::EncLiveness => "enc_liveness",
            ParamGroup::EncContent => "enc_content",
            ParamGroup::EncDomain => "enc_domain",
            ParamGroup::WLive => "W_live",
            ParamGroup::ClsDomain => "cls_domain",
            ParamGroup::DecContent => "dec_content",
        }
    }

    /// Groups that scoring never touches.
    pub fn is_auxiliary(self) -> bool {
        matches!(
            self,
            ParamGroup::EncContent | ParamGroup::EncDomain | ParamGroup::ClsDomain | ParamGroup::DecContent
        )
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training-only branches. Absent in inference-only checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxParams {
    pub enc_content: Trunk,
    pub enc_domain: Trunk,
    pub cls_domain: DomainClassifier,
    pub dec_content: ContentDecoder,
}

/// All learnable parameters. The stem is a single buffer that every encoder
/// path reads, so gradients from the three paths accumulate into it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stem: Conv2d,
    pub enc_liveness: Trunk,
    /// `2 × F`; row 0 is the spoof prototype, row 1 the real prototype.
    pub w_live: Tensor,
    pub aux: Option<AuxParams>,
}

pub type NamedTensor<'a> = (ParamGroup, String, &'a Tensor);
pub type NamedTensorMut<'a> = (ParamGroup, String, &'a mut Tensor);

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Conv2d::new(3, config.stem_channels, 3, 2, &mut rng);
        let mut trunk = || Trunk::new(config, &mut rng);
        let enc_liveness = trunk();
        let enc_content = trunk();
        let enc_domain = trunk();
        let w_live = Linear::new(config.feature_dim, 2, 1.0, &mut rng).weight;
        let cls_domain = DomainClassifier::new(config, &mut rng);
        let dec_content = ContentDecoder::new(config, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            stem,
            enc_liveness,
            w_live,
            aux: Some(AuxParams {
                enc_content,
                enc_domain,
                cls_domain,
                dec_content,
            }),
        })
    }

    /// Same structure with every value zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Drop everything scoring does not need.
    pub fn inference_only(&self) -> Self {
        Self {
            aux: None,
            ..self.clone()
        }
    }

    pub fn aux(&self) -> Result<&AuxParams> {
        self.aux.as_ref().ok_or(Error::MissingParams("auxiliary branches"))
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        self.stem.visit(ParamGroup::Stem, "stem", &mut out);
        self.enc_liveness.visit(ParamGroup::EncLiveness, "enc_liveness", &mut out);
        out.push((ParamGroup::WLive, "W_live".to_string(), &self.w_live));
        if let Some(aux) = &self.aux {
            aux.enc_content.visit(ParamGroup::EncContent, "enc_content", &mut out);
            aux.enc_domain.visit(ParamGroup::EncDomain, "enc_domain", &mut out);
            aux.cls_domain.visit(ParamGroup::ClsDomain, "cls_domain", &mut out);
            aux.dec_content.visit(ParamGroup::DecContent, "dec_content", &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = Vec::new();
        self.stem.visit_mut(ParamGroup::Stem, "stem", &mut out);
        self.enc_liveness.visit_mut(ParamGroup::EncLiveness, "enc_liveness", &mut out);
        out.push((ParamGroup::WLive, "W_live".to_string(), &mut self.w_live));
        if let Some(aux) = &mut self.aux {
            aux.enc_content.visit_mut(ParamGroup::EncContent, "enc_content", &mut out);
            aux.enc_domain.visit_mut(ParamGroup::EncDomain, "enc_domain", &mut out);
            aux.cls_domain.visit_mut(ParamGroup::ClsDomain, "cls_domain", &mut out);
            aux.dec_content.visit_mut(ParamGroup::DecContent, "dec_content", &mut out);
        }
        out
    }

    pub fn group_tensors(&self, group: ParamGroup) -> Vec<&Tensor> {
        self.tensors()
            .into_iter()
            .filter(|(g, _, _)| *g == group)
            .map(|(_, _, t)| t)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn trunk(&self, head: Head) -> Result<&Trunk> {
        match head {
            Head::Liveness => Ok(&self.enc_liveness),
            Head::Content => Ok(&self.aux()?.enc_content),
            Head::Domain => Ok(&self.aux()?.enc_domain),
        }
    }
}

pub(crate) trait Visit {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>);
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>);
}

impl Visit for Conv2d {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push((group, format!("{prefix}.weight"), &self.weight));
        out.push((group, format!("{prefix}.bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        out.push((group, format!("{prefix}.weight"), &mut self.weight));
        out.push((group, format!("{prefix}.bias"), &mut self.bias));
    }
}

impl Visit for Linear {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push((group, format!("{prefix}.weight"), &self.weight));
        out.push((group, format!("{prefix}.bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        out.push((group, format!("{prefix}.weight"), &mut self.weight));
        out.push((group, format!("{prefix}.bias"), &mut self.bias));
    }
}

impl Visit for ConvTranspose2d {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        out.push((group, format!("{prefix}.weight"), &self.weight));
        out.push((group, format!("{prefix}.bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        out.push((group, format!("{prefix}.weight"), &mut self.weight));
        out.push((group, format!("{prefix}.bias"), &mut self.bias));
    }
}

/// A length-F feature, optionally projected onto the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = l2_norm(&self.values);
        if n < MIN_NORM {
            return Err(Error::Degenerate(format!("feature norm {n:e} below {MIN_NORM:e}")));
        }
        Ok(Self {
            values: self.values.iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }
}

/// Pack `B × H × W × 3` images into the network's `B × 3 × H × W` layout.
pub fn images_to_act(images: &[Image], expected_size: usize) -> Result<Act> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    if h != expected_size || w != expected_size {
        return Err(Error::Contract(format!(
            "images are {h}x{w}, model expects {expected_size}x{expected_size}"
        )));
    }
    let mut act = Act::zeros(images.len(), 3, h, w);
    let plane = h * w;
    for (b, img) in images.iter().enumerate() {
        if img.height != h || img.width != w {
            return Err(Error::Contract("images in a batch must share one size".into()));
        }
        if !img.is_valid() {
            return Err(Error::Contract(format!("image {b} has values outside [0, 1]")));
        }
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                act.data[(b * 3 + c) * plane + p] = px[c];
            }
        }
    }
    Ok(act)
}

impl ModelParams {
    pub(crate) fn stem_forward(&self, x: &Act) -> (Act, ConvCache) {
        let (mut y, cache) = self.stem.forward(x);
        relu_inplace(&mut y.data);
        (y, cache)
    }
}

/// Features from one encoder, `B × F`.
pub fn encode(params: &ModelParams, images: &[Image], head: Head) -> Result<Matrix> {
    if !params.is_finite() {
        return Err(Error::Contract("parameters contain non-finite values".into()));
    }
    let trunk = params.trunk(head)?;
    let x = images_to_act(images, params.config.image_size)?;
    let (stem, _) = params.stem_forward(&x);
    Ok(trunk.forward(&stem).0)
}

/// Output of the liveness classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LivenessOutput {
    /// `B × 2`: cosine to the spoof prototype, cosine to the real prototype.
    pub cosines: Matrix,
    pub prob_real: Vec<f64>,
}

/// Cosine similarity to the normalized prototypes and the scaled softmax
/// probability of the real class. The margin is a training-only term.
pub fn classify_liveness(params: &ModelParams, features: &Matrix) -> Result<LivenessOutput> {
    check_features(features, params.config.feature_dim)?;
    let cache = cosine_forward(&params.w_live, features)?;
    let prob_real = prob_real_from_cosines(&cache.cos, params.config.alpha);
    Ok(LivenessOutput {
        cosines: cache.cos,
        prob_real,
    })
}

/// Class probabilities over the `S` source domains, `B × S`.
pub fn classify_domain(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    check_features(features, params.config.feature_dim)?;
    let (logits, _) = params.aux()?.cls_domain.forward(features);
    Ok(softmax_rows(&logits))
}

/// Reconstructed content maps, `B × (h·w)` with values in `(0, 1)`.
pub fn decode_content(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    check_features(features, params.config.feature_dim)?;
    Ok(params.aux()?.dec_content.forward(features).0)
}

fn check_features(features: &Matrix, dim: usize) -> Result<()> {
    if features.cols != dim {
        return Err(Error::Contract(format!(
            "features have {} columns, model expects {dim}",
            features.cols
        )));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("features contain non-finite values".into()));
    }
    Ok(())
}
