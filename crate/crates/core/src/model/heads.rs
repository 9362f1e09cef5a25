use rand::Rng;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, sigmoid, Conv2d,
    ConvCache, ConvTranspose2d, Linear,
};
use super::{ModelConfig, NamedTensor, NamedTensorMut, ParamGroup, Visit, MIN_NORM};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Act, Matrix, Tensor};

/// Encoder trunk: stride-2 3×3 conv blocks, ReLU between blocks, global
/// average pooling of the last block into the feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub blocks: Vec<Conv2d>,
}

pub(crate) struct TrunkCache {
    convs: Vec<ConvCache>,
    outs: Vec<Act>,
}

impl Trunk {
    pub(crate) fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut widths = vec![config.stem_channels];
        widths.extend(&config.trunk_channels);
        widths.push(config.feature_dim);
        let blocks = widths
            .windows(2)
            .map(|w| Conv2d::new(w[0], w[1], 3, 2, rng))
            .collect();
        Self { blocks }
    }

    pub(crate) fn forward(&self, x: &Act) -> (Matrix, TrunkCache) {
        let mut convs = Vec::with_capacity(self.blocks.len());
        let mut outs: Vec<Act> = Vec::with_capacity(self.blocks.len());
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            let input = if i == 0 { x } else { &outs[i - 1] };
            let (mut y, cache) = block.forward(input);
            if i < last {
                relu_inplace(&mut y.data);
            }
            convs.push(cache);
            outs.push(y);
        }
        let feats = global_avg_pool(&outs[last]);
        (feats, TrunkCache { convs, outs })
    }

    /// Returns the gradient with respect to the trunk input.
    pub(crate) fn backward(&self, cache: &TrunkCache, dfeat: &Matrix, mut grad: Option<&mut Trunk>) -> Act {
        let last = self.blocks.len() - 1;
        let (h, w) = (cache.outs[last].h, cache.outs[last].w);
        let mut g = global_avg_pool_backward(dfeat, h, w);
        for i in (0..self.blocks.len()).rev() {
            if i < last {
                relu_backward(&cache.outs[i].data, &mut g.data);
            }
            let gp = grad.as_deref_mut().map(|t| &mut t.blocks[i]);
            g = self.blocks[i]
                .backward(&cache.convs[i], &g, gp, true)
                .expect("input gradient requested");
        }
        g
    }
}

impl Visit for Trunk {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(group, &format!("{prefix}.{i}"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(group, &format!("{prefix}.{i}"), out);
        }
    }
}

/// Two linear layers with one ReLU, `F → H → S` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainClassifier {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub(crate) struct MlpCache {
    input: Matrix,
    hidden: Matrix,
}

impl DomainClassifier {
    pub(crate) fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(config.feature_dim, config.hidden_dim, 2.0, rng),
            fc2: Linear::new(config.hidden_dim, config.n_domains, 1.0, rng),
        }
    }

    pub(crate) fn forward(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let mut hidden = self.fc1.forward(x);
        relu_inplace(&mut hidden.data);
        let logits = self.fc2.forward(&hidden);
        (
            logits,
            MlpCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    pub(crate) fn backward(&self, cache: &MlpCache, dlogits: &Matrix, grad: Option<&mut DomainClassifier>) -> Matrix {
        let (g1, g2) = match grad {
            Some(g) => (Some(&mut g.fc1), Some(&mut g.fc2)),
            None => (None, None),
        };
        let mut dh = self.fc2.backward(&cache.hidden, dlogits, g2);
        relu_backward(&cache.hidden.data, &mut dh.data);
        self.fc1.backward(&cache.input, &dh, g1)
    }
}

impl Visit for DomainClassifier {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        self.fc1.visit(group, &format!("{prefix}.fc1"), out);
        self.fc2.visit(group, &format!("{prefix}.fc2"), out);
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        self.fc1.visit_mut(group, &format!("{prefix}.fc1"), out);
        self.fc2.visit_mut(group, &format!("{prefix}.fc2"), out);
    }
}

/// Linear projection to a `C × 4 × 4` seed map followed by 2× transposed
/// convolutions up to `h × w × 1` and a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentDecoder {
    pub fc: Linear,
    pub ups: Vec<ConvTranspose2d>,
}

pub(crate) struct DecoderCache {
    input: Matrix,
    /// Input to each upsampling block, post-ReLU.
    stages: Vec<Act>,
    out: Matrix,
}

impl ContentDecoder {
    pub(crate) fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let depth = config.decoder_depth()?;
        let c = config.decoder_channels;
        let fc = Linear::new(config.feature_dim, c * 16, 2.0, rng);
        let ups = (0..depth)
            .map(|i| ConvTranspose2d::new(c, if i + 1 == depth { 1 } else { c }, rng))
            .collect();
        Ok(Self { fc, ups })
    }

    fn seed_channels(&self) -> usize {
        self.fc.out_dim() / 16
    }

    pub(crate) fn forward(&self, x: &Matrix) -> (Matrix, DecoderCache) {
        let mut seed = self.fc.forward(x);
        relu_inplace(&mut seed.data);
        let mut a = Act {
            n: x.rows,
            c: self.seed_channels(),
            h: 4,
            w: 4,
            data: seed.data,
        };
        let mut stages = Vec::with_capacity(self.ups.len());
        for (i, up) in self.ups.iter().enumerate() {
            let mut y = up.forward(&a);
            if i + 1 < self.ups.len() {
                relu_inplace(&mut y.data);
            }
            stages.push(std::mem::replace(&mut a, y));
        }
        let side = a.h;
        let mut out = Matrix::from_vec(x.rows, side * side, a.data);
        out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        (
            out.clone(),
            DecoderCache {
                input: x.clone(),
                stages,
                out,
            },
        )
    }

    pub(crate) fn backward(&self, cache: &DecoderCache, dout: &Matrix, mut grad: Option<&mut ContentDecoder>) -> Matrix {
        let n = dout.rows;
        let side = (dout.cols as f64).sqrt() as usize;
        let mut g = Act {
            n,
            c: 1,
            h: side,
            w: side,
            data: dout
                .data
                .iter()
                .zip(&cache.out.data)
                .map(|(d, y)| d * y * (1.0 - y))
                .collect(),
        };
        for i in (0..self.ups.len()).rev() {
            let input = &cache.stages[i];
            let gp = grad.as_deref_mut().map(|d| &mut d.ups[i]);
            g = self.ups[i].backward(input, &g, gp);
            relu_backward(&input.data, &mut g.data);
        }
        let dseed = Matrix::from_vec(n, g.data.len() / n, g.data);
        self.fc
            .backward(&cache.input, &dseed, grad.map(|d| &mut d.fc))
    }
}

impl Visit for ContentDecoder {
    fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensor<'a>>) {
        self.fc.visit(group, &format!("{prefix}.fc"), out);
        for (i, u) in self.ups.iter().enumerate() {
            u.visit(group, &format!("{prefix}.up{i}"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, group: ParamGroup, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        self.fc.visit_mut(group, &format!("{prefix}.fc"), out);
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit_mut(group, &format!("{prefix}.up{i}"), out);
        }
    }
}

/// Normalized features and prototypes kept for the backward pass.
pub(crate) struct CosineCache {
    fhat: Matrix,
    fnorm: Vec<f64>,
    what: Matrix,
    wnorm: [f64; 2],
    pub(crate) cos: Matrix,
}

pub(crate) fn cosine_forward(w_live: &Tensor, feats: &Matrix) -> Result<CosineCache> {
    let f = feats.cols;
    if w_live.shape != [2, f] {
        return Err(Error::Contract(format!(
            "W_live has shape {:?}, features have {f} columns",
            w_live.shape
        )));
    }
    let mut what = Matrix::from_vec(2, f, w_live.data.clone());
    let mut wnorm = [0.0; 2];
    for (k, n) in wnorm.iter_mut().enumerate() {
        *n = l2_norm(what.row(k));
        if *n < MIN_NORM {
            return Err(Error::Degenerate(format!("prototype W_{k} has norm {n:e}")));
        }
        let inv = 1.0 / *n;
        what.row_mut(k).iter_mut().for_each(|v| *v *= inv);
    }
    let mut fhat = feats.clone();
    let mut fnorm = Vec::with_capacity(feats.rows);
    let mut cos = Matrix::zeros(feats.rows, 2);
    for r in 0..feats.rows {
        let n = l2_norm(feats.row(r));
        if n < MIN_NORM {
            return Err(Error::Degenerate(format!("feature row {r} has norm {n:e}")));
        }
        fnorm.push(n);
        let inv = 1.0 / n;
        fhat.row_mut(r).iter_mut().for_each(|v| *v *= inv);
        for k in 0..2 {
            cos.data[r * 2 + k] = dot(what.row(k), fhat.row(r));
        }
    }
    Ok(CosineCache {
        fhat,
        fnorm,
        what,
        wnorm,
        cos,
    })
}

/// Back-propagate `dL/dcos` to the features and, unless detached, to `W_live`.
pub(crate) fn cosine_backward(cache: &CosineCache, dcos: &Matrix, grad_w: Option<&mut Tensor>) -> Matrix {
    let f = cache.fhat.cols;
    let mut dfeat = Matrix::zeros(cache.fhat.rows, f);
    let mut dw = grad_w;
    for r in 0..cache.fhat.rows {
        let fhat = cache.fhat.row(r);
        let inv_f = 1.0 / cache.fnorm[r];
        for k in 0..2 {
            let g = dcos.get(r, k);
            if g == 0.0 {
                continue;
            }
            let c = cache.cos.get(r, k);
            let what = cache.what.row(k);
            let drow = dfeat.row_mut(r);
            for i in 0..f {
                drow[i] += g * (what[i] - c * fhat[i]) * inv_f;
            }
            if let Some(gw) = dw.as_deref_mut() {
                let inv_w = 1.0 / cache.wnorm[k];
                let wrow = &mut gw.data[k * f..(k + 1) * f];
                for i in 0..f {
                    wrow[i] += g * (fhat[i] - c * what[i]) * inv_w;
                }
            }
        }
    }
    dfeat
}

/// `exp(α c₁) / (exp(α c₁) + exp(α c₀))` per row.
pub(crate) fn prob_real_from_cosines(cos: &Matrix, alpha: f64) -> Vec<f64> {
    (0..cos.rows)
        .map(|r| sigmoid(alpha * (cos.get(r, 1) - cos.get(r, 0))))
        .collect()
}

pub(crate) fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}
