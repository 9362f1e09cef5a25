//! Forward pass over all branches, the six losses, and back-propagation
//! along the routing table.

use crate::error::Result;
use crate::losses::{
    content_loss_grad, domain_loss_from_logits, liveness_loss_grad, liveness_probabilities,
    liveness_probabilities_backward, softmax_backward, total_loss, uniform_gap, LossBundle,
    LossComponents, LossKind, LossWeights,
};
use crate::model::{
    cosine_backward, cosine_forward, prob_real_from_cosines, relu_backward, softmax_rows, Head,
    ModelParams,
};
use crate::tensor::{Act, Matrix};

/// A training batch already packed for the network.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Act,
    /// 0 spoof, 1 real.
    pub liveness: Vec<usize>,
    /// Re-indexed source domain labels.
    pub domains: Vec<usize>,
    /// `B × (h·w)` content targets.
    pub content: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.liveness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.liveness.is_empty()
    }
}

fn scaled(mut m: Matrix, s: f64) -> Matrix {
    m.data.iter_mut().for_each(|v| *v *= s);
    m
}

/// Values of the losses with non-zero weight (the rest are reported as 0)
/// and, when `grads` is given, their weighted gradients accumulated into it.
/// Each loss only writes to the groups its route lists; detached groups are
/// passed through without a gradient buffer.
pub fn compute_objective(
    params: &ModelParams,
    batch: &Batch,
    weights: &LossWeights,
    mut grads: Option<&mut ModelParams>,
) -> Result<LossBundle> {
    let cfg = &params.config;
    let (alpha, margin) = (cfg.alpha, cfg.margin);
    let on = |k: LossKind| weights.get(k) != 0.0;
    let mut values: LossComponents = [0.0; 6];
    let set = |values: &mut LossComponents, k: LossKind, v: f64| {
        values[LossKind::ALL.iter().position(|x| *x == k).unwrap()] = v;
    };
    let need = |a: LossKind, b: LossKind| on(a) || on(b);
    let want_grad = grads.is_some();

    let (stem_out, stem_cache) = params.stem_forward(&batch.images);
    let mut dstem = Act::zeros(stem_out.n, stem_out.c, stem_out.h, stem_out.w);

    if need(LossKind::Liveness, LossKind::LivenessConfusion) {
        let trunk = params.trunk(Head::Liveness)?;
        let (feat, cache) = trunk.forward(&stem_out);
        let mut dfeat = Matrix::zeros(feat.rows, feat.cols);
        if on(LossKind::Liveness) {
            let lam = weights.live;
            let cc = cosine_forward(&params.w_live, &feat)?;
            let (v, dcos) = liveness_loss_grad(&cc.cos, &batch.liveness, alpha, margin)?;
            set(&mut values, LossKind::Liveness, v);
            if let Some(g) = grads.as_deref_mut() {
                dfeat.add_assign(&cosine_backward(&cc, &scaled(dcos, lam), Some(&mut g.w_live)));
            }
        }
        if on(LossKind::LivenessConfusion) {
            let lam = weights.live_cnf;
            let cls = &params.aux()?.cls_domain;
            let (logits, mc) = cls.forward(&feat);
            let p = softmax_rows(&logits);
            let (v, dp) = uniform_gap(&p);
            set(&mut values, LossKind::LivenessConfusion, v);
            if want_grad {
                let dz = softmax_backward(&p, &scaled(dp, lam));
                dfeat.add_assign(&cls.backward(&mc, &dz, None));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            dstem.add_assign(&trunk.backward(&cache, &dfeat, Some(&mut g.enc_liveness)));
        }
    }

    if need(LossKind::Domain, LossKind::DomainConfusion) {
        let trunk = params.trunk(Head::Domain)?;
        let (feat, cache) = trunk.forward(&stem_out);
        let mut dfeat = Matrix::zeros(feat.rows, feat.cols);
        if on(LossKind::Domain) {
            let lam = weights.dom;
            let cls = &params.aux()?.cls_domain;
            let (logits, mc) = cls.forward(&feat);
            let p = softmax_rows(&logits);
            let (v, dz) = domain_loss_from_logits(&p, &batch.domains)?;
            set(&mut values, LossKind::Domain, v);
            if let Some(g) = grads.as_deref_mut() {
                let gcls = &mut g.aux.as_mut().expect("gradient buffer has aux").cls_domain;
                dfeat.add_assign(&cls.backward(&mc, &scaled(dz, lam), Some(gcls)));
            }
        }
        if on(LossKind::DomainConfusion) {
            let lam = weights.dom_cnf;
            let cc = cosine_forward(&params.w_live, &feat)?;
            let pr = prob_real_from_cosines(&cc.cos, alpha);
            let (v, dp) = uniform_gap(&liveness_probabilities(&pr));
            set(&mut values, LossKind::DomainConfusion, v);
            if want_grad {
                let dcos = liveness_probabilities_backward(&pr, &scaled(dp, lam), alpha);
                dfeat.add_assign(&cosine_backward(&cc, &dcos, None));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let gt = &mut g.aux.as_mut().expect("gradient buffer has aux").enc_domain;
            dstem.add_assign(&trunk.backward(&cache, &dfeat, Some(gt)));
        }
    }

    if need(LossKind::Content, LossKind::ContentConfusion) {
        let trunk = params.trunk(Head::Content)?;
        let (feat, cache) = trunk.forward(&stem_out);
        let mut dfeat = Matrix::zeros(feat.rows, feat.cols);
        if on(LossKind::Content) {
            let lam = weights.cont;
            let dec = &params.aux()?.dec_content;
            let (out, dc) = dec.forward(&feat);
            let (v, dout) = content_loss_grad(&out, &batch.content)?;
            set(&mut values, LossKind::Content, v);
            if let Some(g) = grads.as_deref_mut() {
                let gd = &mut g.aux.as_mut().expect("gradient buffer has aux").dec_content;
                dfeat.add_assign(&dec.backward(&dc, &scaled(dout, lam), Some(gd)));
            }
        }
        if on(LossKind::ContentConfusion) {
            let lam = weights.cont_cnf;
            let cc = cosine_forward(&params.w_live, &feat)?;
            let pr = prob_real_from_cosines(&cc.cos, alpha);
            let (v_live, dp_live) = uniform_gap(&liveness_probabilities(&pr));
            let cls = &params.aux()?.cls_domain;
            let (logits, mc) = cls.forward(&feat);
            let p = softmax_rows(&logits);
            let (v_dom, dp_dom) = uniform_gap(&p);
            set(&mut values, LossKind::ContentConfusion, v_live + v_dom);
            if want_grad {
                let dcos = liveness_probabilities_backward(&pr, &scaled(dp_live, lam), alpha);
                dfeat.add_assign(&cosine_backward(&cc, &dcos, None));
                let dz = softmax_backward(&p, &scaled(dp_dom, lam));
                dfeat.add_assign(&cls.backward(&mc, &dz, None));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let gt = &mut g.aux.as_mut().expect("gradient buffer has aux").enc_content;
            dstem.add_assign(&trunk.backward(&cache, &dfeat, Some(gt)));
        }
    }

    let bundle = total_loss(&values, weights)?;
    if let Some(g) = grads {
        relu_backward(&stem_out.data, &mut dstem.data);
        params.stem.backward(&stem_cache, &dstem, Some(&mut g.stem), false);
    }
    Ok(bundle)
}
