//! The six training objectives and their gradients with respect to the
//! classifier and decoder outputs.
//!
//! All losses average over the batch; sums over pixels or classes inside a
//! sample are kept as written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamGroup;
use crate::tensor::Matrix;

/// Clamp applied to the true-class probability inside the domain loss.
pub const PROB_CLAMP: f64 = 1e-7;
const ROW_SUM_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Content,
    ContentConfusion,
    Domain,
    DomainConfusion,
    Liveness,
    LivenessConfusion,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Content,
        LossKind::ContentConfusion,
        LossKind::Domain,
        LossKind::DomainConfusion,
        LossKind::Liveness,
        LossKind::LivenessConfusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Content => "l_cont",
            LossKind::ContentConfusion => "l_cont_cnf",
            LossKind::Domain => "l_dom",
            LossKind::DomainConfusion => "l_dom_cnf",
            LossKind::Liveness => "l_live",
            LossKind::LivenessConfusion => "l_live_cnf",
        }
    }
}

/// Coefficients of the weighted total, one per loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cont: f64,
    pub cont_cnf: f64,
    pub dom: f64,
    pub dom_cnf: f64,
    pub live: f64,
    pub live_cnf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(v: f64) -> Self {
        Self {
            cont: v,
            cont_cnf: v,
            dom: v,
            dom_cnf: v,
            live: v,
            live_cnf: v,
        }
    }

    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Content => self.cont,
            LossKind::ContentConfusion => self.cont_cnf,
            LossKind::Domain => self.dom,
            LossKind::DomainConfusion => self.dom_cnf,
            LossKind::Liveness => self.live,
            LossKind::LivenessConfusion => self.live_cnf,
        }
    }

    pub fn set(&mut self, kind: LossKind, v: f64) {
        let slot = match kind {
            LossKind::Content => &mut self.cont,
            LossKind::ContentConfusion => &mut self.cont_cnf,
            LossKind::Domain => &mut self.dom,
            LossKind::DomainConfusion => &mut self.dom_cnf,
            LossKind::Liveness => &mut self.live,
            LossKind::LivenessConfusion => &mut self.live_cnf,
        };
        *slot = v;
    }

    /// Only the given loss switched on, at weight 1.
    pub fn only(kind: LossKind) -> Self {
        let mut w = Self::uniform(0.0);
        w.set(kind, 1.0);
        w
    }

    pub fn active(&self) -> impl Iterator<Item = LossKind> + '_ {
        LossKind::ALL.into_iter().filter(|k| self.get(*k) != 0.0)
    }
}

/// The six component values with their weights and weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_cont: f64,
    pub l_cont_cnf: f64,
    pub l_dom: f64,
    pub l_dom_cnf: f64,
    pub l_live: f64,
    pub l_live_cnf: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBundle {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Content => self.l_cont,
            LossKind::ContentConfusion => self.l_cont_cnf,
            LossKind::Domain => self.l_dom,
            LossKind::DomainConfusion => self.l_dom_cnf,
            LossKind::Liveness => self.l_live,
            LossKind::LivenessConfusion => self.l_live_cnf,
        }
    }

    fn slot(&mut self, kind: LossKind) -> &mut f64 {
        match kind {
            LossKind::Content => &mut self.l_cont,
            LossKind::ContentConfusion => &mut self.l_cont_cnf,
            LossKind::Domain => &mut self.l_dom,
            LossKind::DomainConfusion => &mut self.l_dom_cnf,
            LossKind::Liveness => &mut self.l_live,
            LossKind::LivenessConfusion => &mut self.l_live_cnf,
        }
    }

    /// Element-wise mean of several bundles (used for per-epoch history).
    pub fn mean(bundles: &[LossBundle]) -> Option<LossBundle> {
        let first = bundles.first()?;
        let n = bundles.len() as f64;
        let mut out = *first;
        for kind in LossKind::ALL {
            *out.slot(kind) = bundles.iter().map(|b| b.get(kind)).sum::<f64>() / n;
        }
        out.total = bundles.iter().map(|b| b.total).sum::<f64>() / n;
        Some(out)
    }
}

/// Which parameter groups a loss updates, and which groups on its path are
/// held constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientRoute {
    pub loss: LossKind,
    pub receives: &'static [ParamGroup],
    pub detached: &'static [ParamGroup],
}

impl GradientRoute {
    pub fn updates(&self, group: ParamGroup) -> bool {
        self.receives.contains(&group)
    }
}

use ParamGroup::*;

/// The routing table. Confusion losses update only the encoder producing
/// the confused feature; the classifier being confused is detached.
pub const ROUTING_TABLE: [GradientRoute; 6] = [
    GradientRoute {
        loss: LossKind::Content,
        receives: &[EncContent, DecContent, Stem],
        detached: &[],
    },
    GradientRoute {
        loss: LossKind::ContentConfusion,
        receives: &[EncContent, Stem],
        detached: &[WLive, ClsDomain],
    },
    GradientRoute {
        loss: LossKind::Domain,
        receives: &[EncDomain, ClsDomain, Stem],
        detached: &[],
    },
    GradientRoute {
        loss: LossKind::DomainConfusion,
        receives: &[EncDomain, Stem],
        detached: &[WLive],
    },
    GradientRoute {
        loss: LossKind::Liveness,
        receives: &[EncLiveness, WLive, Stem],
        detached: &[],
    },
    GradientRoute {
        loss: LossKind::LivenessConfusion,
        receives: &[EncLiveness, Stem],
        detached: &[ClsDomain],
    },
];

pub fn route(kind: LossKind) -> &'static GradientRoute {
    ROUTING_TABLE
        .iter()
        .find(|r| r.loss == kind)
        .expect("every loss has a route")
}

fn check_probability_rows(p: &Matrix, what: &str) -> Result<()> {
    for r in 0..p.rows {
        let row = p.row(r);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Contract(format!(
                "{what} row {r} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn check_batch(rows: usize, what: &str) -> Result<()> {
    if rows == 0 {
        return Err(Error::Contract(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean over rows of the squared distance to the uniform vector, with its
/// gradient with respect to the probabilities.
pub(crate) fn uniform_gap(p: &Matrix) -> (f64, Matrix) {
    let b = p.rows as f64;
    let u = 1.0 / p.cols as f64;
    let mut grad = Matrix::zeros(p.rows, p.cols);
    let mut total = 0.0;
    for (g, &v) in grad.data.iter_mut().zip(&p.data) {
        total += (v - u) * (v - u);
        *g = 2.0 * (v - u) / b;
    }
    (total / b, grad)
}

/// Squared reconstruction error summed over pixels, averaged over the batch.
pub fn content_loss(decoded: &Matrix, targets: &Matrix) -> Result<f64> {
    Ok(content_loss_grad(decoded, targets)?.0)
}

pub(crate) fn content_loss_grad(decoded: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if decoded.rows != targets.rows || decoded.cols != targets.cols {
        return Err(Error::Contract(format!(
            "decoded {}x{} vs targets {}x{}",
            decoded.rows, decoded.cols, targets.rows, targets.cols
        )));
    }
    check_batch(decoded.rows, "content loss")?;
    let b = decoded.rows as f64;
    let mut grad = Matrix::zeros(decoded.rows, decoded.cols);
    let mut total = 0.0;
    for ((g, d), t) in grad.data.iter_mut().zip(&decoded.data).zip(&targets.data) {
        total += (d - t) * (d - t);
        *g = 2.0 * (d - t) / b;
    }
    Ok((total / b, grad))
}

/// `mean_j ‖p_live − ½‖² + ‖p_dom − 1/S‖²` on content features.
pub fn content_confusion_loss(p_live: &Matrix, p_dom: &Matrix) -> Result<f64> {
    if p_live.rows != p_dom.rows {
        return Err(Error::Contract("p_live and p_dom batch sizes differ".into()));
    }
    check_batch(p_live.rows, "content confusion")?;
    check_probability_rows(p_live, "p_live")?;
    check_probability_rows(p_dom, "p_dom")?;
    Ok(uniform_gap(p_live).0 + uniform_gap(p_dom).0)
}

/// Cross-entropy against the one-hot domain label, natural log.
pub fn domain_loss(p_dom: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(p_dom, labels)?;
    check_probability_rows(p_dom, "p_dom")?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(j, &d)| -p_dom.get(j, d).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Domain cross-entropy from logits and its logit gradient. Samples whose
/// true-class probability sits at the clamp contribute no gradient.
pub(crate) fn domain_loss_from_logits(p_dom: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(p_dom, labels)?;
    let b = labels.len() as f64;
    let mut grad = Matrix::zeros(p_dom.rows, p_dom.cols);
    let mut total = 0.0;
    for (j, &d) in labels.iter().enumerate() {
        let p = p_dom.get(j, d);
        let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= clamped.ln();
        if clamped == p {
            let row = grad.row_mut(j);
            for (k, g) in row.iter_mut().enumerate() {
                *g = (p_dom.get(j, k) - if k == d { 1.0 } else { 0.0 }) / b;
            }
        }
    }
    Ok((total / b, grad))
}

fn check_labels(p: &Matrix, labels: &[usize]) -> Result<()> {
    check_batch(p.rows, "domain loss")?;
    if labels.len() != p.rows {
        return Err(Error::Contract("label count differs from batch size".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&d| d >= p.cols) {
        return Err(Error::Contract(format!("domain label {bad} >= S = {}", p.cols)));
    }
    Ok(())
}

/// `mean_j ‖p_live − ½‖²` on domain features.
pub fn domain_confusion_loss(p_live: &Matrix) -> Result<f64> {
    check_batch(p_live.rows, "domain confusion")?;
    check_probability_rows(p_live, "p_live")?;
    Ok(uniform_gap(p_live).0)
}

/// Large-margin cosine loss on the two liveness cosines.
pub fn liveness_loss(cosines: &Matrix, labels: &[usize], alpha: f64, margin: f64) -> Result<f64> {
    Ok(liveness_loss_grad(cosines, labels, alpha, margin)?.0)
}

/// Per sample `softplus(α c_other − α (c_true − m))`, which equals the
/// negative log of the margin-adjusted softmax of the true class.
pub(crate) fn liveness_loss_grad(
    cosines: &Matrix,
    labels: &[usize],
    alpha: f64,
    margin: f64,
) -> Result<(f64, Matrix)> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    if !(margin >= 0.0) {
        return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
    }
    if cosines.cols != 2 || labels.len() != cosines.rows {
        return Err(Error::Contract("liveness loss expects B×2 cosines and B labels".into()));
    }
    check_batch(cosines.rows, "liveness loss")?;
    let b = labels.len() as f64;
    let mut grad = Matrix::zeros(cosines.rows, 2);
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Contract(format!("liveness label {y} is not binary")));
        }
        let (c_true, c_other) = (cosines.get(j, y), cosines.get(j, 1 - y));
        let d = alpha * c_other - alpha * (c_true - margin);
        total += d.max(0.0) + (-d.abs()).exp().ln_1p();
        let q = crate::model::sigmoid(d);
        grad.data[j * 2 + y] = -alpha * q / b;
        grad.data[j * 2 + 1 - y] = alpha * q / b;
    }
    Ok((total / b, grad))
}

/// `mean_j ‖p_dom − 1/S‖²` on liveness features.
pub fn liveness_confusion_loss(p_dom: &Matrix) -> Result<f64> {
    check_batch(p_dom.rows, "liveness confusion")?;
    check_probability_rows(p_dom, "p_dom")?;
    Ok(uniform_gap(p_dom).0)
}

/// Component values in [`LossKind::ALL`] order.
pub type LossComponents = [f64; 6];

pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<LossBundle> {
    let mut bundle = LossBundle {
        l_cont: 0.0,
        l_cont_cnf: 0.0,
        l_dom: 0.0,
        l_dom_cnf: 0.0,
        l_live: 0.0,
        l_live_cnf: 0.0,
        weights: *weights,
        total: 0.0,
    };
    for (kind, &value) in LossKind::ALL.iter().zip(components) {
        if !value.is_finite() {
            return Err(Error::Divergence {
                component: kind.name().to_string(),
                value,
            });
        }
        *bundle.slot(*kind) = value;
        let weighted = weights.get(*kind) * value;
        if !weighted.is_finite() {
            return Err(Error::Divergence {
                component: kind.name().to_string(),
                value: weighted,
            });
        }
        bundle.total += weighted;
    }
    if !bundle.total.is_finite() {
        return Err(Error::Divergence {
            component: "total".into(),
            value: bundle.total,
        });
    }
    Ok(bundle)
}

/// Gradient through a row-wise softmax: `dz = p ⊙ (g − ⟨p, g⟩)`.
pub(crate) fn softmax_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(p.rows, p.cols);
    for r in 0..p.rows {
        let (pr, gr) = (p.row(r), dp.row(r));
        let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (k, z) in dz.row_mut(r).iter_mut().enumerate() {
            *z = pr[k] * (gr[k] - inner);
        }
    }
    dz
}

/// Two-column liveness probabilities `(1 − p_real, p_real)`.
pub(crate) fn liveness_probabilities(prob_real: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(prob_real.len(), 2);
    for (j, &p) in prob_real.iter().enumerate() {
        m.data[j * 2] = 1.0 - p;
        m.data[j * 2 + 1] = p;
    }
    m
}

/// Map `dL/d(p_spoof, p_real)` back to `dL/dcos` through `p = σ(α(c₁ − c₀))`.
pub(crate) fn liveness_probabilities_backward(prob_real: &[f64], dp: &Matrix, alpha: f64) -> Matrix {
    let mut dcos = Matrix::zeros(prob_real.len(), 2);
    for (j, &p) in prob_real.iter().enumerate() {
        let dp_real = dp.get(j, 1) - dp.get(j, 0);
        let s = alpha * p * (1.0 - p) * dp_real;
        dcos.data[j * 2] = -s;
        dcos.data[j * 2 + 1] = s;
    }
    dcos
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn uniform(rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, vec![1.0 / cols as f64; rows * cols])
    }

    #[test]
    fn content_loss_values() {
        let t = Matrix::from_vec(1, 4, vec![0.5; 4]);
        let d = Matrix::from_vec(1, 4, vec![0.0; 4]);
        assert_eq!(content_loss(&t, &t).unwrap(), 0.0);
        assert!((content_loss(&d, &t).unwrap() - 1.0).abs() < 1e-15);
        let dd = Matrix::from_vec(2, 4, vec![0.0; 8]);
        let tt = Matrix::from_vec(2, 4, vec![0.5; 8]);
        assert_eq!(content_loss(&dd, &tt).unwrap(), content_loss(&d, &t).unwrap());
        assert!(content_loss(&d, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn content_confusion_values() {
        assert_eq!(content_confusion_loss(&uniform(2, 2), &uniform(2, 3)).unwrap(), 0.0);
        let p_live = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        let v = content_confusion_loss(&p_live, &uniform(1, 3)).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let bad = Matrix::from_vec(1, 2, vec![0.7, 0.7]);
        assert!(matches!(
            content_confusion_loss(&bad, &uniform(1, 3)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn domain_loss_values() {
        let v = domain_loss(&uniform(4, 3), &[0, 1, 2, 0]).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-12);
        let p = Matrix::from_vec(1, 2, vec![0.25, 0.75]);
        assert!((domain_loss(&p, &[1]).unwrap() - (-(0.75f64).ln())).abs() < 1e-12);
        let onehot = Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let v = domain_loss(&onehot, &[0, 2]).unwrap();
        assert!((v - 1e-7).abs() < 1e-12);
        // zero at the true class is clamped, not infinite
        assert!((domain_loss(&onehot, &[1, 2]).unwrap() - 0.5 * -(1e-7f64).ln() - 0.5e-7).abs() < 1e-9);
        assert!(domain_loss(&uniform(1, 3), &[3]).is_err());
    }

    #[test]
    fn domain_confusion_values() {
        assert_eq!(domain_confusion_loss(&uniform(3, 2)).unwrap(), 0.0);
        let p = Matrix::from_vec(1, 2, vec![0.9, 0.1]);
        assert!((domain_confusion_loss(&p).unwrap() - 0.32).abs() < 1e-12);
    }

    #[test]
    fn liveness_loss_values() {
        let c = Matrix::from_vec(2, 2, vec![0.3, 0.3, -0.2, -0.2]);
        let v = liveness_loss(&c, &[0, 1], 8.0, 0.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let v = liveness_loss(&c, &[0, 1], 1.0, 0.35).unwrap();
        assert!((v - (1.0 + 0.35f64.exp()).ln()).abs() < 1e-12);
        assert!((v - 0.8833).abs() < 1e-4);
        assert!(matches!(liveness_loss(&c, &[0, 1], 0.0, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn liveness_loss_is_stable_for_large_scale() {
        let c = Matrix::from_vec(1, 2, vec![1.0, -1.0]);
        let v = liveness_loss(&c, &[0], 1e4, 0.35).unwrap();
        assert!(v.is_finite() && v >= 0.0 && v < 1e-300);
        let v = liveness_loss(&c, &[1], 1e4, 0.35).unwrap();
        assert!((v - 1e4 * 2.35).abs() < 1e-6);
    }

    #[test]
    fn liveness_confusion_values() {
        assert_eq!(liveness_confusion_loss(&uniform(2, 4)).unwrap(), 0.0);
        let p = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        assert!((liveness_confusion_loss(&p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn total_loss_linearity() {
        let c = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(total_loss(&c, &LossWeights::uniform(0.0)).unwrap().total, 0.0);
        let b = total_loss(&c, &LossWeights::uniform(1.0)).unwrap();
        assert!((b.total - 2.1).abs() < 1e-12);
        let b2 = total_loss(&c, &LossWeights::uniform(2.0)).unwrap();
        assert!((b2.total - 2.0 * b.total).abs() < 1e-12);
        assert_eq!(b2.l_dom, b.l_dom);
        let mut bad = c;
        bad[3] = f64::NAN;
        match total_loss(&bad, &LossWeights::default()) {
            Err(Error::Divergence { component, .. }) => assert_eq!(component, "l_dom_cnf"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn routing_table_is_consistent() {
        for r in &ROUTING_TABLE {
            assert!(r.updates(ParamGroup::Stem));
            assert!(r.detached.iter().all(|g| !r.receives.contains(g)));
        }
        assert!(!route(LossKind::ContentConfusion).updates(ParamGroup::WLive));
        assert!(!route(LossKind::ContentConfusion).updates(ParamGroup::ClsDomain));
        assert!(!route(LossKind::DomainConfusion).updates(ParamGroup::WLive));
        assert!(!route(LossKind::LivenessConfusion).updates(ParamGroup::ClsDomain));
    }

    fn prob_rows(cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, cols), 1..5).prop_map(move |rows| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect();
            Matrix::from_rows(&rows)
        })
    }

    proptest! {
        #[test]
        fn confusion_losses_non_negative_and_bounded(p in prob_rows(3)) {
            let v = liveness_confusion_loss(&p).unwrap();
            prop_assert!(v >= 0.0);
            let s = 3.0;
            prop_assert!(v <= (1.0 - 1.0 / s) * (1.0 - 1.0 / s) + (s - 1.0) / (s * s) + 1e-12);
        }

        #[test]
        fn content_confusion_symmetric_in_domains(p in prob_rows(3), q in prob_rows(2)) {
            prop_assume!(p.rows == q.rows);
            let mut perm = p.clone();
            for r in 0..perm.rows {
                perm.row_mut(r).reverse();
            }
            let a = content_confusion_loss(&q, &p).unwrap();
            let b = content_confusion_loss(&q, &perm).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn domain_confusion_symmetric(p in 0.0f64..1.0) {
            let a = domain_confusion_loss(&Matrix::from_vec(1, 2, vec![p, 1.0 - p])).unwrap();
            let b = domain_confusion_loss(&Matrix::from_vec(1, 2, vec![1.0 - p, p])).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn liveness_loss_increases_with_margin(
            c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, y in 0usize..2,
            m in 0.0f64..1.0, dm in 0.01f64..0.5, alpha in 0.5f64..16.0,
        ) {
            let c = Matrix::from_vec(1, 2, vec![c0, c1]);
            let lo = liveness_loss(&c, &[y], alpha, m).unwrap();
            let hi = liveness_loss(&c, &[y], alpha, m + dm).unwrap();
            prop_assert!(lo >= 0.0);
            prop_assert!(hi > lo);
        }

        #[test]
        fn domain_loss_non_negative(p in prob_rows(4), seed in 0usize..4) {
            let labels: Vec<usize> = (0..p.rows).map(|j| (j + seed) % 4).collect();
            prop_assert!(domain_loss(&p, &labels).unwrap() >= 0.0);
        }
    }
}
