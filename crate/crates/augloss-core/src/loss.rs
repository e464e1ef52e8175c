//! Tunable loss families, the Jensen-Shannon consistency regularizer, the
//! combined training objective, and analytic gradients with respect to
//! classifier logits.
//!
//! Four families are implemented: cross entropy, focal loss, NCE+RCE
//! (an active-passive pair), and the alpha family. The combined objective
//! applies the chosen family to the posterior of the original view and adds
//! a lambda-weighted Jensen-Shannon consistency term over all views.
//!
//! All probabilities are clamped into `[PROB_FLOOR, PROB_CEIL]` before any
//! logarithm; losses are singular at `p = 0` otherwise. Natural logarithms
//! throughout.

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before logs.
pub const PROB_FLOOR: f64 = 1e-7;
/// Upper clamp applied to probabilities before logs.
pub const PROB_CEIL: f64 = 1.0 - 1e-7;
/// Lower clamp for Jensen-Shannon mixture entries.
pub const MIX_FLOOR: f64 = 1e-12;
/// Width of the alpha = 1 branch that falls back to the CE limit.
pub const ALPHA_UNIT_TOL: f64 = 1e-9;

/// Fixed RCE scale.
pub const DEFAULT_DELTA: f64 = 4.0;
/// Default consistency weight.
pub const DEFAULT_LAMBDA: f64 = 12.0;
/// Default focal exponent (tuned value, 10-class image benchmarks).
pub const DEFAULT_GAMMA: f64 = 5.0;
/// Default NCE+RCE mixing weights (tuned values).
pub const DEFAULT_BETA1: f64 = 1.0;
pub const DEFAULT_BETA2: f64 = 0.1;
/// Default alpha when training with augmentation (tuned value).
pub const DEFAULT_ALPHA: f64 = 2.0;
/// Default alpha when training without augmentation (tuned value).
pub const DEFAULT_ALPHA_NOAUG: f64 = 3.0;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// Probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    probs: Vec<f64>,
}

impl Posterior {
    /// Validates length >= 2, entries in `[0, 1]`, and unit sum (1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid("posterior needs at least 2 classes"));
        }
        if let Some(v) = probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Posterior { probs })
    }

    /// Softmax of a logit row.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::invalid("need at least 2 logits"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logit"));
        }
        Ok(Posterior {
            probs: softmax(logits),
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, y: usize) -> Result<Self> {
        if y >= k {
            return Err(Error::invalid(format!("class {y} out of range for k={k}")));
        }
        let mut probs = vec![0.0; k];
        probs[y] = 1.0;
        Self::new(probs)
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, y: usize) -> f64 {
        self.probs[y]
    }

    /// Index of the largest probability, ties broken toward the lowest class.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Posteriors for the original view and its augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTuple {
    orig: Posterior,
    augs: Vec<Posterior>,
}

impl PosteriorTuple {
    pub fn new(orig: Posterior, augs: Vec<Posterior>) -> Result<Self> {
        if let Some(a) = augs.iter().find(|a| a.k() != orig.k()) {
            return Err(Error::invalid(format!(
                "tuple members disagree on class count: {} vs {}",
                orig.k(),
                a.k()
            )));
        }
        Ok(PosteriorTuple { orig, augs })
    }

    pub fn orig(&self) -> &Posterior {
        &self.orig
    }

    pub fn augs(&self) -> &[Posterior] {
        &self.augs
    }

    pub fn len(&self) -> usize {
        1 + self.augs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn k(&self) -> usize {
        self.orig.k()
    }

    pub fn members(&self) -> impl Iterator<Item = &Posterior> {
        std::iter::once(&self.orig).chain(self.augs.iter())
    }
}

/// Loss family with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossFamily {
    Ce,
    Focal { gamma: f64 },
    NceRce { beta1: f64, beta2: f64, delta: f64 },
    Alpha { alpha: f64 },
}

impl LossFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::Ce => "ce",
            LossFamily::Focal { .. } => "focal",
            LossFamily::NceRce { .. } => "nce_rce",
            LossFamily::Alpha { .. } => "alpha",
        }
    }

    /// Canonical hyperparameter string used in reports; empty for CE.
    pub fn hyperparams(&self) -> String {
        match self {
            LossFamily::Ce => String::new(),
            LossFamily::Focal { gamma } => format!("gamma={gamma}"),
            LossFamily::NceRce { beta1, beta2, delta } => {
                format!("beta1={beta1};beta2={beta2};delta={delta}")
            }
            LossFamily::Alpha { alpha } => format!("alpha={alpha}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LossFamily::Ce => Ok(()),
            LossFamily::Focal { gamma } => {
                if !(0.0..=5.0).contains(&gamma) {
                    Err(Error::invalid(format!("gamma must be in [0, 5], got {gamma}")))
                } else {
                    Ok(())
                }
            }
            LossFamily::NceRce { beta1, beta2, delta } => {
                if beta1 <= 0.0 || beta2 <= 0.0 {
                    Err(Error::invalid("beta1 and beta2 must be positive"))
                } else if delta <= 0.0 {
                    Err(Error::invalid("delta must be positive"))
                } else {
                    Ok(())
                }
            }
            LossFamily::Alpha { alpha } => {
                if alpha.is_nan() || alpha <= 0.0 {
                    Err(Error::invalid(format!("alpha must be positive, got {alpha}")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A loss family plus the consistency weight lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub family: LossFamily,
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(family: LossFamily, lambda: f64) -> Result<Self> {
        family.validate()?;
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LossSpec { family, lambda })
    }

    pub fn ce(lambda: f64) -> Result<Self> {
        Self::new(LossFamily::Ce, lambda)
    }

    pub fn focal(gamma: f64, lambda: f64) -> Result<Self> {
        Self::new(LossFamily::Focal { gamma }, lambda)
    }

    pub fn nce_rce(beta1: f64, beta2: f64, delta: f64, lambda: f64) -> Result<Self> {
        Self::new(LossFamily::NceRce { beta1, beta2, delta }, lambda)
    }

    pub fn alpha(alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(LossFamily::Alpha { alpha }, lambda)
    }
}

fn check_index(p: &Posterior, y: usize) -> Result<()> {
    if y >= p.k() {
        Err(Error::invalid(format!(
            "class index {y} out of range for k={}",
            p.k()
        )))
    } else {
        Ok(())
    }
}

/// Cross entropy: `-log p[y]`.
pub fn ce_loss(p: &Posterior, y: usize) -> Result<f64> {
    check_index(p, y)?;
    Ok(-clamp_prob(p.get(y)).ln())
}

/// Focal loss: `-(1 - p[y])^gamma * log p[y]`; equals CE at gamma = 0.
pub fn focal_loss(p: &Posterior, y: usize, gamma: f64) -> Result<f64> {
    check_index(p, y)?;
    if gamma < 0.0 || gamma.is_nan() {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let py = p.get(y);
    Ok(-(1.0 - py).powf(gamma) * clamp_prob(py).ln())
}

/// Normalized cross entropy: CE at `y` over the sum of CE across all
/// classes. Probabilities are clamped before the logs, so the denominator
/// is finite and positive; the value lies in `[0, 1]`.
pub fn nce_loss(p: &Posterior, y: usize) -> Result<f64> {
    check_index(p, y)?;
    let terms: Vec<f64> = p.probs().iter().map(|&q| -clamp_prob(q).ln()).collect();
    let denom: f64 = terms.iter().sum();
    Ok(terms[y] / denom)
}

/// Reverse cross entropy: `delta * sum_{y' != y} p[y']`.
pub fn rce_loss(p: &Posterior, y: usize, delta: f64) -> Result<f64> {
    check_index(p, y)?;
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    let sum: f64 = p
        .probs()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != y)
        .map(|(_, &q)| q)
        .sum();
    Ok(delta * sum)
}

/// Active-passive combination `beta1 * NCE + beta2 * RCE`.
pub fn nce_rce_loss(p: &Posterior, y: usize, beta1: f64, beta2: f64, delta: f64) -> Result<f64> {
    if beta1 <= 0.0 || beta2 <= 0.0 {
        return Err(Error::invalid("beta1 and beta2 must be positive"));
    }
    Ok(beta1 * nce_loss(p, y)? + beta2 * rce_loss(p, y, delta)?)
}

/// Alpha family: `alpha/(alpha-1) * (1 - p[y]^(1 - 1/alpha))`.
///
/// `alpha = 1` is the CE limit (taken analytically within
/// [`ALPHA_UNIT_TOL`]); `alpha = f64::INFINITY` yields `1 - p[y]`.
pub fn alpha_loss(p: &Posterior, y: usize, alpha: f64) -> Result<f64> {
    check_index(p, y)?;
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if alpha.is_infinite() {
        return Ok(1.0 - p.get(y));
    }
    if (alpha - 1.0).abs() <= ALPHA_UNIT_TOL {
        return ce_loss(p, y);
    }
    let py = clamp_prob(p.get(y));
    Ok(alpha / (alpha - 1.0) * (1.0 - py.powf(1.0 - 1.0 / alpha)))
}

/// Dispatches the family on the single posterior of the original view.
pub fn base_loss(family: &LossFamily, p: &Posterior, y: usize) -> Result<f64> {
    match *family {
        LossFamily::Ce => ce_loss(p, y),
        LossFamily::Focal { gamma } => focal_loss(p, y, gamma),
        LossFamily::NceRce { beta1, beta2, delta } => nce_rce_loss(p, y, beta1, beta2, delta),
        LossFamily::Alpha { alpha } => alpha_loss(p, y, alpha),
    }
}

/// Jensen-Shannon consistency over a 3-member tuple: the mean KL divergence
/// of each member to the elementwise mean posterior. Bounded by `ln 3`.
///
/// Uses the `0 * log 0 = 0` convention; mixture entries are clamped below
/// at [`MIX_FLOOR`] so one-hot members cannot produce NaN.
pub fn js_consistency(tuple: &PosteriorTuple) -> Result<f64> {
    if tuple.len() != 3 {
        return Err(Error::invalid(format!(
            "consistency term needs 3 tuple members, got {}",
            tuple.len()
        )));
    }
    let k = tuple.k();
    let mut mix = vec![0.0; k];
    for member in tuple.members() {
        for (m, &q) in mix.iter_mut().zip(member.probs()) {
            *m += q / 3.0;
        }
    }
    let mut total = 0.0;
    for member in tuple.members() {
        for (j, &q) in member.probs().iter().enumerate() {
            if q > 0.0 {
                total += q * (q.ln() - mix[j].max(MIX_FLOOR).ln());
            }
        }
    }
    // KL sums are nonnegative; guard tiny negative rounding.
    Ok((total / 3.0).max(0.0))
}

/// Combined objective: base loss on the original view plus
/// `lambda * js_consistency` over the tuple.
pub fn augloss_objective(tuple: &PosteriorTuple, y: usize, spec: &LossSpec) -> Result<f64> {
    let l1 = base_loss(&spec.family, tuple.orig(), y)?;
    if spec.lambda > 0.0 {
        Ok(l1 + spec.lambda * js_consistency(tuple)?)
    } else {
        Ok(l1)
    }
}

/// Gradient of the base loss with respect to the posterior, evaluated at
/// `p`. Probabilities are clamped as in the forward direction.
fn base_posterior_grad(family: &LossFamily, p: &Posterior, y: usize) -> Vec<f64> {
    let k = p.k();
    let mut u = vec![0.0; k];
    match *family {
        LossFamily::Ce => {
            u[y] = -1.0 / clamp_prob(p.get(y));
        }
        LossFamily::Focal { gamma } => {
            let py = clamp_prob(p.get(y));
            let miss = (1.0 - py).max(PROB_FLOOR);
            let log_term = if gamma == 0.0 {
                0.0
            } else {
                gamma * miss.powf(gamma - 1.0) * py.ln()
            };
            u[y] = log_term - miss.powf(gamma) / py;
        }
        LossFamily::NceRce { beta1, beta2, delta } => {
            let terms: Vec<f64> = p.probs().iter().map(|&q| -clamp_prob(q).ln()).collect();
            let s: f64 = terms.iter().sum();
            for (i, ui) in u.iter_mut().enumerate() {
                let num = terms[y] - if i == y { s } else { 0.0 };
                *ui = beta1 * num / (clamp_prob(p.get(i)) * s * s);
                if i != y {
                    *ui += beta2 * delta;
                }
            }
        }
        LossFamily::Alpha { alpha } => {
            // d/dp [ a/(a-1) (1 - p^(1-1/a)) ] = -p^(-1/a); also the CE
            // (alpha -> 1) and 0-1 (alpha -> inf) limits.
            let py = clamp_prob(p.get(y));
            let exponent = -1.0 / alpha;
            u[y] = -py.powf(exponent);
        }
    }
    u
}

/// Chains a posterior-space gradient `u` through softmax at `p`:
/// `g_i = p_i * (u_i - sum_j u_j p_j)`.
fn chain_softmax(p: &[f64], u: &[f64]) -> Vec<f64> {
    let dot: f64 = u.iter().zip(p).map(|(ui, pi)| ui * pi).sum();
    p.iter().zip(u).map(|(pi, ui)| pi * (ui - dot)).collect()
}

/// Analytic gradient of the combined objective with respect to the logits.
///
/// `logit_tuple` holds one row per view in order (orig, aug1, aug2, ...);
/// softmax is applied rowwise inside this function. With `lambda > 0` the
/// tuple must have exactly 3 rows; with `lambda = 0` any row count >= 1 is
/// accepted and only the first row receives gradient.
pub fn loss_gradient(
    spec: &LossSpec,
    logit_tuple: &[Vec<f64>],
    y: usize,
) -> Result<Vec<Vec<f64>>> {
    if logit_tuple.is_empty() {
        return Err(Error::invalid("empty logit tuple"));
    }
    let k = logit_tuple[0].len();
    if k < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if y >= k {
        return Err(Error::invalid(format!("class index {y} out of range for k={k}")));
    }
    for row in logit_tuple {
        if row.len() != k {
            return Err(Error::invalid("ragged logit tuple"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logit"));
        }
    }
    let n = logit_tuple.len();
    if spec.lambda > 0.0 && n != 3 {
        return Err(Error::invalid(format!(
            "consistency term needs 3 logit rows, got {n}"
        )));
    }
    spec.family.validate()?;

    let probs: Vec<Vec<f64>> = logit_tuple.iter().map(|row| softmax(row)).collect();

    // Posterior-space gradients per row, then chain through softmax.
    let mut u_rows = vec![vec![0.0; k]; n];
    let p0 = Posterior {
        probs: probs[0].clone(),
    };
    let u_base = base_posterior_grad(&spec.family, &p0, y);
    for (dst, ub) in u_rows[0].iter_mut().zip(&u_base) {
        *dst += ub;
    }
    if spec.lambda > 0.0 {
        let mut mix = vec![0.0; k];
        for row in &probs {
            for (m, &q) in mix.iter_mut().zip(row) {
                *m += q / 3.0;
            }
        }
        // d JS / d p_aj = (1/3) ln(p_aj / mix_j); softmax outputs are
        // strictly positive, so the log is finite.
        for (u_row, p_row) in u_rows.iter_mut().zip(&probs) {
            for ((uj, &pj), &mj) in u_row.iter_mut().zip(p_row).zip(&mix) {
                *uj += spec.lambda * (pj.ln() - mj.max(MIX_FLOOR).ln()) / 3.0;
            }
        }
    }
    Ok(u_rows
        .iter()
        .zip(&probs)
        .map(|(u, p)| chain_softmax(p, u))
        .collect())
}
