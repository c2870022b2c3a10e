//! Classification and domain-adversarial objectives, plus per-sample
//! reweighting of the adversarial terms.
//!
//! The adversarial loss is the discriminator's binary cross-entropy:
//!
//! ```text
//! L_adv = - Σ_src w_i log p_i / Σ_src w_i  -  Σ_tgt w_j log(1 - p_j) / Σ_tgt w_j
//! ```
//!
//! where `p` is the source probability. The feature extractor sees this loss
//! through a gradient-reversal node, so one minimization trains the
//! discriminator on `L_adv` and the extractor on `-λ L_adv`.

use crate::autodiff::{Graph, Var};
use crate::datasets::Domain;
use crate::error::{Error, Result};
use crate::models::DomainPrediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReweightMode {
    None,
    /// `1 + e^{-H}` of the object-classifier entropy `H`.
    Entropy,
    /// `1 / (1 + e^{-H})`.
    InverseEntropy,
    /// Source samples weighted by the discriminator's target probability `p0`
    /// (detached). Targets get weight 1. This is a monotone surrogate for
    /// importance weighting by a discriminator, not a separate auxiliary
    /// network.
    Discriminator,
}

impl ReweightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReweightMode::None => "none",
            ReweightMode::Entropy => "entropy",
            ReweightMode::InverseEntropy => "inverse_entropy",
            ReweightMode::Discriminator => "discriminator",
        }
    }
}

impl std::str::FromStr for ReweightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "none" => ReweightMode::None,
            "entropy" => ReweightMode::Entropy,
            "inverse_entropy" => ReweightMode::InverseEntropy,
            "discriminator" => ReweightMode::Discriminator,
            other => return Err(format!("unknown reweight mode `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaSchedule {
    Constant,
    /// `λ · (2 / (1 + e^{-10 p}) - 1)` over training progress `p ∈ [0, 1]`.
    Ramp,
}

impl LambdaSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaSchedule::Constant => "constant",
            LambdaSchedule::Ramp => "ramp",
        }
    }
}

impl std::str::FromStr for LambdaSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(LambdaSchedule::Constant),
            "ramp" => Ok(LambdaSchedule::Ramp),
            other => Err(format!("unknown lambda schedule `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub reweight: ReweightMode,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::Constant,
            reweight: ReweightMode::None,
            clamp_eps: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-6) {
            return Err(Error::invalid(format!("clamp_eps must lie in (0, 1e-6], got {}", self.clamp_eps)));
        }
        Ok(())
    }

    /// Adversarial weight at training progress `progress ∈ [0, 1]`.
    pub fn lambda_at(&self, progress: f64) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Constant => self.lambda,
            LambdaSchedule::Ramp => self.lambda * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0),
        }
    }
}

/// Mean cross-entropy over the rows where `mask` is true.
pub fn classification_loss(g: &mut Graph, log_probs: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    let (n, classes) = g
        .value(log_probs)
        .dims2()
        .ok_or_else(|| Error::shape("classification_loss", "log-probs must be a matrix"))?;
    if labels.len() != n || mask.len() != n {
        return Err(Error::shape(
            "classification_loss",
            format!("{n} rows, {} labels, {} mask entries", labels.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("classification_loss: no labeled samples in batch"));
    }
    let mut weights = vec![0.0; n * classes];
    let scale = -1.0 / count as f64;
    for (i, (&label, &m)) in labels.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if label >= classes {
            return Err(Error::invalid(format!("label {label} out of range for {classes} classes")));
        }
        weights[i * classes + label] = scale;
    }
    g.weighted_sum(log_probs, weights)
}

#[derive(Clone, Copy, Debug)]
pub struct AdversarialLoss {
    pub loss: Var,
    /// No target-labeled samples were left, so the target term was dropped.
    pub degenerate: bool,
}

/// Weighted binary cross-entropy of the discriminator, see module docs.
pub fn adversarial_loss(
    g: &mut Graph,
    p_source: Var,
    domains: &[Domain],
    weights: &[f64],
    clamp_eps: f64,
) -> Result<AdversarialLoss> {
    let n = g.value(p_source).numel();
    if n == 0 || domains.is_empty() {
        return Err(Error::invalid("adversarial_loss: empty batch"));
    }
    if domains.len() != n || weights.len() != n {
        return Err(Error::shape(
            "adversarial_loss",
            format!("{n} predictions, {} domain labels, {} weights", domains.len(), weights.len()),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("adversarial_loss: weights must be positive"));
    }
    let total = |d: Domain| -> f64 { domains.iter().zip(weights).filter(|(&x, _)| x == d).map(|(_, w)| w).sum() };
    let (src_total, tgt_total) = (total(Domain::Source), total(Domain::Target));
    if src_total == 0.0 {
        return Err(Error::invalid("adversarial_loss: no source-labeled samples"));
    }

    let p = g.clamp(p_source, clamp_eps, 1.0 - clamp_eps)?;
    let log_p = g.log(p)?;
    let src_w = domains
        .iter()
        .zip(weights)
        .map(|(&d, &w)| if d == Domain::Source { -w / src_total } else { 0.0 })
        .collect();
    let src_term = g.weighted_sum(log_p, src_w)?;
    if tgt_total == 0.0 {
        return Ok(AdversarialLoss { loss: src_term, degenerate: true });
    }

    let one_minus = g.affine(p, -1.0, 1.0)?;
    let log_q = g.log(one_minus)?;
    let tgt_w = domains
        .iter()
        .zip(weights)
        .map(|(&d, &w)| if d == Domain::Target { -w / tgt_total } else { 0.0 })
        .collect();
    let tgt_term = g.weighted_sum(log_q, tgt_w)?;
    Ok(AdversarialLoss { loss: g.add(src_term, tgt_term)?, degenerate: false })
}

/// Shannon entropy (nats) of each row of a log-probability matrix.
pub fn prediction_entropy(log_probs: &[f64], classes: usize) -> Vec<f64> {
    log_probs
        .chunks(classes)
        .map(|row| -row.iter().map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp }).sum::<f64>())
        .map(|h: f64| h.max(0.0))
        .collect()
}

/// Per-sample adversarial weights, normalized to mean 1 within each domain
/// subset of the batch.
pub fn sample_weights(
    mode: ReweightMode,
    object_entropy: &[f64],
    domain_preds: &[DomainPrediction],
    domains: &[Domain],
) -> Result<Vec<f64>> {
    let n = domains.len();
    if object_entropy.len() != n || domain_preds.len() != n {
        return Err(Error::shape(
            "sample_weights",
            format!("{} entropies, {} predictions, {n} domain labels", object_entropy.len(), domain_preds.len()),
        ));
    }
    let raw: Vec<f64> = match mode {
        ReweightMode::None => return Ok(vec![1.0; n]),
        ReweightMode::Entropy => object_entropy.iter().map(|h| 1.0 + (-h).exp()).collect(),
        ReweightMode::InverseEntropy => object_entropy.iter().map(|h| 1.0 / (1.0 + (-h).exp())).collect(),
        ReweightMode::Discriminator => domain_preds
            .iter()
            .zip(domains)
            .map(|(p, &d)| if d == Domain::Source { p.p0().max(crate::models::PROB_EPS) } else { 1.0 })
            .collect(),
    };
    Ok(normalize_per_domain(raw, domains))
}

fn normalize_per_domain(mut raw: Vec<f64>, domains: &[Domain]) -> Vec<f64> {
    for d in [Domain::Source, Domain::Target] {
        let (sum, count) = raw
            .iter()
            .zip(domains)
            .filter(|(_, &x)| x == d)
            .fold((0.0, 0usize), |(s, c), (w, _)| (s + w, c + 1));
        if count == 0 {
            continue;
        }
        let mean = sum / count as f64;
        raw.iter_mut().zip(domains).filter(|(_, &x)| x == d).for_each(|(w, _)| *w /= mean);
    }
    raw
}
