//! Re-energizing the domain discriminator by relabeling well-aligned target
//! samples as source.
//!
//! A target sample whose domain prediction has binary entropy above `tau` is
//! ambiguous to the discriminator and is treated as source for the current
//! mini-batch. Relabeling switches on once the epoch-mean entropy has failed
//! to improve for `patience_k` epochs. Optionally each relabeled feature is
//! mixed with a random original-source feature of the same batch; the mixture
//! is labeled source and only enters the adversarial loss.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::datasets::{Batch, Domain};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadaConfig {
    /// Entropy threshold; samples strictly above it are relabeled.
    pub tau: f64,
    /// Epochs without improvement before relabeling starts.
    pub patience_k: usize,
    /// Dead-band for counting an epoch as an improvement.
    pub epsilon_improve: f64,
    pub mixup_enabled: bool,
    /// Let gradients flow from mixed features back into the extractor.
    pub mixup_grad_to_features: bool,
    /// Experimental: keep relabeled samples relabeled for the rest of training.
    pub relabel_persistent: bool,
}

impl Default for RadaConfig {
    fn default() -> Self {
        RadaConfig {
            tau: 0.35,
            patience_k: 5,
            epsilon_improve: 1e-3,
            mixup_enabled: true,
            mixup_grad_to_features: true,
            relabel_persistent: false,
        }
    }
}

impl RadaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= LN_2) {
            return Err(Error::invalid(format!("tau must lie in (0, ln 2], got {}", self.tau)));
        }
        if self.patience_k == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.epsilon_improve > 0.0) || !self.epsilon_improve.is_finite() {
            return Err(Error::invalid(format!("epsilon_improve must be positive, got {}", self.epsilon_improve)));
        }
        Ok(())
    }
}

/// Epoch-level activation memory.
#[derive(Clone, Debug, PartialEq)]
pub struct RadaState {
    pub active: bool,
    pub best_entropy: f64,
    pub plateau_counter: usize,
    pub entropy_history: Vec<f64>,
}

impl Default for RadaState {
    fn default() -> Self {
        RadaState { active: false, best_entropy: f64::INFINITY, plateau_counter: 0, entropy_history: Vec::new() }
    }
}

impl RadaState {
    /// Records one epoch's mean domain entropy. An epoch improves when its
    /// entropy is below `best - epsilon_improve`; otherwise the plateau
    /// counter grows and, once it reaches `patience_k`, relabeling turns on
    /// for good.
    pub fn step(&mut self, epoch_mean_entropy: f64, config: &RadaConfig) {
        self.entropy_history.push(epoch_mean_entropy);
        if epoch_mean_entropy < self.best_entropy - config.epsilon_improve {
            self.best_entropy = epoch_mean_entropy;
            self.plateau_counter = 0;
        } else {
            self.plateau_counter += 1;
        }
        if self.plateau_counter >= config.patience_k {
            self.active = true;
        }
    }
}

pub fn controller_step(epoch_mean_entropy: f64, state: &RadaState, config: &RadaConfig) -> RadaState {
    let mut next = state.clone();
    next.step(epoch_mean_entropy, config);
    next
}

/// Binary entropy in nats of a prediction with target probability `p0`,
/// using `0 log 0 = 0`.
pub fn domain_entropy(p0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::invalid(format!("probability {p0} outside [0, 1]")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    Ok((term(p0) + term(1.0 - p0)).clamp(0.0, LN_2))
}

/// Target samples of one batch chosen for relabeling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelabelDecision {
    /// Batch positions to relabel, ascending.
    pub indices: Vec<usize>,
    /// Entropy of every candidate, aligned with the candidate list.
    pub entropies: Vec<f64>,
}

impl RelabelDecision {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Picks every candidate whose entropy is strictly above `tau`.
/// `candidates[k]` is the batch position that `entropies[k]` belongs to.
pub fn select_relabels(candidates: &[usize], entropies: &[f64], tau: f64) -> RelabelDecision {
    debug_assert_eq!(candidates.len(), entropies.len());
    let mut indices: Vec<usize> =
        candidates.iter().zip(entropies).filter(|(_, &h)| h > tau).map(|(&i, _)| i).collect();
    indices.sort_unstable();
    RelabelDecision { indices, entropies: entropies.to_vec() }
}

/// Switches the working label of the chosen samples to source. Class labels
/// and the classification mask are untouched.
pub fn relabel_batch(batch: &Batch, decision: &RelabelDecision) -> Result<Batch> {
    let mut out = batch.clone();
    for &i in &decision.indices {
        match batch.original_domains.get(i) {
            None => return Err(Error::invalid(format!("relabel index {i} out of range for batch of {}", batch.len()))),
            Some(Domain::Source) => return Err(Error::invalid(format!("relabel index {i} is a source sample"))),
            Some(Domain::Target) => out.working_domains[i] = Domain::Source,
        }
    }
    Ok(out)
}

/// One mixup draw: `alpha * source_row + (1 - alpha) * relabeled_row`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixPair {
    pub source_row: usize,
    pub relabeled_row: usize,
    pub alpha: f64,
}

/// One pair per relabeled row; partners are drawn uniformly with replacement
/// from `source_rows` and `alpha ~ U(0, 1)`. Empty if either side is empty.
pub fn plan_mixup<R: Rng>(source_rows: &[usize], relabeled_rows: &[usize], rng: &mut R) -> Vec<MixPair> {
    if source_rows.is_empty() {
        return Vec::new();
    }
    relabeled_rows
        .iter()
        .map(|&relabeled_row| {
            let source_row = source_rows[rng.random_range(0..source_rows.len())];
            let alpha: f64 = rng.random();
            MixPair { source_row, relabeled_row, alpha }
        })
        .collect()
}

/// `pairs.len() × n_rows` matrix whose product with a feature matrix yields
/// the mixed features; keeps mixing differentiable inside a graph.
pub fn mixing_matrix(pairs: &[MixPair], n_rows: usize) -> Result<Tensor> {
    let mut data = vec![0.0; pairs.len() * n_rows];
    for (k, p) in pairs.iter().enumerate() {
        if p.source_row >= n_rows || p.relabeled_row >= n_rows {
            return Err(Error::invalid(format!("mix pair {p:?} outside {n_rows} rows")));
        }
        data[k * n_rows + p.source_row] += p.alpha;
        data[k * n_rows + p.relabeled_row] += 1.0 - p.alpha;
    }
    Tensor::matrix(pairs.len(), n_rows, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub feature: Vec<f64>,
    /// Always [`Domain::Source`]; mixed samples carry no class label.
    pub domain: Domain,
    pub pair: MixPair,
}

/// Mixes each relabeled feature row with a random original-source row.
/// `pair.source_row` / `pair.relabeled_row` index the two input matrices.
pub fn mixup_features<R: Rng>(source_feats: &Tensor, relabeled_feats: &Tensor, rng: &mut R) -> Result<Vec<MixedSample>> {
    let (ns, ds) = source_feats.dims2().unwrap_or((0, 0));
    let (nr, dr) = relabeled_feats.dims2().unwrap_or((0, 0));
    if ns == 0 || nr == 0 {
        return Ok(Vec::new());
    }
    if ds != dr {
        return Err(Error::shape("mixup_features", format!("feature dims {ds} and {dr}")));
    }
    let sources: Vec<usize> = (0..ns).collect();
    let relabeled: Vec<usize> = (0..nr).collect();
    Ok(plan_mixup(&sources, &relabeled, rng)
        .into_iter()
        .map(|pair| {
            let a = source_feats.row(pair.source_row);
            let b = relabeled_feats.row(pair.relabeled_row);
            let feature = a.iter().zip(b).map(|(&x, &y)| pair.alpha * x + (1.0 - pair.alpha) * y).collect();
            MixedSample { feature, domain: Domain::Source, pair }
        })
        .collect())
}
