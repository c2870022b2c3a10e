//! Epoch-level instruments: mean domain-classification entropy, MMD between
//! source and target features, and target accuracy.
//!
//! MMD is the biased (V-statistic) estimate with a multi-scale RBF kernel
//!
//! ```text
//! k(x, y) = mean_c exp(-|x - y|² / (2 c σ²))
//! ```
//!
//! where `σ²` is the median pairwise squared distance over the pooled sample
//! (1.0 if that median is 0). Kernel values are accumulated in 2^-60
//! fixed point, so the kernel means do not depend on summation order: the
//! statistic is exactly symmetric in its arguments and exactly zero on
//! identical inputs.

use crate::autodiff::Tensor;
use crate::datasets::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::models::{Evaluation, ModelBundle};
use crate::rada::domain_entropy;

#[derive(Clone, Debug, PartialEq)]
pub struct MmdConfig {
    pub bandwidth_multipliers: Vec<f64>,
    pub max_samples_per_domain: usize,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig { bandwidth_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0], max_samples_per_domain: 1000 }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_multipliers.is_empty() {
            return Err(Error::invalid("MMD needs at least one bandwidth multiplier"));
        }
        if self.bandwidth_multipliers.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::invalid("MMD bandwidth multipliers must be positive"));
        }
        if self.max_samples_per_domain == 0 {
            return Err(Error::invalid("MMD max_samples_per_domain must be positive"));
        }
        Ok(())
    }
}

/// One epoch of diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_adv: f64,
    pub mean_domain_entropy: f64,
    pub mmd: f64,
    pub target_accuracy: f64,
    pub relabel_fraction: f64,
    pub rada_active: bool,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_cls,loss_adv,mean_domain_entropy,mmd,target_accuracy,relabel_fraction,rada_active";

    /// One CSV line (no trailing newline), floats at 9 significant digits.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            sig9(self.loss_cls),
            sig9(self.loss_adv),
            sig9(self.mean_domain_entropy),
            sig9(self.mmd),
            sig9(self.target_accuracy),
            sig9(self.relabel_fraction),
            u8::from(self.rada_active)
        )
    }
}

fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

const FIXED_SCALE: f64 = (1u64 << 60) as f64;

/// Row indices `floor(k * n / cap)` when `n > cap`, else all rows.
fn subsample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        (0..cap).map(|k| k * n / cap).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased multi-scale RBF MMD between the rows of `source` and `target`.
pub fn mmd(source: &Tensor, target: &Tensor, config: &MmdConfig) -> Result<f64> {
    config.validate()?;
    let (m_all, d) = source.dims2().ok_or_else(|| Error::shape("mmd", "source must be a matrix"))?;
    let (n_all, d2) = target.dims2().ok_or_else(|| Error::shape("mmd", "target must be a matrix"))?;
    if m_all == 0 || n_all == 0 {
        return Err(Error::invalid("mmd needs nonempty sets"));
    }
    if d != d2 {
        return Err(Error::shape("mmd", format!("feature dims {d} and {d2}")));
    }
    let rows: Vec<&[f64]> = subsample(m_all, config.max_samples_per_domain)
        .into_iter()
        .map(|i| source.row(i))
        .chain(subsample(n_all, config.max_samples_per_domain).into_iter().map(|i| target.row(i)))
        .collect();
    let m = m_all.min(config.max_samples_per_domain);
    let n = rows.len() - m;
    let total = rows.len();

    let mut dists = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        for j in i + 1..total {
            dists.push(sq_dist(rows[i], rows[j]));
        }
    }
    let sigma2 = match median(&dists) {
        med if med > 0.0 => med,
        _ => 1.0,
    };
    let mults = &config.bandwidth_multipliers;
    let n_mult = mults.len() as f64;
    let inv: Vec<f64> = mults.iter().map(|c| -1.0 / (2.0 * c * sigma2)).collect();
    // Multipliers that are the widest one over a power of two reuse its
    // exponential by repeated squaring.
    let widest = mults.iter().copied().fold(0.0, f64::max);
    let squarings: Option<Vec<u32>> = mults
        .iter()
        .map(|&c| {
            let r = widest / c;
            let k = r.log2().round();
            ((0.0..31.0).contains(&k) && (2f64.powi(k as i32) * c == widest)).then_some(k as u32)
        })
        .collect();
    let inv_widest = -1.0 / (2.0 * widest * sigma2);
    let kernel = |d2: f64| -> i128 {
        let sum: f64 = match &squarings {
            Some(ks) => {
                let u = (d2 * inv_widest).exp();
                ks.iter().map(|&k| (0..k).fold(u, |v, _| v * v)).sum()
            }
            None => inv.iter().map(|s| (d2 * s).exp()).sum(),
        };
        (sum / n_mult * FIXED_SCALE).round() as i128
    };

    let one = FIXED_SCALE as i128;
    let (mut kss, mut ktt, mut kst) = (one * m as i128, one * n as i128, 0i128);
    let mut pos = 0;
    for i in 0..total {
        for j in i + 1..total {
            let k = kernel(dists[pos]);
            pos += 1;
            match (i < m, j < m) {
                (true, true) => kss += 2 * k,
                (false, false) => ktt += 2 * k,
                _ => kst += k,
            }
        }
    }
    let (mf, nf) = (m as f64, n as f64);
    let mean = |sum: i128, count: f64| sum as f64 / FIXED_SCALE / count;
    let mmd2 = mean(kss, mf * mf) + mean(ktt, nf * nf) - 2.0 * mean(kst, mf * nf);
    Ok(mmd2.max(0.0).sqrt())
}

/// Median of `values` (mean of the two middle values for even counts).
fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if values.len() % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn evaluate_all(model: &ModelBundle, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::invalid("diagnostics need a nonempty dataset"));
    }
    model.evaluate(&dataset.features_tensor()?)
}

fn entropy_of(ev: &Evaluation) -> Result<f64> {
    let mut sum = 0.0;
    for p in &ev.predictions {
        sum += domain_entropy(p.p0())?;
    }
    Ok(sum / ev.predictions.len() as f64)
}

fn accuracy_of(ev: &Evaluation, dataset: &Dataset) -> Result<f64> {
    let targets = dataset.indices_of(Domain::Target);
    if targets.is_empty() {
        return Err(Error::invalid("target accuracy needs target samples"));
    }
    let correct = targets.iter().filter(|&&i| argmax(ev.log_probs.row(i)) == dataset.class_labels[i]).count();
    Ok(correct as f64 / targets.len() as f64)
}

fn mmd_of(ev: &Evaluation, dataset: &Dataset, config: &MmdConfig) -> Result<f64> {
    let pick = |domain| -> Result<Tensor> {
        let idx = dataset.indices_of(domain);
        if idx.is_empty() {
            return Err(Error::invalid(format!("mmd needs {domain:?} samples")));
        }
        let cols = ev.features.cols();
        let data = idx.iter().flat_map(|&i| ev.features.row(i).iter().copied()).collect();
        Tensor::matrix(idx.len(), cols, data)
    };
    mmd(&pick(Domain::Source)?, &pick(Domain::Target)?, config)
}

/// Mean binary entropy of the discriminator over every sample of `dataset`,
/// regardless of domain label.
pub fn mean_domain_entropy(model: &ModelBundle, dataset: &Dataset) -> Result<f64> {
    entropy_of(&evaluate_all(model, dataset)?)
}

/// Fraction of target samples whose argmax class matches the evaluation label.
pub fn target_accuracy(model: &ModelBundle, dataset: &Dataset) -> Result<f64> {
    accuracy_of(&evaluate_all(model, dataset)?, dataset)
}

/// MMD between the extracted source and target features.
pub fn feature_mmd(model: &ModelBundle, dataset: &Dataset, config: &MmdConfig) -> Result<f64> {
    mmd_of(&evaluate_all(model, dataset)?, dataset, config)
}

/// Model-dependent epoch diagnostics from a single inference pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snapshot {
    pub mean_domain_entropy: f64,
    pub mmd: f64,
    pub target_accuracy: f64,
}

pub fn snapshot(model: &ModelBundle, dataset: &Dataset, config: &MmdConfig) -> Result<Snapshot> {
    let ev = evaluate_all(model, dataset)?;
    Ok(Snapshot {
        mean_domain_entropy: entropy_of(&ev)?,
        mmd: mmd_of(&ev, dataset, config)?,
        target_accuracy: accuracy_of(&ev, dataset)?,
    })
}
