//! Synthetic domain-shift generators, the CSV interchange format and
//! mini-batching with per-sample domain labels.
//!
//! CSV layout: a header `domain,label,f0,f1,...,f{d-1}` followed by one row
//! per sample. `domain` is `s` or `t`, `label` a nonnegative integer, features
//! are decimal floats written with 17 significant digits. Lines end in `\n`
//! and nothing is quoted.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "s",
            Domain::Target => "t",
        }
    }
}

/// Samples of both domains. Target class labels are kept for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    pub class_labels: Vec<usize>,
    pub domains: Vec<Domain>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        class_labels: Vec<usize>,
        domains: Vec<Domain>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = class_labels.len();
        if domains.len() != n || features.len() != n * dim {
            return Err(Error::invalid(format!(
                "dataset arrays disagree: {n} labels, {} domains, {} feature values for dim {dim}",
                domains.len(),
                features.len()
            )));
        }
        if let Some(&bad) = class_labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::invalid(format!("class label {bad} >= num_classes {num_classes}")));
        }
        Ok(Dataset { dim, features, class_labels, domains, num_classes })
    }

    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn indices_of(&self, domain: Domain) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domains[i] == domain).collect()
    }

    /// Feature rows at `indices` as an `indices.len() × dim` tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), self.dim, data)
    }

    pub fn features_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim, self.features.clone())
    }

    /// Training needs samples of both domains and at least two classes.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dataset has no feature columns"));
        }
        for d in [Domain::Source, Domain::Target] {
            if !self.domains.contains(&d) {
                return Err(Error::invalid(format!("dataset has no {d:?} samples")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("dataset needs at least two classes"));
        }
        Ok(())
    }

    /// Appends the samples of `other` (same feature dimension).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::invalid(format!("feature dimensions differ: {} vs {}", self.dim, other.dim)));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.class_labels.extend_from_slice(&other.class_labels);
        out.domains.extend_from_slice(&other.domains);
        out.num_classes = self.num_classes.max(other.num_classes);
        Ok(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("domain,label");
        for j in 0..self.dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{}", self.domains[i].tag(), self.class_labels[i]);
            for v in self.row(i) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV layout. `num_classes` is one more than the largest label.
    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let mut lines = text.split('\n');
        let header = match lines.next() {
            Some(h) if !h.trim().is_empty() => h.trim_end_matches('\r'),
            _ => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
        };
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "domain" || cols[1] != "label" {
            return Err(Error::Parse { line: 1, msg: format!("expected header `domain,label,f0,...`, got `{header}`") });
        }
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(Error::Parse { line: 1, msg: format!("expected column `f{j}`, got `{c}`") });
            }
        }
        let dim = cols.len() - 2;

        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, got {}", dim + 2, fields.len()),
                });
            }
            domains.push(match fields[0] {
                "s" => Domain::Source,
                "t" => Domain::Target,
                other => return Err(Error::Parse { line: line_no, msg: format!("unknown domain tag `{other}`") }),
            });
            labels.push(
                fields[1]
                    .parse::<usize>()
                    .map_err(|_| Error::Parse { line: line_no, msg: format!("bad label `{}`", fields[1]) })?,
            );
            for f in &fields[2..] {
                let v: f64 =
                    f.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("non-numeric field `{f}`") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line: line_no, msg: format!("non-finite field `{f}`") });
                }
                features.push(v);
            }
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::new(dim, features, labels, domains, num_classes)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv_str(&text)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoonsSpec {
    pub n_per_domain: usize,
    pub noise: f64,
    pub rotation_deg: f64,
    pub shift: [f64; 2],
}

impl Default for MoonsSpec {
    fn default() -> Self {
        MoonsSpec { n_per_domain: 1000, noise: 0.1, rotation_deg: 45.0, shift: [0.5, 0.0] }
    }
}

fn rotate(p: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma {sigma}: {e}")))
}

/// Two interleaved half circles. The target domain is an independent draw
/// from the source distribution, rotated about the origin and then shifted.
/// Source rows come first; within a domain class 0 precedes class 1.
pub fn generate_moons(spec: &MoonsSpec, seed: u64) -> Result<Dataset> {
    let n = spec.n_per_domain;
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("n_per_domain must be even and >= 2, got {n}")));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::invalid(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let noise = normal(spec.noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut features = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(2 * n);
    let mut domains = Vec::with_capacity(2 * n);

    for domain in [Domain::Source, Domain::Target] {
        for class in 0..2 {
            for k in 0..half {
                let t = if half > 1 { std::f64::consts::PI * k as f64 / (half - 1) as f64 } else { 0.0 };
                let base = if class == 0 { [t.cos(), t.sin()] } else { [1.0 - t.cos(), 0.5 - t.sin()] };
                let mut p = [base[0] + noise.sample(&mut rng), base[1] + noise.sample(&mut rng)];
                if domain == Domain::Target {
                    p = rotate(p, spec.rotation_deg);
                    p = [p[0] + spec.shift[0], p[1] + spec.shift[1]];
                }
                features.extend_from_slice(&p);
                labels.push(class);
                domains.push(domain);
            }
        }
    }
    Dataset::new(2, features, labels, domains, 2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobsSpec {
    pub num_classes: usize,
    pub n_per_class_per_domain: usize,
    pub class_mean_radius: f64,
    pub noise: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    pub shift: [f64; 2],
}

impl Default for BlobsSpec {
    fn default() -> Self {
        BlobsSpec {
            num_classes: 3,
            n_per_class_per_domain: 300,
            class_mean_radius: 2.0,
            noise: 0.5,
            rotation_deg: 30.0,
            scale: 1.0,
            shift: [0.5, 0.0],
        }
    }
}

impl BlobsSpec {
    /// Class means of `domain`: source means sit on a circle, target means are
    /// their image under `x -> scale * R(rotation) x + shift`.
    pub fn class_means(&self, domain: Domain) -> Vec<[f64; 2]> {
        (0..self.num_classes)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / self.num_classes as f64;
                let m = [self.class_mean_radius * angle.cos(), self.class_mean_radius * angle.sin()];
                match domain {
                    Domain::Source => m,
                    Domain::Target => {
                        let r = rotate(m, self.rotation_deg);
                        [self.scale * r[0] + self.shift[0], self.scale * r[1] + self.shift[1]]
                    }
                }
            })
            .collect()
    }
}

/// Isotropic Gaussian blobs per class, one set per domain.
pub fn generate_blobs(spec: &BlobsSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::invalid("blobs need at least two classes"));
    }
    if spec.n_per_class_per_domain == 0 {
        return Err(Error::invalid("blobs need at least one sample per class"));
    }
    if !(spec.noise >= 0.0) || !(spec.scale > 0.0) || !spec.class_mean_radius.is_finite() {
        return Err(Error::invalid("blobs need noise >= 0, scale > 0 and a finite radius"));
    }
    let noise = normal(spec.noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        for (class, mean) in spec.class_means(domain).into_iter().enumerate() {
            for _ in 0..spec.n_per_class_per_domain {
                features.push(mean[0] + noise.sample(&mut rng));
                features.push(mean[1] + noise.sample(&mut rng));
                labels.push(class);
                domains.push(domain);
            }
        }
    }
    Dataset::new(2, features, labels, domains, spec.num_classes)
}

/// A mini-batch with original and working (relabelable) domain labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Dataset row of every batch position.
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub class_labels: Vec<usize>,
    pub original_domains: Vec<Domain>,
    pub working_domains: Vec<Domain>,
    /// True exactly for originally-source samples.
    pub cls_mask: Vec<bool>,
}

impl Batch {
    pub fn from_indices(dataset: &Dataset, indices: Vec<usize>) -> Result<Batch> {
        let features = dataset.gather(&indices)?;
        let class_labels = indices.iter().map(|&i| dataset.class_labels[i]).collect();
        let original_domains: Vec<Domain> = indices.iter().map(|&i| dataset.domains[i]).collect();
        let cls_mask = original_domains.iter().map(|&d| d == Domain::Source).collect();
        Ok(Batch { indices, features, class_labels, working_domains: original_domains.clone(), original_domains, cls_mask })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Batch positions whose original label is `domain`.
    pub fn positions(&self, domain: Domain) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.original_domains[i] == domain).collect()
    }

    pub fn count_working(&self, domain: Domain) -> usize {
        self.working_domains.iter().filter(|&&d| d == domain).count()
    }
}

/// One epoch of batches. Source and target index lists are shuffled
/// independently; each batch takes `batch_size / 2` from each domain, the
/// shorter domain cycling through its shuffled list. The number of batches is
/// `ceil(longer / (batch_size / 2))`; the final batch carries the remainder of
/// the longer domain and the same number of shorter-domain samples.
pub fn make_batches<R: Rng>(dataset: &Dataset, batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size < 4 || !batch_size.is_multiple_of(2) {
        return Err(Error::invalid(format!("batch size must be even and >= 4, got {batch_size}")));
    }
    let mut source = dataset.indices_of(Domain::Source);
    let mut target = dataset.indices_of(Domain::Target);
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("make_batches needs samples of both domains"));
    }
    source.shuffle(rng);
    target.shuffle(rng);

    let half = batch_size / 2;
    let longer = source.len().max(target.len());
    let num_batches = longer.div_ceil(half);
    let pick = |list: &[usize], pos: usize| list[pos % list.len()];
    (0..num_batches)
        .map(|b| {
            let start = b * half;
            let take = half.min(longer - start);
            let mut indices = Vec::with_capacity(2 * take);
            indices.extend((start..start + take).map(|p| pick(&source, p)));
            indices.extend((start..start + take).map(|p| pick(&target, p)));
            Batch::from_indices(dataset, indices)
        })
        .collect()
}
