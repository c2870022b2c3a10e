//! Flat `key = value` run configuration.
//!
//! Blank lines and everything after `#` are ignored. Omitted keys keep their
//! defaults, unknown keys are rejected. [`RunConfig::to_config_string`]
//! writes every key, and parsing that text gives back the same config.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::datasets::{generate_blobs, generate_moons, BlobsSpec, Dataset, MoonsSpec};
use crate::diagnostics::MmdConfig;
use crate::error::{Error, Result};
use crate::losses::{LambdaSchedule, LossConfig, ReweightMode};
use crate::models::{Conditioning, ModelSpec};
use crate::rada::RadaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Moons,
    Blobs,
    Csv,
}

impl DatasetKind {
    fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Moons => "moons",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub moons: MoonsSpec,
    pub blobs: BlobsSpec,
    /// CSV files concatenated in order when `dataset = csv`.
    pub data_csv: Vec<PathBuf>,
    /// Generator seed; `None` derives it from `seed`.
    pub data_seed: Option<u64>,

    pub extractor_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub conditioning: Conditioning,
    pub condition_detach: bool,

    pub loss: LossConfig,
    pub rada: RadaConfig,
    pub rada_enabled: bool,

    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub checkpoint_every: usize,
    pub mmd: MmdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Moons,
            moons: MoonsSpec::default(),
            blobs: BlobsSpec::default(),
            data_csv: Vec::new(),
            data_seed: None,
            extractor_widths: vec![64, 32],
            classifier_hidden: Vec::new(),
            discriminator_hidden: vec![32],
            conditioning: Conditioning::Plain,
            condition_detach: true,
            loss: LossConfig::default(),
            rada: RadaConfig::default(),
            rada_enabled: true,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 25,
            mmd: MmdConfig::default(),
        }
    }
}

/// Keys excluded from the config hash: they may change between a run and
/// its resumption.
const UNHASHED_KEYS: [&str; 3] = ["epochs", "output_dir", "checkpoint_every"];

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn positive(v: f64) -> std::result::Result<f64, String> {
    if v > 0.0 && v.is_finite() { Ok(v) } else { Err(format!("must be positive, got {v}")) }
}

fn nonnegative(v: f64) -> std::result::Result<f64, String> {
    if v >= 0.0 && v.is_finite() { Ok(v) } else { Err(format!("must be >= 0, got {v}")) }
}

fn finite(v: f64) -> std::result::Result<f64, String> {
    if v.is_finite() { Ok(v) } else { Err(format!("must be finite, got {v}")) }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "dataset" => {
                self.dataset = match v {
                    "moons" => DatasetKind::Moons,
                    "blobs" => DatasetKind::Blobs,
                    "csv" => DatasetKind::Csv,
                    _ => return Err(format!("expected moons, blobs or csv, got `{v}`")),
                }
            }
            "n_per_domain" => {
                let n: usize = parse_num(v)?;
                if n < 2 || !n.is_multiple_of(2) {
                    return Err(format!("must be even and >= 2, got {n}"));
                }
                self.moons.n_per_domain = n;
            }
            "noise" => self.moons.noise = nonnegative(parse_num(v)?)?,
            "rotation_deg" => self.moons.rotation_deg = finite(parse_num(v)?)?,
            "shift_x" => self.moons.shift[0] = finite(parse_num(v)?)?,
            "shift_y" => self.moons.shift[1] = finite(parse_num(v)?)?,
            "blob_classes" => {
                let n: usize = parse_num(v)?;
                if n < 2 {
                    return Err("need at least two classes".into());
                }
                self.blobs.num_classes = n;
            }
            "blob_n_per_class" => {
                let n: usize = parse_num(v)?;
                if n == 0 {
                    return Err("must be positive".into());
                }
                self.blobs.n_per_class_per_domain = n;
            }
            "blob_radius" => self.blobs.class_mean_radius = finite(parse_num(v)?)?,
            "blob_noise" => self.blobs.noise = nonnegative(parse_num(v)?)?,
            "blob_rotation_deg" => self.blobs.rotation_deg = finite(parse_num(v)?)?,
            "blob_scale" => self.blobs.scale = positive(parse_num(v)?)?,
            "blob_shift_x" => self.blobs.shift[0] = finite(parse_num(v)?)?,
            "blob_shift_y" => self.blobs.shift[1] = finite(parse_num(v)?)?,
            "data_csv" => {
                self.data_csv =
                    if v.is_empty() { Vec::new() } else { v.split(',').map(|s| PathBuf::from(s.trim())).collect() }
            }
            "data_seed" => self.data_seed = if v == "auto" { None } else { Some(parse_num(v)?) },
            "extractor_widths" | "classifier_hidden" | "discriminator_hidden" => {
                let widths: Vec<usize> = parse_list(v)?;
                if widths.contains(&0) {
                    return Err("widths must be positive".into());
                }
                match key {
                    "extractor_widths" if widths.is_empty() => return Err("need at least one layer".into()),
                    "extractor_widths" => self.extractor_widths = widths,
                    "classifier_hidden" => self.classifier_hidden = widths,
                    _ => self.discriminator_hidden = widths,
                }
            }
            "conditioning" => self.conditioning = v.parse()?,
            "condition_detach" => self.condition_detach = parse_bool(v)?,
            "lambda" => self.loss.lambda = nonnegative(parse_num(v)?)?,
            "lambda_schedule" => self.loss.lambda_schedule = v.parse::<LambdaSchedule>()?,
            "reweight" => self.loss.reweight = v.parse::<ReweightMode>()?,
            "clamp_eps" => {
                let eps: f64 = parse_num(v)?;
                if !(eps > 0.0 && eps <= 1e-6) {
                    return Err(format!("must lie in (0, 1e-6], got {eps}"));
                }
                self.loss.clamp_eps = eps;
            }
            "rada" => self.rada_enabled = parse_bool(v)?,
            "tau" => {
                let tau: f64 = parse_num(v)?;
                if !(tau > 0.0 && tau <= LN_2) {
                    return Err(format!("must lie in (0, ln 2 = {LN_2}], got {tau}"));
                }
                self.rada.tau = tau;
            }
            "patience" => {
                let k: usize = parse_num(v)?;
                if k == 0 {
                    return Err("must be at least 1".into());
                }
                self.rada.patience_k = k;
            }
            "epsilon_improve" => self.rada.epsilon_improve = positive(parse_num(v)?)?,
            "mixup" => self.rada.mixup_enabled = parse_bool(v)?,
            "mixup_grad_to_features" => self.rada.mixup_grad_to_features = parse_bool(v)?,
            "relabel_persistent" => self.rada.relabel_persistent = parse_bool(v)?,
            "lr" => self.learning_rate = positive(parse_num(v)?)?,
            "momentum" => {
                let m: f64 = parse_num(v)?;
                if !(0.0..1.0).contains(&m) {
                    return Err(format!("must lie in [0, 1), got {m}"));
                }
                self.momentum = m;
            }
            "epochs" => self.epochs = parse_num(v)?,
            "batch_size" => {
                let b: usize = parse_num(v)?;
                if b < 4 || !b.is_multiple_of(2) {
                    return Err(format!("must be even and >= 4, got {b}"));
                }
                self.batch_size = b;
            }
            "seed" => self.seed = parse_num(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "checkpoint_every" => {
                let n: usize = parse_num(v)?;
                if n == 0 {
                    return Err("must be positive".into());
                }
                self.checkpoint_every = n;
            }
            "mmd_multipliers" => {
                let m: Vec<f64> = parse_list(v)?;
                if m.is_empty() || m.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
                    return Err("need one or more positive multipliers".into());
                }
                self.mmd.bandwidth_multipliers = m;
            }
            "mmd_max_samples" => {
                let n: usize = parse_num(v)?;
                if n == 0 {
                    return Err("must be positive".into());
                }
                self.mmd.max_samples_per_domain = n;
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    line: line_no,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            config
                .set(key, value)
                .map_err(|msg| Error::Config { key: key.to_string(), line: line_no, msg })?;
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// `(key, value)` for every key, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let data_csv: Vec<String> = self.data_csv.iter().map(|p| p.display().to_string()).collect();
        vec![
            ("dataset", self.dataset.as_str().to_string()),
            ("n_per_domain", self.moons.n_per_domain.to_string()),
            ("noise", self.moons.noise.to_string()),
            ("rotation_deg", self.moons.rotation_deg.to_string()),
            ("shift_x", self.moons.shift[0].to_string()),
            ("shift_y", self.moons.shift[1].to_string()),
            ("blob_classes", self.blobs.num_classes.to_string()),
            ("blob_n_per_class", self.blobs.n_per_class_per_domain.to_string()),
            ("blob_radius", self.blobs.class_mean_radius.to_string()),
            ("blob_noise", self.blobs.noise.to_string()),
            ("blob_rotation_deg", self.blobs.rotation_deg.to_string()),
            ("blob_scale", self.blobs.scale.to_string()),
            ("blob_shift_x", self.blobs.shift[0].to_string()),
            ("blob_shift_y", self.blobs.shift[1].to_string()),
            ("data_csv", data_csv.join(",")),
            ("data_seed", self.data_seed.map_or("auto".to_string(), |s| s.to_string())),
            ("extractor_widths", join(&self.extractor_widths)),
            ("classifier_hidden", join(&self.classifier_hidden)),
            ("discriminator_hidden", join(&self.discriminator_hidden)),
            ("conditioning", self.conditioning.as_str().to_string()),
            ("condition_detach", self.condition_detach.to_string()),
            ("lambda", self.loss.lambda.to_string()),
            ("lambda_schedule", self.loss.lambda_schedule.as_str().to_string()),
            ("reweight", self.loss.reweight.as_str().to_string()),
            ("clamp_eps", self.loss.clamp_eps.to_string()),
            ("rada", self.rada_enabled.to_string()),
            ("tau", self.rada.tau.to_string()),
            ("patience", self.rada.patience_k.to_string()),
            ("epsilon_improve", self.rada.epsilon_improve.to_string()),
            ("mixup", self.rada.mixup_enabled.to_string()),
            ("mixup_grad_to_features", self.rada.mixup_grad_to_features.to_string()),
            ("relabel_persistent", self.rada.relabel_persistent.to_string()),
            ("lr", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("mmd_multipliers", join(&self.mmd.bandwidth_multipliers)),
            ("mmd_max_samples", self.mmd.max_samples_per_domain.to_string()),
        ]
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over every key except those that may differ on resume.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if UNHASHED_KEYS.contains(&k) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    pub fn effective_data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Generates or reads the training dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let dataset = match self.dataset {
            DatasetKind::Moons => generate_moons(&self.moons, self.effective_data_seed())?,
            DatasetKind::Blobs => generate_blobs(&self.blobs, self.effective_data_seed())?,
            DatasetKind::Csv => {
                let mut parts = self.data_csv.iter();
                let first = parts.next().ok_or_else(|| Error::invalid("dataset = csv needs data_csv"))?;
                let mut ds = Dataset::read_csv(first)?;
                for p in parts {
                    ds = ds.concat(&Dataset::read_csv(p)?)?;
                }
                ds
            }
        };
        dataset.validate_for_training()?;
        Ok(dataset)
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            extractor_widths: self.extractor_widths.clone(),
            classifier_hidden: self.classifier_hidden.clone(),
            discriminator_hidden: self.discriminator_hidden.clone(),
            num_classes,
            conditioning: self.conditioning,
            condition_detach: self.condition_detach,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.rada.validate()?;
        self.mmd.validate()?;
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("batch_size must be even and >= 4, got {}", self.batch_size)));
        }
        if self.dataset == DatasetKind::Csv && self.data_csv.is_empty() {
            return Err(Error::invalid("dataset = csv needs data_csv"));
        }
        Ok(())
    }
}
