use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, NamedBlob, RngState};
use super::config::RunConfig;
use crate::autodiff::{backward, Graph, ParamStore, Sgd, Tensor, Var};
use crate::datasets::{make_batches, Batch, Dataset, Domain};
use crate::diagnostics::{snapshot, MetricsRow, Snapshot};
use crate::error::{Error, Result};
use crate::losses::{adversarial_loss, classification_loss, prediction_entropy, sample_weights};
use crate::models::{classify, discriminate, discriminator_input, feature_extract, predictions, Conditioning, ModelBundle};
use crate::rada::{domain_entropy, mixing_matrix, plan_mixup, relabel_batch, select_relabels, RadaState, RelabelDecision};

/// ChaCha stream ids derived from the master seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_MIXUP: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub loss_cls: f64,
    pub loss_adv: f64,
    /// Original-target samples in the batch.
    pub targets: usize,
    /// Original-target samples trained under the source label.
    pub relabeled: usize,
    pub mixed: usize,
    /// Every target was relabeled, so the target term of the adversarial
    /// loss was dropped.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub row: MetricsRow,
    pub degenerate_batches: usize,
}

/// One training run: data, model, optimizer, controller and RNG streams.
pub struct Trainer {
    config: RunConfig,
    dataset: Dataset,
    model: ModelBundle,
    optimizer: Sgd,
    rada: RadaState,
    shuffle_rng: ChaCha8Rng,
    mixup_rng: ChaCha8Rng,
    epoch: usize,
    persistent: BTreeSet<usize>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Trainer> {
        config.validate()?;
        let dataset = config.load_dataset()?;
        Trainer::with_dataset(config, dataset)
    }

    /// Starts a fresh run on an explicit dataset, ignoring the dataset keys.
    pub fn with_dataset(config: RunConfig, dataset: Dataset) -> Result<Trainer> {
        config.validate()?;
        dataset.validate_for_training()?;
        let spec = config.model_spec(dataset.dim, dataset.num_classes);
        let model = ModelBundle::init(spec, &mut stream_rng(config.seed, STREAM_INIT))?;
        let optimizer = Sgd::new(config.learning_rate, config.momentum, &model.params)?;
        Ok(Trainer {
            shuffle_rng: stream_rng(config.seed, STREAM_SHUFFLE),
            mixup_rng: stream_rng(config.seed, STREAM_MIXUP),
            config,
            dataset,
            model,
            optimizer,
            rada: RadaState::default(),
            epoch: 0,
            persistent: BTreeSet::new(),
        })
    }

    /// Restores a run. `config` must hash like the checkpointed config;
    /// only `epochs`, `output_dir` and `checkpoint_every` may differ.
    pub fn resume(config: RunConfig, checkpoint: &Checkpoint) -> Result<Trainer> {
        config.validate()?;
        let dataset = config.load_dataset()?;
        Trainer::resume_with_dataset(config, dataset, checkpoint)
    }

    pub fn resume_with_dataset(config: RunConfig, dataset: Dataset, checkpoint: &Checkpoint) -> Result<Trainer> {
        if config.hash() != checkpoint.config_hash {
            return Err(Error::Checkpoint(
                "config does not match the checkpoint (only epochs, output_dir and checkpoint_every may change)"
                    .into(),
            ));
        }
        let mut trainer = Trainer::with_dataset(config, dataset)?;
        trainer.model = load_model(trainer.model.spec.clone(), checkpoint)?;

        let names: Vec<&str> = trainer.model.params.iter().map(|(_, p)| p.name.as_str()).collect();
        if checkpoint.velocities.len() != names.len()
            || checkpoint.velocities.iter().zip(&names).any(|(b, n)| b.name != *n)
        {
            return Err(Error::Checkpoint("velocity entries do not match the parameters".into()));
        }
        let velocities = checkpoint.velocities.iter().map(|b| b.tensor.data().to_vec()).collect();
        trainer.optimizer.set_velocities(velocities).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let [shuffle, mixup] = checkpoint.rngs.as_slice() else {
            return Err(Error::Checkpoint(format!("expected 2 rng states, found {}", checkpoint.rngs.len())));
        };
        trainer.shuffle_rng = shuffle.restore();
        trainer.mixup_rng = mixup.restore();
        trainer.rada = checkpoint.rada.clone();
        trainer.epoch = usize::try_from(checkpoint.epoch).map_err(|_| Error::Checkpoint("epoch overflow".into()))?;
        trainer.persistent = BTreeSet::new();
        for &i in &checkpoint.persistent_relabels {
            let i = i as usize;
            if trainer.dataset.domains.get(i) != Some(&Domain::Target) {
                return Err(Error::Checkpoint(format!("relabeled index {i} is not a target sample")));
            }
            trainer.persistent.insert(i);
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn model(&self) -> &ModelBundle {
        &self.model
    }

    pub fn rada_state(&self) -> &RadaState {
        &self.rada
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn evaluate(&self) -> Result<Snapshot> {
        snapshot(&self.model, &self.dataset, &self.config.mmd)
    }

    fn lambda(&self) -> f64 {
        let progress = if self.config.epochs == 0 { 0.0 } else { self.epoch as f64 / self.config.epochs as f64 };
        self.config.loss.lambda_at(progress)
    }

    /// One gradient step on `batch`.
    pub fn train_batch(&mut self, batch: &Batch, batch_index: usize) -> Result<BatchStats> {
        let cfg = &self.config;
        let model = &self.model;
        let lambda = self.lambda();
        let mut g = Graph::new();

        let x = g.constant(batch.features.clone());
        let feats = feature_extract(&mut g, model, x)?;
        let log_probs = classify(&mut g, model, feats)?;
        let d_in = discriminator_input(&mut g, model, feats, log_probs)?;
        let reversed = g.gradient_reversal(d_in, lambda)?;
        let p_real = discriminate(&mut g, model, reversed)?;
        let preds = predictions(&g, p_real);

        let targets = batch.positions(Domain::Target);
        let mut batch = batch.clone();
        if cfg.rada.relabel_persistent {
            let indices = targets.iter().copied().filter(|&i| self.persistent.contains(&batch.indices[i])).collect();
            batch = relabel_batch(&batch, &RelabelDecision { indices, entropies: Vec::new() })?;
        }
        if cfg.rada_enabled && self.rada.active {
            let candidates: Vec<usize> =
                targets.iter().copied().filter(|&i| batch.working_domains[i] == Domain::Target).collect();
            let entropies =
                candidates.iter().map(|&i| domain_entropy(preds[i].p0())).collect::<Result<Vec<f64>>>()?;
            let decision = select_relabels(&candidates, &entropies, cfg.rada.tau);
            batch = relabel_batch(&batch, &decision)?;
            if cfg.rada.relabel_persistent {
                self.persistent.extend(decision.indices.iter().map(|&i| batch.indices[i]));
            }
        }
        let relabeled: Vec<usize> =
            targets.iter().copied().filter(|&i| batch.working_domains[i] == Domain::Source).collect();

        let mut p_all = p_real;
        let mut domains = batch.working_domains.clone();
        let object_entropy = prediction_entropy(g.value(log_probs).data(), model.num_classes());
        let mut weights = sample_weights(cfg.loss.reweight, &object_entropy, &preds, &batch.working_domains)?;
        let mut mixed = 0;
        if cfg.rada.mixup_enabled && !relabeled.is_empty() {
            let pairs = plan_mixup(&batch.positions(Domain::Source), &relabeled, &mut self.mixup_rng);
            if !pairs.is_empty() {
                mixed = pairs.len();
                let m = g.constant(mixing_matrix(&pairs, batch.len())?);
                let base = if cfg.rada.mixup_grad_to_features { feats } else { g.detach(feats) };
                let mixed_feats = g.matmul(m, base)?;
                let mixed_in = match model.spec.conditioning {
                    Conditioning::Plain => mixed_feats,
                    Conditioning::Cdan => {
                        let lp = if model.spec.condition_detach { g.detach(log_probs) } else { log_probs };
                        let probs = g.exp(lp)?;
                        let mixed_probs = g.matmul(m, probs)?;
                        g.outer_flatten(mixed_feats, mixed_probs)?
                    }
                };
                let mixed_rev = g.gradient_reversal(mixed_in, lambda)?;
                let p_mixed = discriminate(&mut g, model, mixed_rev)?;
                p_all = g.concat_rows(&[p_real, p_mixed])?;
                domains.extend(std::iter::repeat_n(Domain::Source, mixed));
                weights.extend(std::iter::repeat_n(1.0, mixed));
            }
        }

        let adv = adversarial_loss(&mut g, p_all, &domains, &weights, cfg.loss.clamp_eps)?;
        let cls = classification_loss(&mut g, log_probs, &batch.class_labels, &batch.cls_mask)?;
        let total = g.add(cls, adv.loss)?;
        let stats = BatchStats {
            loss_cls: scalar(&g, cls),
            loss_adv: scalar(&g, adv.loss),
            targets: targets.len(),
            relabeled: relabeled.len(),
            mixed,
            degenerate: adv.degenerate,
        };
        if !scalar(&g, total).is_finite() {
            return Err(Error::NonFinite { epoch: self.epoch, batch: batch_index });
        }
        let grads = backward(&mut g, total, &self.model.params)?;
        self.optimizer.step(&mut self.model.params, &grads)?;
        Ok(stats)
    }

    /// Trains one epoch and returns its metrics row. `rada_active` reports
    /// the controller state in force during the epoch; the controller is
    /// updated after the row is measured.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        let batches = make_batches(&self.dataset, self.config.batch_size, &mut self.shuffle_rng)?;
        let active = self.config.rada_enabled && self.rada.active;
        let (mut cls, mut adv) = (0.0, 0.0);
        let (mut targets, mut relabeled, mut degenerate) = (0, 0, 0);
        for (b, batch) in batches.iter().enumerate() {
            let stats = self.train_batch(batch, b)?;
            cls += stats.loss_cls;
            adv += stats.loss_adv;
            targets += stats.targets;
            relabeled += stats.relabeled;
            degenerate += usize::from(stats.degenerate);
        }
        let snap = self.evaluate()?;
        let n = batches.len() as f64;
        let row = MetricsRow {
            epoch: self.epoch + 1,
            loss_cls: cls / n,
            loss_adv: adv / n,
            mean_domain_entropy: snap.mean_domain_entropy,
            mmd: snap.mmd,
            target_accuracy: snap.target_accuracy,
            relabel_fraction: if targets == 0 { 0.0 } else { relabeled as f64 / targets as f64 },
            rada_active: active,
        };
        if self.config.rada_enabled {
            self.rada.step(snap.mean_domain_entropy, &self.config.rada);
        }
        self.epoch += 1;
        Ok(EpochReport { row, degenerate_batches: degenerate })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let blobs = |values: &mut dyn Iterator<Item = (String, Tensor)>| {
            values.map(|(name, tensor)| NamedBlob { name, tensor }).collect()
        };
        let params = blobs(&mut self.model.params.iter().map(|(_, p)| (p.name.clone(), plain(&p.value))));
        let velocities = blobs(&mut self.model.params.iter().zip(self.optimizer.velocities()).map(|((_, p), v)| {
            let t = Tensor::new(p.value.shape().to_vec(), v.clone()).expect("velocity matches its parameter");
            (p.name.clone(), t)
        }));
        Checkpoint {
            config_hash: self.config.hash(),
            config_text: self.config.to_config_string(),
            epoch: self.epoch as u64,
            params,
            velocities,
            rada: self.rada.clone(),
            rngs: vec![RngState::capture(&self.shuffle_rng), RngState::capture(&self.mixup_rng)],
            persistent_relabels: self.persistent.iter().map(|&i| i as u64).collect(),
        }
    }
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

fn plain(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor")
}

/// Rebuilds a model with layout `spec` from checkpointed parameters.
pub fn load_model(spec: crate::models::ModelSpec, checkpoint: &Checkpoint) -> Result<ModelBundle> {
    let mut store = ParamStore::new();
    for b in &checkpoint.params {
        store.insert(b.name.clone(), b.tensor.clone());
    }
    ModelBundle::from_params(spec, &store).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Config and model stored in a checkpoint, with the dataset keys as saved.
pub fn model_from_checkpoint(checkpoint: &Checkpoint, input_dim: usize, num_classes: usize) -> Result<(RunConfig, ModelBundle)> {
    let config = RunConfig::parse(&checkpoint.config_text)?;
    if config.hash() != checkpoint.config_hash {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    let model = load_model(config.model_spec(input_dim, num_classes), checkpoint)?;
    Ok((config, model))
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

/// Keeps the header and the rows of epochs `1..=epoch` of an existing
/// metrics file.
fn truncated_metrics(path: &Path, epoch: usize) -> Result<String> {
    let mut out = format!("{}\n", MetricsRow::CSV_HEADER);
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(out);
    };
    for line in text.lines().skip(1) {
        let e: usize = line.split(',').next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("{}: malformed metrics row `{line}`", path.display()),
        })?;
        if e <= epoch {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Trains `config.epochs` epochs, writing `metrics.csv`, `config.txt` and
/// checkpoints into `config.output_dir`. With `resume`, training continues
/// from the checkpoint and the metrics file is continued from its epoch.
pub fn run_training(config: RunConfig, resume: Option<&Checkpoint>) -> Result<RunSummary> {
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut trainer = match resume {
        Some(c) => Trainer::resume(config, c)?,
        None => Trainer::new(config)?,
    };
    let config = trainer.config().clone();
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_config_string()).map_err(|e| Error::io(&config_path, e))?;

    let metrics_path = out.join(METRICS_FILE);
    let head = match resume {
        Some(_) => truncated_metrics(&metrics_path, trainer.epoch())?,
        None => format!("{}\n", MetricsRow::CSV_HEADER),
    };
    std::fs::write(&metrics_path, head).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics: File =
        OpenOptions::new().append(true).open(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let mut rows = Vec::new();
    while trainer.epoch() < config.epochs {
        let report = trainer.train_epoch()?;
        writeln!(metrics, "{}", report.row.to_csv_line()).map_err(|e| Error::io(&metrics_path, e))?;
        rows.push(report.row);
        let e = trainer.epoch();
        if e % config.checkpoint_every == 0 || e == config.epochs {
            let ckpt = trainer.checkpoint();
            ckpt.save(out.join(format!("checkpoint_epoch{e:04}.bin")))?;
            ckpt.save(&checkpoint_path)?;
        }
    }
    if !checkpoint_path.exists() {
        trainer.checkpoint().save(&checkpoint_path)?;
    }
    Ok(RunSummary { rows, metrics_path, checkpoint_path })
}
