use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rada_core::diagnostics::snapshot;
use rada_core::harness::{load_model, run_training, Checkpoint, RunConfig};
use rada_core::{Dataset, Error};

#[derive(Parser)]
#[command(name = "rada", version, about = "Domain-adversarial training with domain relabeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset to CSV.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Train one run.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory (overrides `output_dir`).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Continue from a checkpoint. Without --config, its stored config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train once per value of one config key, one run directory per value.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Parent directory of the run directories.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Print diagnostics of a checkpointed model.
    Eval {
        checkpoint: PathBuf,
        /// Dataset CSV; defaults to the dataset described by the checkpoint's config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Dump extracted features as CSV (domain, label, f0, f1, ...).
    Features {
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file in `key = value` format.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Override any config key, e.g. `--set tau=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig, Error> {
        let mut config = match (&self.config, base) {
            (Some(path), _) => RunConfig::from_file(path)?,
            (None, Some(base)) => base,
            (None, None) => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            set(&mut config, key.trim(), value)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        Ok(config)
    }
}

fn set(config: &mut RunConfig, key: &str, value: &str) -> Result<(), Error> {
    config.set(key, value).map_err(|msg| Error::InvalidArgument(format!("{key}: {msg}")))
}

fn print_rows(rows: &[rada_core::MetricsRow]) {
    if let Some(last) = rows.last() {
        println!("{}", rada_core::MetricsRow::CSV_HEADER);
        println!("{}", last.to_csv_line());
    }
}

fn checkpoint_model(path: &Path, data: Option<&Path>) -> Result<(RunConfig, Dataset, rada_core::ModelBundle), Error> {
    let checkpoint = Checkpoint::load(path)?;
    let config = RunConfig::parse(&checkpoint.config_text)?;
    let dataset = match data {
        Some(p) => Dataset::read_csv(p)?,
        None => config.load_dataset()?,
    };
    let model = load_model(config.model_spec(dataset.dim, dataset.num_classes), &checkpoint)?;
    Ok((config, dataset, model))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { config, output } => {
            let config = config.resolve(None)?;
            config.load_dataset()?.write_csv(&output)?;
            eprintln!("wrote {}", output.display());
        }
        Command::Train { config: args, output, resume } => {
            let checkpoint = resume.as_deref().map(Checkpoint::load).transpose()?;
            let base = checkpoint.as_ref().map(|c| RunConfig::parse(&c.config_text)).transpose()?;
            let mut config = args.resolve(base)?;
            if let Some(out) = output {
                config.output_dir = out;
            }
            let summary = run_training(config, checkpoint.as_ref())?;
            print_rows(&summary.rows);
            eprintln!("metrics: {}", summary.metrics_path.display());
            eprintln!("checkpoint: {}", summary.checkpoint_path.display());
        }
        Command::Sweep { config: args, param, values, output } => {
            let base = args.resolve(None)?;
            for value in &values {
                let mut config = base.clone();
                set(&mut config, &param, value)?;
                config.output_dir = output.join(format!("{param}={value}"));
                let summary = run_training(config, None)?;
                match summary.rows.last() {
                    Some(row) => println!("{param}={value},{}", row.to_csv_line()),
                    None => println!("{param}={value}"),
                }
            }
        }
        Command::Eval { checkpoint, data } => {
            let (config, dataset, model) = checkpoint_model(&checkpoint, data.as_deref())?;
            let s = snapshot(&model, &dataset, &config.mmd)?;
            println!("mean_domain_entropy,mmd,target_accuracy");
            println!("{:.8e},{:.8e},{:.8e}", s.mean_domain_entropy, s.mmd, s.target_accuracy);
        }
        Command::Features { checkpoint, data, output } => {
            let (_, dataset, model) = checkpoint_model(&checkpoint, data.as_deref())?;
            let ev = model.evaluate(&dataset.features_tensor()?)?;
            let features = Dataset::new(
                ev.features.cols(),
                ev.features.into_data(),
                dataset.class_labels.clone(),
                dataset.domains.clone(),
                dataset.num_classes,
            )?;
            features.write_csv(&output)?;
            eprintln!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::InvalidArgument(_) | Error::Config { .. }) { 2 } else { 1 })
        }
    }
}
