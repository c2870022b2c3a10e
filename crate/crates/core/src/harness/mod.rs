//! Config parsing, training loop, metrics output and checkpointing.

pub mod checkpoint;
pub mod config;
mod trainer;

pub use checkpoint::{Checkpoint, NamedBlob, RngState, FORMAT_VERSION};
pub use config::{DatasetKind, RunConfig};
pub use trainer::{
    load_model, model_from_checkpoint, run_training, stream_rng, BatchStats, EpochReport, RunSummary, Trainer,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, STREAM_INIT, STREAM_MIXUP, STREAM_SHUFFLE,
};
