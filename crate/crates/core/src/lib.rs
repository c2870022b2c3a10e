//! Adversarial domain adaptation with domain relabeling, on a small
//! reverse-mode autodiff engine.
//!
//! The pieces, bottom-up: [`autodiff`] (tensors, graph, SGD), [`models`]
//! (extractor, classifier, discriminator), [`losses`], [`rada`] (entropy
//! controller, relabeling, mixup), [`datasets`], [`diagnostics`] and
//! [`harness`] (config, training loop, checkpoints).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod rada;

pub use autodiff::{backward, Gradients, Graph, OpKind, ParamId, ParamStore, Sgd, Tensor, Var};
pub use datasets::{generate_blobs, generate_moons, make_batches, Batch, BlobsSpec, Dataset, Domain, MoonsSpec};
pub use diagnostics::{mmd, MetricsRow, MmdConfig, Snapshot};
pub use error::{Error, Result};
pub use harness::{Checkpoint, RunConfig, Trainer};
pub use losses::{LambdaSchedule, LossConfig, ReweightMode};
pub use models::{Conditioning, DomainPrediction, ModelBundle, ModelSpec};
pub use rada::{RadaConfig, RadaState, RelabelDecision};
