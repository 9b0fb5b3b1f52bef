//! Training, evaluation, checkpoints and the model assembly.

mod checkpoint;
mod config;
mod metrics;
mod model;
mod optim;
mod train;

pub use checkpoint::{from_bytes, load_checkpoint, read_manifest, save_checkpoint, to_bytes, Manifest, ParamEntry, MAGIC, VERSION};
pub use config::{FactEncoderKind, TrainConfig};
pub use metrics::{ClassScores, MetricsReport};
pub use model::{argmax, FactEncoder, Forward, KnowledgeBranch, Layout, Model, PreparedFact, Prediction};
pub use optim::Adam;
pub use train::{batch_gradients, evaluate, mean_loss, train, EpochLog, Evaluation, TrainOutcome};
