//! Model assembly, loss, training, evaluation, checkpoints, data plumbing
//! and the oracle suite behind the CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod inspect;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint};
pub use config::{AblationFlags, AggregatorSharing, Dataset, HeadActivation, ModelConfig};
pub use data::{preprocess, DataDir, DataMeta, PreprocessOptions};
pub use inspect::{export_selection_weights, SelectionRecord};
pub use metrics::{batch_loss, bucket_bounds, bucket_index, rank_of, recall_at_n_k, random_scores, MetricsReport};
pub use model::{Architecture, Forward, Model};
pub use train::{evaluate_report, evaluate_samples, train, EpochRecord, History, TrainOptions};
