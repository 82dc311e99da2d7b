//! Optimizer, schedule and the two-phase adversarial training loop.

pub mod config;
mod heap;
pub mod data;
pub mod radam;
pub mod synth;
pub mod trainer;

pub use config::{lr_at, TrainConfig};
pub use data::{Batch, Corpus, CorpusItem};
pub use radam::{Moments, Radam};
pub use synth::Vocoder;
pub use trainer::{read_metrics, train_loop, Phase, StepMetrics, Trainer, METRICS_FILE};
