//! Alternating four-phase training of the dual-path generator and switchable
//! discriminator, with checkpoints that resume bit-exactly.

pub mod checkpoint;
pub mod config;
pub mod fit;
pub mod losses;
pub mod model;
pub mod step;

pub use checkpoint::{load_checkpoint, resolve_checkpoint, save_checkpoint, save_into};
pub use config::{ModelConfig, TrainConfig};
pub use fit::{fit, read_metrics, sample_real, FitOptions, MetricsLog};
pub use model::Model;
pub use step::{sample_angles, train_step, train_step_observed, RealBatch, StepReport, TrainState};
