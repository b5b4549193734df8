//! Optimization loop: replay buffer, Adam, learning-rate schedule, the
//! three-phase step, checkpoints and the epoch driver.

mod adam;
mod buffer;
mod checkpoint;
mod config;
mod fit;
mod schedule;
mod step;

pub use adam::{Adam, Moments, ADAM_EPS};
pub use buffer::{ImageBuffer, DEFAULT_BUFFER_CAPACITY};
pub use checkpoint::{
    checkpoint_name, load_checkpoint, load_generators, save_checkpoint, seed_generators, GeneratorCheckpoint,
};
pub use config::TrainConfig;
pub use fit::{fit, sample_grid, sample_grid_name, FitCallback, FitOptions, MetricsRecorder, METRICS_FILE};
pub use schedule::lr_at_epoch;
pub use step::{
    average_terms, discriminator_terms, generator_terms, Batch, GradAudit, NetworkGrad, Phase, RunningAverages,
    StepMetrics, TermGrad, Trainer, METRIC_KEYS,
};
