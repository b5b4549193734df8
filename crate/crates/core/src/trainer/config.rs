use serde::{Deserialize, Serialize};

use crate::losses::{ObjectiveWeights, SsimParams};
use crate::networks::{NetworkConfig, SharingMode};
use crate::{Error, Precision, Result};

use super::buffer::DEFAULT_BUFFER_CAPACITY;

/// Everything that shapes a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_total: usize,
    pub epochs_constant_lr: usize,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub sharing_mode: SharingMode,
    pub weights: ObjectiveWeights,
    pub ssim: SsimParams,
    pub use_identity: bool,
    pub use_msssim: bool,
    pub use_colorcycle: bool,
    pub use_double_discriminator: bool,
    /// Also pull `G^t(x, z_x)` towards `x` in the translator step.
    pub symmetric_identity: bool,
    pub seed: u64,
    /// Checkpoint and sample grid every this many epochs (and at the end).
    pub checkpoint_every: usize,
    /// Stop after this many iterations even mid-epoch.
    pub max_iterations: Option<usize>,
    pub precision: Precision,
    pub width_base: usize,
    pub residual_blocks: usize,
    pub disc_width_base: usize,
    pub disc_depth: usize,
    pub reconstructor_width_base: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetworkConfig::full_scale(2);
        TrainConfig {
            epochs_total: 200,
            epochs_constant_lr: 100,
            lr0: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            sharing_mode: SharingMode::None,
            weights: ObjectiveWeights::default(),
            ssim: SsimParams::full_scale(),
            use_identity: true,
            use_msssim: true,
            use_colorcycle: true,
            use_double_discriminator: false,
            symmetric_identity: false,
            seed: 0,
            checkpoint_every: 10,
            max_iterations: None,
            precision: Precision::F32,
            width_base: net.width_base,
            residual_blocks: net.residual_blocks,
            disc_width_base: net.disc_width_base,
            disc_depth: net.disc_depth,
            reconstructor_width_base: None,
        }
    }
}

impl TrainConfig {
    /// Small networks and three-scale MS-SSIM for 64x64 CPU runs, with a
    /// constant learning rate over a 2,000-iteration budget.
    pub fn desk() -> Self {
        let net = NetworkConfig::desk(2);
        TrainConfig {
            epochs_total: 3,
            epochs_constant_lr: 3,
            ssim: SsimParams::desk(),
            checkpoint_every: 1,
            max_iterations: Some(2000),
            width_base: net.width_base,
            residual_blocks: net.residual_blocks,
            disc_width_base: net.disc_width_base,
            disc_depth: net.disc_depth,
            ..TrainConfig::default()
        }
    }

    pub fn network(&self, m: usize, resolution: usize) -> NetworkConfig {
        NetworkConfig {
            m,
            resolution,
            width_base: self.width_base,
            residual_blocks: self.residual_blocks,
            disc_width_base: self.disc_width_base,
            disc_depth: self.disc_depth,
            reconstructor_width_base: self.reconstructor_width_base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_total == 0 || self.epochs_constant_lr > self.epochs_total {
            return Err(Error::Config(format!(
                "need 1 <= epochs_total and epochs_constant_lr <= epochs_total, got {} and {}",
                self.epochs_total, self.epochs_constant_lr
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        self.weights.validate()?;
        self.ssim.validate()
    }

    /// Validation that needs the dataset geometry.
    pub fn validate_for(&self, m: usize, resolution: usize) -> Result<()> {
        self.validate()?;
        self.network(m, resolution).validate()?;
        let factor = 1usize << (self.disc_depth + usize::from(self.use_double_discriminator));
        if resolution % factor != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution} is not divisible by {factor} as the discriminator depth requires"
            )));
        }
        if self.use_msssim {
            let scales = self.ssim.scales();
            let coarsest = resolution >> (scales - 1);
            if resolution % (1 << (scales - 1)) != 0 || self.ssim.window > coarsest {
                return Err(Error::Config(format!(
                    "{scales}-scale MS-SSIM with window {} does not fit {resolution}x{resolution} images",
                    self.ssim.window
                )));
            }
        }
        Ok(())
    }
}
