//! Flat run configuration.
//!
//! Values are layered, lowest first: built-in defaults, the `G2GAN_SEED`
//! environment variable, a TOML file, then command-line flags. Every key
//! mirrors a field name of the training configuration where one exists.

use std::path::{Path, PathBuf};

use g2gan::data::LoadOptions;
use g2gan::evaluation::ClassifierConfig;
use g2gan::losses::{ObjectiveWeights, SsimParams, MS_SSIM_WEIGHTS};
use g2gan::networks::{NetworkConfig, SharingMode};
use g2gan::trainer::{TrainConfig, DEFAULT_BUFFER_CAPACITY};
use g2gan::Precision;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SEED_ENV: &str = "G2GAN_SEED";

/// Network size preset that the per-field overrides start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resolution: usize,
    pub max_per_domain: Option<usize>,
    /// Images per domain kept away from training for evaluation. Zero
    /// trains on everything.
    pub holdout_per_domain: usize,
    /// Checkpoint whose generator weights start the run, from any sharing
    /// mode.
    pub init_from: Option<PathBuf>,

    pub scale: Scale,
    pub width_base: Option<usize>,
    pub residual_blocks: Option<usize>,
    pub disc_width_base: Option<usize>,
    pub disc_depth: Option<usize>,
    pub reconstructor_width_base: Option<usize>,

    pub epochs_total: usize,
    /// Defaults to half of `epochs_total`, rounded up.
    pub epochs_constant_lr: Option<usize>,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub sharing_mode: SharingMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,

    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Defaults to `ssim_c2 / 2`.
    pub ssim_c3: Option<f64>,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// Defaults to the most scales whose coarsest level still holds a window.
    pub ssim_scales: Option<usize>,

    pub use_identity: bool,
    pub use_msssim: bool,
    pub use_colorcycle: bool,
    pub use_double_discriminator: bool,
    pub symmetric_identity: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub max_iterations: Option<usize>,
    pub precision: Precision,

    pub eval_epochs: usize,
    pub eval_batch_size: usize,
    pub eval_lr: f64,
    pub eval_seed: u64,
    pub eval_holdout_fraction: f64,
    pub eval_min_accuracy: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let ssim = SsimParams::default();
        let eval = ClassifierConfig::default();
        RunConfig {
            data: None,
            out: None,
            resolution: 64,
            max_per_domain: None,
            holdout_per_domain: 20,
            init_from: None,
            scale: Scale::Desk,
            width_base: None,
            residual_blocks: None,
            disc_width_base: None,
            disc_depth: None,
            reconstructor_width_base: None,
            epochs_total: train.epochs_total,
            epochs_constant_lr: None,
            lr0: train.lr0,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            batch_size: train.batch_size,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            sharing_mode: train.sharing_mode,
            lambda1: train.weights.lambda1,
            lambda2: train.weights.lambda2,
            lambda3: train.weights.lambda3,
            lambda4: train.weights.lambda4,
            ssim_c1: ssim.c1,
            ssim_c2: ssim.c2,
            ssim_c3: None,
            ssim_window: ssim.window,
            ssim_sigma: ssim.sigma,
            ssim_scales: None,
            use_identity: train.use_identity,
            use_msssim: train.use_msssim,
            use_colorcycle: train.use_colorcycle,
            use_double_discriminator: train.use_double_discriminator,
            symmetric_identity: train.symmetric_identity,
            seed: 0,
            checkpoint_every: train.checkpoint_every,
            max_iterations: None,
            precision: train.precision,
            eval_epochs: eval.epochs,
            eval_batch_size: eval.batch_size,
            eval_lr: eval.lr,
            eval_seed: eval.seed,
            eval_holdout_fraction: eval.holdout_fraction,
            eval_min_accuracy: eval.min_holdout_accuracy,
        }
    }
}

/// Largest scale count, capped at the canonical five, whose coarsest level
/// is still at least one window wide.
pub fn fitting_scales(resolution: usize, window: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .take_while(|&s| resolution % (1 << (s - 1)) == 0 && resolution >> (s - 1) >= window)
        .last()
        .unwrap_or(1)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("bad run config: {e}")))
    }

    fn network_preset(&self) -> NetworkConfig {
        match self.scale {
            Scale::Desk => NetworkConfig::desk(2),
            Scale::Full => NetworkConfig::full_scale(2),
        }
    }

    pub fn network(&self, m: usize) -> NetworkConfig {
        let base = self.network_preset();
        NetworkConfig {
            m,
            resolution: self.resolution,
            width_base: self.width_base.unwrap_or(base.width_base),
            residual_blocks: self.residual_blocks.unwrap_or(base.residual_blocks),
            disc_width_base: self.disc_width_base.unwrap_or(base.disc_width_base),
            disc_depth: self.disc_depth.unwrap_or(base.disc_depth),
            reconstructor_width_base: self.reconstructor_width_base,
        }
    }

    pub fn ssim(&self) -> SsimParams {
        let scales = self
            .ssim_scales
            .unwrap_or_else(|| fitting_scales(self.resolution, self.ssim_window));
        SsimParams {
            c1: self.ssim_c1,
            c2: self.ssim_c2,
            c3: self.ssim_c3.unwrap_or(self.ssim_c2 / 2.0),
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            ..SsimParams::default()
        }
        .with_scales(scales)
    }

    pub fn train_config(&self) -> TrainConfig {
        let net = self.network(2);
        TrainConfig {
            epochs_total: self.epochs_total,
            epochs_constant_lr: self.epochs_constant_lr.unwrap_or(self.epochs_total.div_ceil(2)),
            lr0: self.lr0,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            sharing_mode: self.sharing_mode,
            weights: ObjectiveWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                lambda4: self.lambda4,
            },
            ssim: self.ssim(),
            use_identity: self.use_identity,
            use_msssim: self.use_msssim,
            use_colorcycle: self.use_colorcycle,
            use_double_discriminator: self.use_double_discriminator,
            symmetric_identity: self.symmetric_identity,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            max_iterations: self.max_iterations,
            precision: self.precision,
            width_base: net.width_base,
            residual_blocks: net.residual_blocks,
            disc_width_base: net.disc_width_base,
            disc_depth: net.disc_depth,
            reconstructor_width_base: net.reconstructor_width_base,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.eval_epochs,
            batch_size: self.eval_batch_size,
            lr: self.eval_lr,
            seed: self.eval_seed,
            holdout_fraction: self.eval_holdout_fraction,
            min_holdout_accuracy: self.eval_min_accuracy,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            resolution: self.resolution,
            max_per_domain: self.max_per_domain,
        }
    }

    pub fn data_dir(&self) -> Result<&Path, Failure> {
        self.data
            .as_deref()
            .ok_or_else(|| Failure::usage("no dataset given (use --data or `data` in the config file)"))
    }

    pub fn out_dir(&self) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::usage("no output directory given (use --out or `out` in the config file)"))
    }
}

/// Parses one `key=value` override. The value is read as a TOML value and
/// falls back to a bare string, so `sharing_mode=full` needs no quotes.
pub fn parse_assignment(text: &str) -> Result<(String, toml::Value), Failure> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("expected KEY=VALUE, got `{text}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Failure::usage(format!("empty key in `{text}`")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

/// Merges the layers and deserializes the result. `file` is read from disk;
/// nothing is written.
pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: toml::Table) -> Result<RunConfig, Failure> {
    let mut table = toml::Table::new();
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV}={seed} is not a non-negative integer")))?;
        table.insert("seed".into(), seed_value(seed)?);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let layer: toml::Table =
            toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        table.extend(layer);
    }
    table.extend(flags);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::usage(format!("bad run config: {e}")))
}

/// TOML integers are signed 64-bit.
pub fn seed_value(seed: u64) -> Result<toml::Value, Failure> {
    i64::try_from(seed)
        .map(toml::Value::Integer)
        .map_err(|_| Failure::usage(format!("seed {seed} does not fit a signed 64-bit integer")))
}
