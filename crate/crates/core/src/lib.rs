//! Dual-generator adversarial networks for multi-domain unpaired
//! image-to-image translation.
//!
//! A translation generator maps an image into a target domain, a separate
//! reconstruction generator maps it back, and a single patch discriminator
//! with an auxiliary domain classifier supervises every domain. The two
//! generators can share all, encoder-only, or none of their parameters.
//!
//! Module map:
//! - [`data`]: folder-per-domain ingestion, synthetic hue-rotation datasets,
//!   label encodings and unpaired sampling.
//! - [`networks`]: generators, discriminator, initialization, parameter
//!   accounting.
//! - [`losses`]: every objective term, including SSIM and MS-SSIM.
//! - [`trainer`]: replay buffer, Adam, learning-rate schedule, the
//!   three-phase training step, checkpoints.
//! - [`evaluation`]: classification accuracy, FID and the capacity table.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod ops;
pub mod trainer;

pub use error::{Error, Result};

/// Floating point precision used for network parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}
