//! Generators, discriminator, initialization and parameter accounting.

mod discriminator;
mod generator;
pub(crate) mod layers;
mod params;

pub use discriminator::{build_discriminator, discriminate, Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use generator::{build_generator_pair, Generator, GeneratorPair};
pub use params::{count_parameters, distinct_parameters, init_weights, Grad, Param, ParamKind, Parameterized, INIT_STD};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which parameters the translation and reconstruction generators share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharingMode {
    /// One generator used for both tasks.
    Full,
    /// Encoder shared, decoders separate.
    Partial,
    /// Two independent generators.
    None,
}

impl std::str::FromStr for SharingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SharingMode::Full),
            "partial" => Ok(SharingMode::Partial),
            "none" => Ok(SharingMode::None),
            other => Err(Error::Config(format!(
                "unknown sharing mode `{other}` (expected full, partial or none)"
            ))),
        }
    }
}

impl std::fmt::Display for SharingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SharingMode::Full => "full",
            SharingMode::Partial => "partial",
            SharingMode::None => "none",
        })
    }
}

/// Layer schedule shared by the generators and the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub m: usize,
    pub resolution: usize,
    pub width_base: usize,
    pub residual_blocks: usize,
    pub disc_width_base: usize,
    pub disc_depth: usize,
    /// Width of the reconstruction generator when it differs from the
    /// translator. Only valid without sharing.
    pub reconstructor_width_base: Option<usize>,
}

impl NetworkConfig {
    /// 256x256 images, 64 base channels, 6 residual blocks, 6-stage discriminator.
    pub fn full_scale(m: usize) -> Self {
        NetworkConfig {
            m,
            resolution: 256,
            width_base: 64,
            residual_blocks: 6,
            disc_width_base: 64,
            disc_depth: 6,
            reconstructor_width_base: None,
        }
    }

    /// 64x64 images, 16 base channels, 4 residual blocks, 4-stage discriminator.
    pub fn desk(m: usize) -> Self {
        NetworkConfig {
            m,
            resolution: 64,
            width_base: 16,
            residual_blocks: 4,
            disc_width_base: 16,
            disc_depth: 4,
            reconstructor_width_base: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {}", self.m)));
        }
        if self.resolution % 4 != 0 || self.resolution < 8 {
            return Err(Error::Config(format!(
                "resolution {} must be at least 8 and divisible by 4",
                self.resolution
            )));
        }
        if self.width_base < 4 {
            return Err(Error::Config(format!("width_base {} below 4", self.width_base)));
        }
        Ok(())
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            m: self.m,
            resolution: self.resolution,
            width_base: self.disc_width_base,
            depth: self.disc_depth,
        }
    }

    /// Same discriminator topology on half-resolution input.
    pub fn half_resolution_discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            resolution: self.resolution / 2,
            ..self.discriminator()
        }
    }
}
