use candle_core::{DType, Tensor};

use super::layers::{Conv2d, ConvSpec};
use super::params::{Grad, Param, Parameterized};
use crate::data::ImageTensor;
use crate::{ops, Error, Result};

const LEAKY_SLOPE: f64 = 0.01;

/// Patch discriminator with a source head `D_s` (one raw score per patch)
/// and a domain-classification head `D_c` (`m` logits per image).
#[derive(Debug, Clone)]
pub struct Discriminator {
    trunk: Vec<Conv2d>,
    source_head: Conv2d,
    class_head: Conv2d,
    m: usize,
    resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub m: usize,
    pub resolution: usize,
    pub width_base: usize,
    pub depth: usize,
}

/// Source scores `(N, 1, h, w)` and class logits `(N, m)`.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub patch_map: Tensor,
    pub class_logits: Tensor,
}

/// Builds `depth` stride-2 4x4 convolutions doubling channels from
/// `width_base`, leaky ReLU 0.01 and no normalization, then a 3x3 source
/// head and a class head whose kernel spans the remaining map.
pub fn build_discriminator(cfg: &DiscriminatorConfig, prefix: &str, dtype: DType) -> Result<Discriminator> {
    if cfg.m < 2 {
        return Err(Error::Config(format!("need at least 2 domains, got {}", cfg.m)));
    }
    if cfg.depth == 0 || cfg.width_base == 0 {
        return Err(Error::Config("discriminator depth and width must be positive".into()));
    }
    let factor = 1usize << cfg.depth;
    if cfg.resolution % factor != 0 || cfg.resolution < factor {
        return Err(Error::Config(format!(
            "resolution {} is not divisible by 2^{} = {factor}",
            cfg.resolution, cfg.depth
        )));
    }
    let trunk = (0..cfg.depth)
        .map(|i| {
            let c_in = if i == 0 { 3 } else { cfg.width_base << (i - 1) };
            Conv2d::new(
                &format!("{prefix}.trunk.{i}"),
                ConvSpec {
                    c_in,
                    c_out: cfg.width_base << i,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                    bias: true,
                },
                dtype,
            )
        })
        .collect::<Result<_>>()?;
    let top = cfg.width_base << (cfg.depth - 1);
    let source_head = Conv2d::new(
        &format!("{prefix}.source"),
        ConvSpec {
            c_in: top,
            c_out: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: false,
        },
        dtype,
    )?;
    let class_head = Conv2d::new(
        &format!("{prefix}.class"),
        ConvSpec {
            c_in: top,
            c_out: cfg.m,
            kernel: cfg.resolution / factor,
            stride: 1,
            padding: 0,
            bias: false,
        },
        dtype,
    )?;
    Ok(Discriminator {
        trunk,
        source_head,
        class_head,
        m: cfg.m,
        resolution: cfg.resolution,
    })
}

impl Discriminator {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<DiscriminatorOutput> {
        let (n, c, h, w) = x.dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::Shape(format!(
                "discriminator expects (N, 3, {r}, {r}), got {:?}",
                x.dims(),
                r = self.resolution
            )));
        }
        let mut h = x.clone();
        for conv in &self.trunk {
            h = ops::leaky_relu(&conv.forward(&h, grad)?, LEAKY_SLOPE)?;
        }
        Ok(DiscriminatorOutput {
            patch_map: self.source_head.forward(&h, grad)?,
            class_logits: self.class_head.forward(&h, grad)?.reshape((n, self.m))?,
        })
    }
}

/// Scores a batch without recording gradients.
pub fn discriminate(d: &Discriminator, x: &ImageTensor) -> Result<DiscriminatorOutput> {
    d.forward(x, Grad::Frozen)
}

impl Parameterized for Discriminator {
    fn parameters(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for c in &self.trunk {
            c.params(&mut out);
        }
        self.source_head.params(&mut out);
        self.class_head.params(&mut out);
        out
    }
}
