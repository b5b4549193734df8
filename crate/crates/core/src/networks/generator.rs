use std::sync::Arc;

use candle_core::{DType, Tensor};

use super::layers::{Conv2d, ConvNormRelu, ConvSpec, ResidualBlock, UpNormRelu};
use super::params::{Grad, Param, Parameterized};
use super::{NetworkConfig, SharingMode};
use crate::data::{tile_labels, DomainLabel, ImageTensor};
use crate::{Error, Result};

/// Down-sampling stem plus residual trunk. Everything up to and including
/// the last residual block.
#[derive(Debug)]
pub struct Encoder {
    stem: ConvNormRelu,
    down: Vec<ConvNormRelu>,
    blocks: Vec<ResidualBlock>,
}

impl Encoder {
    fn new(prefix: &str, m: usize, width: usize, residual_blocks: usize, dtype: DType) -> Result<Self> {
        let stem = ConvNormRelu::new(
            &format!("{prefix}.stem"),
            ConvSpec {
                c_in: 3 + m,
                c_out: width,
                kernel: 7,
                stride: 1,
                padding: 3,
                bias: false,
            },
            dtype,
        )?;
        let down = (0..2)
            .map(|i| {
                ConvNormRelu::new(
                    &format!("{prefix}.down.{i}"),
                    ConvSpec {
                        c_in: width << i,
                        c_out: width << (i + 1),
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                        bias: false,
                    },
                    dtype,
                )
            })
            .collect::<Result<_>>()?;
        let blocks = (0..residual_blocks)
            .map(|i| ResidualBlock::new(&format!("{prefix}.res.{i}"), 4 * width, dtype))
            .collect::<Result<_>>()?;
        Ok(Encoder { stem, down, blocks })
    }

    fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        let mut h = self.stem.forward(x, grad)?;
        for d in &self.down {
            h = d.forward(&h, grad)?;
        }
        for b in &self.blocks {
            h = b.forward(&h, grad)?;
        }
        Ok(h)
    }

    fn params(&self, out: &mut Vec<Param>) {
        self.stem.params(out);
        for d in &self.down {
            d.params(out);
        }
        for b in &self.blocks {
            b.params(out);
        }
    }
}

/// Up-sampling path and the RGB output layer.
#[derive(Debug)]
pub struct Decoder {
    up: Vec<UpNormRelu>,
    head: Conv2d,
}

impl Decoder {
    fn new(prefix: &str, width: usize, dtype: DType) -> Result<Self> {
        let up = (0..2)
            .map(|i| UpNormRelu::new(&format!("{prefix}.up.{i}"), width << (2 - i), width << (1 - i), dtype))
            .collect::<Result<_>>()?;
        let head = Conv2d::new(
            &format!("{prefix}.head"),
            ConvSpec {
                c_in: width,
                c_out: 3,
                kernel: 7,
                stride: 1,
                padding: 3,
                bias: false,
            },
            dtype,
        )?;
        Ok(Decoder { up, head })
    }

    fn forward(&self, h: &Tensor, grad: Grad) -> Result<Tensor> {
        let mut h = h.clone();
        for u in &self.up {
            h = u.forward(&h, grad)?;
        }
        Ok(self.head.forward(&h, grad)?.tanh()?)
    }

    fn params(&self, out: &mut Vec<Param>) {
        for u in &self.up {
            u.params(out);
        }
        self.head.params(out);
    }
}

/// Residual encoder-decoder conditioned on a tiled domain label.
/// Maps `(N, 3 + m, H, W)` to `(N, 3, H, W)` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Generator {
    encoder: Arc<Encoder>,
    decoder: Arc<Decoder>,
    m: usize,
    resolution: usize,
    dtype: DType,
}

impl Generator {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn encoder_params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        self.encoder.params(&mut out);
        out
    }

    pub fn decoder_params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        self.decoder.params(&mut out);
        out
    }

    /// Forward pass on raw tensors: `x (N, 3, H, W)`, `labels (N, m, H, W)`.
    pub fn forward(&self, x: &Tensor, labels: &Tensor, grad: Grad) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (ln, lm, lh, lw) = labels.dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::Shape(format!(
                "generator expects (N, 3, {r}, {r}) input, got {:?}",
                x.dims(),
                r = self.resolution
            )));
        }
        if (ln, lm, lh, lw) != (n, self.m, h, w) {
            return Err(Error::Shape(format!(
                "label tiles {:?} do not match input {:?} with m = {}",
                labels.dims(),
                x.dims(),
                self.m
            )));
        }
        let input = Tensor::cat(&[x, labels], 1)?;
        let features = self.encoder.forward(&input, grad)?;
        self.decoder.forward(&features, grad)
    }

    /// Translates every image in `x` to domain `z`.
    pub fn translate(&self, x: &ImageTensor, z: &DomainLabel) -> Result<ImageTensor> {
        let labels = tile_labels(&vec![*z; x.batch()], x.dtype())?;
        Ok(ImageTensor::trusted(self.forward(x, &labels, Grad::Frozen)?))
    }

    /// Translates image `i` of `x` to `labels[i]`.
    pub fn translate_each(&self, x: &ImageTensor, labels: &[DomainLabel]) -> Result<ImageTensor> {
        if labels.len() != x.batch() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                x.batch()
            )));
        }
        let labels = tile_labels(labels, x.dtype())?;
        Ok(ImageTensor::trusted(self.forward(x, &labels, Grad::Frozen)?))
    }

    pub fn shares_encoder_with(&self, other: &Generator) -> bool {
        Arc::ptr_eq(&self.encoder, &other.encoder)
    }

    pub fn shares_decoder_with(&self, other: &Generator) -> bool {
        Arc::ptr_eq(&self.decoder, &other.decoder)
    }
}

impl Parameterized for Generator {
    fn parameters(&self) -> Vec<Param> {
        let mut out = self.encoder_params();
        self.decoder.params(&mut out);
        out
    }
}

/// Translation generator `G^t` and reconstruction generator `G^r`.
#[derive(Debug, Clone)]
pub struct GeneratorPair {
    pub translator: Generator,
    pub reconstructor: Generator,
    pub mode: SharingMode,
    pub m: usize,
    pub width_base: usize,
}

impl Parameterized for GeneratorPair {
    fn parameters(&self) -> Vec<Param> {
        super::params::distinct_parameters(&[&self.translator, &self.reconstructor])
    }
}

/// Builds both generators with the sharing scheme applied at the
/// encoder/decoder boundary after the last residual block.
pub fn build_generator_pair(cfg: &NetworkConfig, mode: SharingMode, dtype: DType) -> Result<GeneratorPair> {
    cfg.validate()?;
    let rec_width = cfg.reconstructor_width_base.unwrap_or(cfg.width_base);
    if rec_width != cfg.width_base && mode != SharingMode::None {
        return Err(Error::Config(
            "a distinct reconstructor width needs sharing mode `none`".into(),
        ));
    }
    if rec_width < 4 {
        return Err(Error::Config(format!("reconstructor width {rec_width} below 4")));
    }
    let enc = |prefix: &str, width: usize| -> Result<Arc<Encoder>> {
        Ok(Arc::new(Encoder::new(
            &format!("{prefix}.encoder"),
            cfg.m,
            width,
            cfg.residual_blocks,
            dtype,
        )?))
    };
    let dec = |prefix: &str, width: usize| -> Result<Arc<Decoder>> {
        Ok(Arc::new(Decoder::new(&format!("{prefix}.decoder"), width, dtype)?))
    };
    let (t_enc, r_enc) = match mode {
        SharingMode::Full | SharingMode::Partial => {
            let e = enc("shared", cfg.width_base)?;
            (e.clone(), e)
        }
        SharingMode::None => (enc("translator", cfg.width_base)?, enc("reconstructor", rec_width)?),
    };
    let (t_dec, r_dec) = match mode {
        SharingMode::Full => {
            let d = dec("shared", cfg.width_base)?;
            (d.clone(), d)
        }
        SharingMode::Partial | SharingMode::None => {
            (dec("translator", cfg.width_base)?, dec("reconstructor", rec_width)?)
        }
    };
    let make = |encoder, decoder| Generator {
        encoder,
        decoder,
        m: cfg.m,
        resolution: cfg.resolution,
        dtype,
    };
    Ok(GeneratorPair {
        translator: make(t_enc, t_dec),
        reconstructor: make(r_enc, r_dec),
        mode,
        m: cfg.m,
        width_base: cfg.width_base,
    })
}
