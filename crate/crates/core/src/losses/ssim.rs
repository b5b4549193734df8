//! Structural similarity and its multi-scale product form.
//!
//! Inputs live in `[-1, 1]` and are remapped to `[0, 1]` so the stabilizing
//! constants assume unit dynamic range. Statistics are Gaussian-weighted over
//! valid (unpadded) windows, per channel.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::{ops, Error, Result};

/// Canonical five-scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Per-window exponents on luminance, contrast and structure.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Odd Gaussian window size and its standard deviation.
    pub window: usize,
    pub sigma: f64,
    /// One exponent per scale, finest first. The last one also weights
    /// luminance at the coarsest scale.
    pub scale_weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        let c2 = 0.03f64.powi(2);
        SsimParams {
            c1: 0.01f64.powi(2),
            c2,
            c3: c2 / 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: 11,
            sigma: 1.5,
            scale_weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl SsimParams {
    /// Five scales, for 256x256 inputs.
    pub fn full_scale() -> Self {
        Self::default()
    }

    /// Three scales with the coarsest three canonical weights renormalized,
    /// so an 11-pixel window still fits the 16x16 coarsest level of a 64x64
    /// input.
    pub fn desk() -> Self {
        Self::default().with_scales(3)
    }

    /// Keeps the last `scales` canonical weights, renormalized to sum to one.
    pub fn with_scales(mut self, scales: usize) -> Self {
        let scales = scales.clamp(1, MS_SSIM_WEIGHTS.len());
        let tail = &MS_SSIM_WEIGHTS[MS_SSIM_WEIGHTS.len() - scales..];
        let sum: f64 = tail.iter().sum();
        self.scale_weights = tail.iter().map(|w| w / sum).collect();
        self
    }

    pub fn scales(&self) -> usize {
        self.scale_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.c1, self.c2, self.c3, self.alpha, self.beta, self.gamma, self.sigma];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("SSIM constants, exponents and sigma must be positive".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("SSIM window {} must be odd", self.window)));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config("MS-SSIM needs at least one positive scale weight".into()));
        }
        Ok(())
    }

    /// Whether `c * s` collapses to `(2 cov + C2) / (var_a + var_b + C2)`.
    fn combined_contrast_structure(&self) -> bool {
        self.beta == self.gamma && (self.c3 - self.c2 / 2.0).abs() <= 1e-15 * self.c2.max(1.0)
    }

    /// Normalized 1-D Gaussian taps.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

struct ScaleStats {
    /// Per `(image, channel)` mean of `l^alpha c^beta s^gamma`.
    ssim: Tensor,
    /// Per `(image, channel)` mean of `c^beta s^gamma`.
    cs: Tensor,
}

fn check_inputs(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("SSIM inputs differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(a.dims4()?)
}

fn gaussian_filter(x: &Tensor, taps: &Tensor) -> Result<Tensor> {
    let k = taps.elem_count();
    let h = ops::conv2d(x, &taps.reshape((1, 1, 1, k))?, 1, 0)?;
    ops::conv2d(&h, &taps.reshape((1, 1, k, 1))?, 1, 0)
}

/// Pows with exponent one skipped; other exponents clamp the base to a
/// small positive floor so fractional powers stay real.
fn pow_weight(x: &Tensor, exponent: f64) -> Result<Tensor> {
    if exponent == 1.0 {
        Ok(x.clone())
    } else {
        Ok(x.clamp(1e-6, f64::INFINITY)?.powf(exponent)?)
    }
}

/// Inputs are `[0, 1]` images reshaped to `(N*C, 1, H, W)`.
fn scale_stats(a: &Tensor, b: &Tensor, p: &SsimParams, taps: &Tensor) -> Result<ScaleStats> {
    let mu_a = gaussian_filter(a, taps)?;
    let mu_b = gaussian_filter(b, taps)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let var_a = (gaussian_filter(&a.sqr()?, taps)? - &mu_aa)?;
    let var_b = (gaussian_filter(&b.sqr()?, taps)? - &mu_bb)?;
    let cov = (gaussian_filter(&(a * b)?, taps)? - &mu_ab)?;

    let luminance = ((mu_ab * 2.0)? + p.c1)?.div(&((mu_aa + mu_bb)? + p.c1)?)?;
    let cs = if p.combined_contrast_structure() {
        let cs = ((cov * 2.0)? + p.c2)?.div(&((&var_a + &var_b)? + p.c2)?)?;
        pow_weight(&cs, p.beta)?
    } else {
        let sd_a = (var_a.relu()? + 1e-12)?.sqrt()?;
        let sd_b = (var_b.relu()? + 1e-12)?.sqrt()?;
        let sd_ab = (&sd_a * &sd_b)?;
        let contrast = ((&sd_ab * 2.0)? + p.c2)?.div(&((var_a + var_b)? + p.c2)?)?;
        let structure = (cov + p.c3)?.div(&(sd_ab + p.c3)?)?;
        (pow_weight(&contrast, p.beta)? * pow_weight(&structure, p.gamma)?)?
    };
    let ssim_map = (pow_weight(&luminance, p.alpha)? * &cs)?;
    let nc = a.dims()[0];
    Ok(ScaleStats {
        ssim: ssim_map.reshape((nc, ()))?.mean(D::Minus1)?,
        cs: cs.reshape((nc, ()))?.mean(D::Minus1)?,
    })
}

fn prepare(x_hat: &Tensor, x: &Tensor, p: &SsimParams, scales: usize) -> Result<(Tensor, Tensor, Tensor)> {
    p.validate()?;
    let (n, c, h, w) = check_inputs(x_hat, x)?;
    let factor = 1usize << (scales - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!(
            "{h}x{w} input is not divisible by 2^{} for {scales} scales",
            scales - 1
        )));
    }
    if p.window > h.min(w) / factor {
        return Err(Error::Config(format!(
            "window {} does not fit the {}x{} coarsest scale",
            p.window,
            h / factor,
            w / factor
        )));
    }
    let to_unit = |t: &Tensor| -> Result<Tensor> { Ok(((t + 1.0)? * 0.5)?.reshape((n * c, 1, h, w))?) };
    let taps = Tensor::from_vec(p.gaussian_taps(), p.window, x.device())?.to_dtype(x.dtype())?;
    Ok((to_unit(x_hat)?, to_unit(x)?, taps))
}

/// Mean SSIM over all windows, channels and images.
pub fn ssim(x_hat: &Tensor, x: &Tensor, p: &SsimParams) -> Result<Tensor> {
    let (a, b, taps) = prepare(x_hat, x, p, 1)?;
    Ok(scale_stats(&a, &b, p, &taps)?.ssim.mean_all()?)
}

/// Product over scales of the mean contrast-structure term raised to its
/// scale weight, with the full SSIM term at the coarsest scale, averaged
/// over images and channels. Scales are separated by 2x2 average pooling.
pub fn ms_ssim(x_hat: &Tensor, x: &Tensor, p: &SsimParams) -> Result<Tensor> {
    let scales = p.scales();
    if scales == 0 {
        return Err(Error::Config("MS-SSIM needs at least one scale".into()));
    }
    let (mut a, mut b, taps) = prepare(x_hat, x, p, scales)?;
    let mut product: Option<Tensor> = None;
    for (j, &weight) in p.scale_weights.iter().enumerate() {
        let stats = scale_stats(&a, &b, p, &taps)?;
        let term = if j + 1 == scales {
            pow_weight(&stats.ssim, weight)?
        } else {
            a = ops::avg_pool2(&a)?;
            b = ops::avg_pool2(&b)?;
            pow_weight(&stats.cs, weight)?
        };
        product = Some(match product {
            Some(acc) => (acc * term)?,
            None => term,
        });
    }
    Ok(product.expect("at least one scale").mean_all()?)
}

/// `1 - ms_ssim`, zero for a perfect reconstruction.
pub fn ms_ssim_loss(x_hat: &Tensor, x: &Tensor, p: &SsimParams) -> Result<Tensor> {
    Ok(ms_ssim(x_hat, x, p)?.affine(-1.0, 1.0)?)
}
