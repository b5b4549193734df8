//! Objective terms. Every function returns a scalar tensor that stays on the
//! autograd graph of its inputs.

mod ssim;

pub use ssim::{ms_ssim, ms_ssim_loss, ssim, SsimParams, MS_SSIM_WEIGHTS};

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::data::{tile_labels, DomainLabel};
use crate::networks::{Generator, Grad};
use crate::{ops, Error, Result};

/// Weights on classification, color-cycle, MS-SSIM and identity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 1.0,
            lambda4: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("objective weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Generator-side terms. `None` marks a term that is not part of the
/// current update and contributes nothing.
#[derive(Debug, Clone, Default)]
pub struct ObjectiveTerms {
    pub lsgan_g: Option<Tensor>,
    pub cls_fake: Option<Tensor>,
    pub colorcyc: Option<Tensor>,
    pub msssim: Option<Tensor>,
    pub identity: Option<Tensor>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn finite(loss: Tensor, what: &str) -> Result<Tensor> {
    let v = ops::scalar(&loss)?;
    if !v.is_finite() {
        return Err(Error::Numerics(format!("{what} is {v}")));
    }
    Ok(loss)
}

/// Mean absolute difference over every element.
pub fn cycle_l1(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(x_hat, x, "cycle_l1")?;
    Ok((x_hat - x)?.abs()?.mean_all()?)
}

/// Sum over the three color channels of each channel's mean absolute
/// difference.
pub fn color_cycle(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(x_hat, x, "color_cycle")?;
    let (_, c, _, _) = x.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("color_cycle needs 3 channels, got {c}")));
    }
    let per_channel = (x_hat - x)?.abs()?.transpose(0, 1)?.contiguous()?.reshape((3, ()))?.mean(D::Minus1)?;
    Ok(per_channel.sum_all()?)
}

/// `mean[(real - 1)^2] + mean[fake^2]`.
pub fn lsgan_discriminator_loss(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let loss = ((real - 1.0)?.sqr()?.mean_all()? + fake.sqr()?.mean_all()?)?;
    finite(loss, "discriminator adversarial loss")
}

/// `mean[(fake - 1)^2]`.
pub fn lsgan_generator_loss(fake: &Tensor) -> Result<Tensor> {
    finite((fake - 1.0)?.sqr()?.mean_all()?, "generator adversarial loss")
}

/// Mean negative log-softmax probability of each row's target index.
/// `logits` is `(N, m)` or a single `(m,)` vector.
pub fn classification_loss_indices(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let logits = if logits.rank() == 1 { logits.unsqueeze(0)? } else { logits.clone() };
    let (n, m) = logits.dims2()?;
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows of logits", targets.len())));
    }
    if let Some(&index) = targets.iter().find(|&&t| t >= m) {
        return Err(Error::Label { index, m });
    }
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let log_z = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_p = shifted.broadcast_sub(&log_z)?;
    let mut mask = vec![0.0f32; n * m];
    for (row, &t) in targets.iter().enumerate() {
        mask[row * m + t] = 1.0;
    }
    let mask = ops::tensor_from_f32(mask, (n, m), logits.dtype())?;
    let loss = ((log_p * mask)?.sum_all()? / -(n as f64))?;
    finite(loss, "classification loss")
}

/// Classification loss against one label per row, or one label for all rows.
pub fn classification_loss(logits: &Tensor, targets: &[DomainLabel]) -> Result<Tensor> {
    let rows = if logits.rank() == 1 { 1 } else { logits.dims()[0] };
    let m = *logits.dims().last().unwrap_or(&0);
    if let Some(t) = targets.iter().find(|t| t.m() != m) {
        return Err(Error::Shape(format!("label for {} domains against {m} logits", t.m())));
    }
    let mut indices: Vec<usize> = targets.iter().map(|t| t.index()).collect();
    if indices.len() == 1 && rows > 1 {
        indices = vec![indices[0]; rows];
    }
    classification_loss_indices(logits, &indices)
}

/// `mean |G^r(x, z_x) - x|`: the reconstruction generator fed a real image
/// with its own domain label.
pub fn identity_loss(g_r: &Generator, x: &Tensor, z_x: &[DomainLabel], grad: Grad) -> Result<Tensor> {
    let labels = tile_labels(z_x, x.dtype())?;
    cycle_l1(&g_r.forward(x, &labels, grad)?, x)
}

/// `lsgan_g + l1 cls_fake + l2 colorcyc + l3 msssim + l4 identity` over the
/// terms that are present.
pub fn full_objective(terms: &ObjectiveTerms, w: &ObjectiveWeights) -> Result<Tensor> {
    let weighted = [
        ("adversarial", &terms.lsgan_g, 1.0),
        ("classification", &terms.cls_fake, w.lambda1),
        ("color cycle", &terms.colorcyc, w.lambda2),
        ("MS-SSIM", &terms.msssim, w.lambda3),
        ("identity", &terms.identity, w.lambda4),
    ];
    let mut total: Option<Tensor> = None;
    for (name, term, weight) in weighted {
        let Some(term) = term else { continue };
        let v = ops::scalar(term)?;
        if !v.is_finite() {
            return Err(Error::Numerics(format!("{name} term is {v}")));
        }
        let scaled = (term * weight)?;
        total = Some(match total {
            Some(t) => (t + scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(Error::Config("objective has no terms".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn filled(v: f64, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::full(v, shape, &Device::Cpu).unwrap()
    }

    fn val(t: Tensor) -> f64 {
        ops::scalar(&t).unwrap()
    }

    #[test]
    fn trivial_cycle_values() {
        let x = Tensor::rand(-0.5f64, 0.5, (2, 3, 8, 8), &Device::Cpu).unwrap();
        assert_eq!(val(cycle_l1(&x, &x).unwrap()), 0.0);
        assert_eq!(val(color_cycle(&x, &x).unwrap()), 0.0);
        let shifted = (&x + 0.2).unwrap();
        assert!((val(cycle_l1(&shifted, &x).unwrap()) - 0.2).abs() < 1e-12);
        let shifted = (&x + 0.3).unwrap();
        assert!((val(color_cycle(&shifted, &x).unwrap()) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn cycle_shape_errors() {
        let a = filled(0.0, (1, 3, 8, 8));
        let b = filled(0.0, (1, 3, 8, 4));
        assert!(matches!(cycle_l1(&a, &b), Err(Error::Shape(_))));
        let four = filled(0.0, (1, 4, 8, 8));
        assert!(matches!(color_cycle(&four, &four), Err(Error::Shape(_))));
    }

    #[test]
    fn lsgan_closed_forms() {
        let ones = filled(1.0, (2, 1, 4, 4));
        let zeros = filled(0.0, (2, 1, 4, 4));
        let half = filled(0.5, (2, 1, 4, 4));
        assert_eq!(val(lsgan_discriminator_loss(&ones, &zeros).unwrap()), 0.0);
        assert!((val(lsgan_discriminator_loss(&half, &half).unwrap()) - 0.5).abs() < 1e-12);
        assert_eq!(val(lsgan_generator_loss(&ones).unwrap()), 0.0);
        assert_eq!(val(lsgan_generator_loss(&zeros).unwrap()), 1.0);
        let bad = filled(f64::NAN, (1, 1, 2, 2));
        assert!(matches!(lsgan_generator_loss(&bad), Err(Error::Numerics(_))));
        assert!(matches!(lsgan_discriminator_loss(&bad, &zeros), Err(Error::Numerics(_))));
    }

    #[test]
    fn classification_closed_forms() {
        let saturated = Tensor::new(&[-20.0f64, 20.0, -20.0, -20.0], &Device::Cpu).unwrap();
        assert!(val(classification_loss_indices(&saturated, &[1]).unwrap()) < 1e-8);
        let uniform = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        let z = encode(2, 4);
        assert!((val(classification_loss(&uniform, &[z]).unwrap()) - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            classification_loss_indices(&uniform, &[0, 4, 1]),
            Err(Error::Label { index: 4, m: 4 })
        ));
    }

    fn encode(i: usize, m: usize) -> DomainLabel {
        crate::data::encode_label(i, m, 1, 1).unwrap()
    }

    #[test]
    fn objective_weighting() {
        let one = || Some(Tensor::new(1.0f64, &Device::Cpu).unwrap());
        let terms = ObjectiveTerms {
            lsgan_g: one(),
            cls_fake: one(),
            colorcyc: one(),
            msssim: one(),
            identity: one(),
        };
        let total = val(full_objective(&terms, &ObjectiveWeights::default()).unwrap());
        assert!((total - 13.5).abs() < 1e-12);
        let zero = || Some(Tensor::new(0.0f64, &Device::Cpu).unwrap());
        let zeros = ObjectiveTerms {
            lsgan_g: zero(),
            cls_fake: zero(),
            colorcyc: zero(),
            msssim: zero(),
            identity: zero(),
        };
        assert_eq!(val(full_objective(&zeros, &ObjectiveWeights::default()).unwrap()), 0.0);
        let bad = ObjectiveTerms {
            msssim: Some(Tensor::new(f64::INFINITY, &Device::Cpu).unwrap()),
            ..ObjectiveTerms::default()
        };
        assert!(matches!(full_objective(&bad, &ObjectiveWeights::default()), Err(Error::Numerics(_))));
    }

    #[test]
    fn weights_validate() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        let neg = ObjectiveWeights {
            lambda2: -1.0,
            ..ObjectiveWeights::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn ssim_identity_and_constant_images() {
        let p = SsimParams::default().with_scales(1);
        let x = Tensor::rand(-1.0f64, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
        assert!((val(ssim(&x, &x, &p).unwrap()) - 1.0).abs() < 1e-6);
        // 0.5 and 0.25 after the [0, 1] remap.
        let a = filled(0.0, (1, 3, 16, 16));
        let b = filled(-0.5, (1, 3, 16, 16));
        let expected = (0.25 + 1e-4) / (0.3125 + 1e-4);
        assert!((val(ssim(&a, &b, &p).unwrap()) - expected).abs() < 1e-9);
        assert!((expected - 0.8).abs() < 1e-3);
    }

    #[test]
    fn ms_ssim_reduces_to_ssim_with_one_scale() {
        let p = SsimParams {
            scale_weights: vec![1.0],
            ..SsimParams::default()
        };
        let a = Tensor::rand(-1.0f64, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
        let b = Tensor::rand(-1.0f64, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
        assert_eq!(val(ms_ssim(&a, &b, &p).unwrap()), val(ssim(&a, &b, &p).unwrap()));
        let big = Tensor::rand(-1.0f64, 1.0, (1, 3, 64, 64), &Device::Cpu).unwrap();
        assert!((val(ms_ssim(&big, &big, &SsimParams::desk()).unwrap()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ssim_config_errors() {
        let small = filled(0.0, (1, 3, 8, 8));
        assert!(matches!(ssim(&small, &small, &SsimParams::default()), Err(Error::Config(_))));
        let x = filled(0.0, (1, 3, 64, 64));
        assert!(matches!(ms_ssim(&x, &x, &SsimParams::full_scale()), Err(Error::Config(_))));
        let odd = filled(0.0, (1, 3, 66, 66));
        assert!(matches!(ms_ssim(&odd, &odd, &SsimParams::desk()), Err(Error::Config(_))));
        let even_window = SsimParams {
            window: 4,
            ..SsimParams::default()
        };
        assert!(even_window.validate().is_err());
    }

    #[test]
    fn desk_weights_renormalized() {
        let p = SsimParams::desk();
        assert_eq!(p.scales(), 3);
        assert!((p.scale_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.scale_weights[0] - 0.3001 / 0.6697).abs() < 1e-12);
    }
}
