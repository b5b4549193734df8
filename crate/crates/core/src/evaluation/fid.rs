use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::FeatureEmbedder;
use crate::{Error, Result};

/// Mean and unbiased covariance of a feature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Accumulates in input order, so the result is bit-for-bit reproducible.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::Eval("no features to summarize".into()));
    }
    if n < d + 1 {
        return Err(Error::Eval(format!(
            "{n} samples cannot support a {d}-dimensional covariance (need at least {})",
            d + 1
        )));
    }
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Eval("feature vectors differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("non-finite feature value".into()));
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= (n - 1) as f64;
    Ok(GaussianStats { mean, cov, count: n })
}

/// Square root of a symmetric positive semidefinite matrix, with negative
/// eigenvalues from rounding clipped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians. The trace of the square root of
/// `cov_a * cov_b` is taken through the symmetric product
/// `sqrt(cov_a) * cov_b * sqrt(cov_a)`, which has the same eigenvalues.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Eval(format!(
            "feature dimensions differ: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let root_a = psd_sqrt(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let trace_root: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let diff = &a.mean - &b.mean;
    let value = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
    if !value.is_finite() {
        return Err(Error::Numerics("FID is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// FID between two image sets under one embedder.
pub fn fid(embedder: &dyn FeatureEmbedder, real: &[&[f32]], fake: &[&[f32]]) -> Result<f64> {
    let need = embedder.dim() + 1;
    for (side, n) in [("real", real.len()), ("generated", fake.len())] {
        if n < need {
            return Err(Error::Eval(format!(
                "FID needs at least {need} {side} images for a {}-dimensional embedding, got {n}",
                embedder.dim()
            )));
        }
    }
    let a = gaussian_stats(&embedder.embed(real)?)?;
    let b = gaussian_stats(&embedder.embed(fake)?)?;
    frechet_distance(&a, &b)
}
