//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod loss_oracles;

use g2gan::data::{synthesize_multidomain, DomainDataset, SynthSpec};
use nalgebra::DMatrix;

pub fn synth(m: usize, per_domain: usize, resolution: usize, seed: u64) -> DomainDataset {
    synthesize_multidomain(&SynthSpec {
        m,
        images_per_domain: per_domain,
        height: resolution,
        width: resolution,
        seed,
    })
    .unwrap()
}

/// Per-channel means of a CHW record.
pub fn channel_means(record: &[f32]) -> [f64; 3] {
    let plane = record.len() / 3;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = record[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
    }
    out
}

/// Nearest-centroid classifier over channel means, fitted on `train` and
/// scored on `test`.
pub fn channel_mean_centroid_accuracy(train: &DomainDataset, test: &DomainDataset) -> f64 {
    let centroids: Vec<[f64; 3]> = train
        .domains()
        .iter()
        .map(|d| {
            let mut c = [0.0; 3];
            for im in &d.images {
                let mu = channel_means(im);
                for k in 0..3 {
                    c[k] += mu[k] / d.images.len() as f64;
                }
            }
            c
        })
        .collect();
    let mut hits = 0;
    let mut total = 0;
    for (label, d) in test.domains().iter().enumerate() {
        for im in &d.images {
            let mu = channel_means(im);
            let dist = |c: &[f64; 3]| (0..3).map(|k| (mu[k] - c[k]).powi(2)).sum::<f64>();
            let best = (0..centroids.len())
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            hits += usize::from(best == label);
            total += 1;
        }
    }
    hits as f64 / total as f64
}

/// Sample mean and unbiased covariance by direct summation.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    (mean, cov / (n - 1) as f64)
}

/// Principal square root of a matrix with positive real spectrum by the
/// Denman-Beavers iteration.
pub fn sqrtm_denman_beavers(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = m.clone();
    let mut z = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..100 {
        let y_inv = y.clone().try_inverse().unwrap();
        let z_inv = z.clone().try_inverse().unwrap();
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta < 1e-14 * y.norm() {
            break;
        }
    }
    y
}

/// Frechet distance from raw feature rows through the non-symmetric
/// product `cov_a * cov_b`.
pub fn fid_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = mean_cov(a);
    let (mb, cb) = mean_cov(b);
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let root = sqrtm_denman_beavers(&(&ca * &cb));
    diff + ca.trace() + cb.trace() - 2.0 * root.trace()
}

/// Central finite-difference derivative of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Narrow networks on 32x32 inputs, for tests that train.
pub fn tiny_config() -> g2gan::trainer::TrainConfig {
    g2gan::trainer::TrainConfig {
        epochs_total: 1,
        epochs_constant_lr: 1,
        width_base: 4,
        residual_blocks: 1,
        disc_width_base: 4,
        disc_depth: 2,
        ssim: g2gan::losses::SsimParams::default().with_scales(2),
        checkpoint_every: 1,
        max_iterations: None,
        ..g2gan::trainer::TrainConfig::desk()
    }
}
