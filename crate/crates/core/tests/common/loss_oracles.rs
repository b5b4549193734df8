//! Scalar reference versions of every loss, written directly from their
//! definitions with plain loops over `f64` slices in NCHW order.

use candle_core::{DType, Device, Tensor, Var};
use g2gan::losses::{
    classification_loss_indices, color_cycle, cycle_l1, lsgan_discriminator_loss, lsgan_generator_loss, ms_ssim,
    ms_ssim_loss, ssim, SsimParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn tensor(&self, data: &[f64]) -> Tensor {
        Tensor::from_vec(data.to_vec(), (self.n, self.c, self.h, self.w), &Device::Cpu).unwrap()
    }
}

pub fn value(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn cycle_l1_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn color_cycle_oracle(a: &[f64], b: &[f64], d: Dims) -> f64 {
    let plane = d.h * d.w;
    let mut total = 0.0;
    for ch in 0..d.c {
        let mut sum = 0.0;
        for img in 0..d.n {
            let start = (img * d.c + ch) * plane;
            for k in start..start + plane {
                sum += (a[k] - b[k]).abs();
            }
        }
        total += sum / (d.n * plane) as f64;
    }
    total
}

pub fn lsgan_d_oracle(real: &[f64], fake: &[f64]) -> f64 {
    real.iter().map(|r| (r - 1.0) * (r - 1.0)).sum::<f64>() / real.len() as f64
        + fake.iter().map(|f| f * f).sum::<f64>() / fake.len() as f64
}

pub fn lsgan_g_oracle(fake: &[f64]) -> f64 {
    fake.iter().map(|f| (f - 1.0) * (f - 1.0)).sum::<f64>() / fake.len() as f64
}

pub fn classification_oracle(logits: &[f64], m: usize, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.chunks(m).zip(targets) {
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / targets.len() as f64
}

fn window_weights(p: &SsimParams) -> Vec<f64> {
    let k = p.window;
    let centre = (k / 2) as f64;
    let g: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * p.sigma * p.sigma)).exp())
        .collect();
    let mut w = Vec::with_capacity(k * k);
    for u in 0..k {
        for v in 0..k {
            w.push(g[u] * g[v]);
        }
    }
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Mean over valid windows of the full SSIM map and of the contrast-structure
/// map, for one `[0, 1]` plane pair.
fn plane_ssim(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams) -> (f64, f64) {
    let k = p.window;
    let weights = window_weights(p);
    let (mut ssim_sum, mut cs_sum, mut count) = (0.0, 0.0, 0usize);
    for i in 0..=h - k {
        for j in 0..=w - k {
            let at = |u: usize, v: usize| (i + u) * w + j + v;
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for u in 0..k {
                for v in 0..k {
                    mu_a += weights[u * k + v] * a[at(u, v)];
                    mu_b += weights[u * k + v] * b[at(u, v)];
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..k {
                for v in 0..k {
                    let (da, db) = (a[at(u, v)] - mu_a, b[at(u, v)] - mu_b);
                    var_a += weights[u * k + v] * da * da;
                    var_b += weights[u * k + v] * db * db;
                    cov += weights[u * k + v] * da * db;
                }
            }
            let (sd_a, sd_b) = (var_a.sqrt(), var_b.sqrt());
            let l = (2.0 * mu_a * mu_b + p.c1) / (mu_a * mu_a + mu_b * mu_b + p.c1);
            let c = (2.0 * sd_a * sd_b + p.c2) / (var_a + var_b + p.c2);
            let s = (cov + p.c3) / (sd_a * sd_b + p.c3);
            let cs = c.powf(p.beta) * s.powf(p.gamma);
            ssim_sum += l.powf(p.alpha) * cs;
            cs_sum += cs;
            count += 1;
        }
    }
    (ssim_sum / count as f64, cs_sum / count as f64)
}

fn unit_planes(x: &[f64], d: Dims) -> Vec<Vec<f64>> {
    x.chunks(d.h * d.w).map(|p| p.iter().map(|v| (v + 1.0) / 2.0).collect()).collect()
}

fn pool(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w / 4);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let s = plane[2 * i * w + 2 * j]
                + plane[2 * i * w + 2 * j + 1]
                + plane[(2 * i + 1) * w + 2 * j]
                + plane[(2 * i + 1) * w + 2 * j + 1];
            out.push(s / 4.0);
        }
    }
    out
}

pub fn ssim_oracle(a: &[f64], b: &[f64], d: Dims, p: &SsimParams) -> f64 {
    let (pa, pb) = (unit_planes(a, d), unit_planes(b, d));
    pa.iter().zip(&pb).map(|(x, y)| plane_ssim(x, y, d.h, d.w, p).0).sum::<f64>() / pa.len() as f64
}

pub fn ms_ssim_oracle(a: &[f64], b: &[f64], d: Dims, p: &SsimParams) -> f64 {
    let (pa, pb) = (unit_planes(a, d), unit_planes(b, d));
    let scales = p.scale_weights.len();
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let (mut x, mut y, mut h, mut w) = (x.clone(), y.clone(), d.h, d.w);
        let mut product = 1.0;
        for (j, &weight) in p.scale_weights.iter().enumerate() {
            let (full, cs) = plane_ssim(&x, &y, h, w, p);
            let base = if j + 1 == scales { full } else { cs };
            assert!(base > 0.0, "oracle inputs must keep every scale positive");
            product *= base.powf(weight);
            x = pool(&x, h, w);
            y = pool(&y, h, w);
            h /= 2;
            w /= 2;
        }
        total += product;
    }
    total / pa.len() as f64
}

pub fn uniform(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random image in [-1, 1] and a noisy copy of it, so that structure
/// terms stay positive at every scale.
pub fn correlated_pair(rng: &mut ChaCha8Rng, d: Dims) -> (Vec<f64>, Vec<f64>) {
    let a = uniform(rng, d.len(), -1.0, 1.0);
    let b = a
        .iter()
        .map(|v| (0.7 * v + rng.random_range(-0.3..0.3)).clamp(-1.0, 1.0))
        .collect();
    (a, b)
}

/// Parameter sets the oracle suite sweeps: the defaults with a small
/// window, and one where the contrast and structure terms do not merge.
pub fn ssim_variants() -> Vec<SsimParams> {
    let small = SsimParams {
        window: 5,
        ..SsimParams::default()
    };
    let split = SsimParams {
        c3: 2e-3,
        window: 5,
        ..SsimParams::default()
    };
    vec![small.clone().with_scales(1), small.with_scales(2), split.with_scales(2)]
}

/// Largest absolute deviation from the oracle for each loss over `cases`
/// random inputs per loss.
pub fn oracle_deviations(cases: usize) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = vec![
        ("ssim", 0.0f64),
        ("ms_ssim", 0.0),
        ("cycle_l1", 0.0),
        ("color_cycle", 0.0),
        ("lsgan_d", 0.0),
        ("lsgan_g", 0.0),
        ("classification", 0.0),
    ];
    let mut note = |k: usize, got: f64, want: f64| worst[k].1 = worst[k].1.max((got - want).abs());
    let variants = ssim_variants();
    for case in 0..cases {
        let d = Dims {
            n: 1 + case % 2,
            c: 3,
            h: [12, 16][case % 2],
            w: [16, 12][(case / 2) % 2],
        };
        let (a, b) = correlated_pair(&mut rng, d);
        let (ta, tb) = (d.tensor(&a), d.tensor(&b));
        let p = &variants[case % variants.len()];
        let single = p.clone().with_scales(1);
        note(0, value(&ssim(&ta, &tb, &single).unwrap()), ssim_oracle(&a, &b, d, &single));
        let sq = Dims { h: 16, w: 16, ..d };
        let (a2, b2) = correlated_pair(&mut rng, sq);
        note(
            1,
            value(&ms_ssim(&sq.tensor(&a2), &sq.tensor(&b2), p).unwrap()),
            ms_ssim_oracle(&a2, &b2, sq, p),
        );
        note(2, value(&cycle_l1(&ta, &tb).unwrap()), cycle_l1_oracle(&a, &b));
        note(3, value(&color_cycle(&ta, &tb).unwrap()), color_cycle_oracle(&a, &b, d));

        let pd = Dims { c: 1, h: 4, w: 4, ..d };
        let real = uniform(&mut rng, pd.len(), -2.0, 2.0);
        let fake = uniform(&mut rng, pd.len(), -2.0, 2.0);
        note(
            4,
            value(&lsgan_discriminator_loss(&pd.tensor(&real), &pd.tensor(&fake)).unwrap()),
            lsgan_d_oracle(&real, &fake),
        );
        note(5, value(&lsgan_generator_loss(&pd.tensor(&fake)).unwrap()), lsgan_g_oracle(&fake));

        let (n, m) = (1 + case % 4, 2 + case % 6);
        let logits = uniform(&mut rng, n * m, -8.0, 8.0);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let t = Tensor::from_vec(logits.clone(), (n, m), &Device::Cpu).unwrap();
        note(
            6,
            value(&classification_loss_indices(&t, &targets).unwrap()),
            classification_oracle(&logits, m, &targets),
        );
    }
    worst
}

/// Largest deviation from the exact value over the identity cases.
pub fn identity_deviation(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d = Dims { n: 2, c: 3, h: 16, w: 16 };
    let mut worst = 0.0f64;
    for case in 0..cases {
        let x = uniform(&mut rng, d.len(), -1.0, 1.0);
        let t = d.tensor(&x);
        let p = &ssim_variants()[case % 3];
        for (got, want) in [
            (value(&ssim(&t, &t, &p.clone().with_scales(1)).unwrap()), 1.0),
            (value(&ms_ssim(&t, &t, p).unwrap()), 1.0),
            (value(&ms_ssim_loss(&t, &t, p).unwrap()), 0.0),
            (value(&cycle_l1(&t, &t).unwrap()), 0.0),
            (value(&color_cycle(&t, &t).unwrap()), 0.0),
            (value(&lsgan_generator_loss(&t.ones_like().unwrap()).unwrap()), 0.0),
            (
                value(&lsgan_discriminator_loss(&t.ones_like().unwrap(), &t.zeros_like().unwrap()).unwrap()),
                0.0,
            ),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

/// Largest `|color_cycle - 3 cycle_l1|` over random three-channel pairs.
pub fn color_cycle_identity_gap(pairs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..pairs {
        let d = Dims {
            n: 1 + case % 3,
            c: 3,
            h: 4 + case % 5,
            w: 4 + case % 7,
        };
        let a = uniform(&mut rng, d.len(), -1.0, 1.0);
        let b = uniform(&mut rng, d.len(), -1.0, 1.0);
        let (ta, tb) = (d.tensor(&a), d.tensor(&b));
        let gap = value(&color_cycle(&ta, &tb).unwrap()) - 3.0 * value(&cycle_l1(&ta, &tb).unwrap());
        worst = worst.max(gap.abs());
    }
    worst
}

/// `|analytic - numeric| / max(|analytic|, |numeric|)` in the Euclidean
/// norm, with central differences of step `h`.
pub fn gradient_error(f: &dyn Fn(&Tensor) -> Tensor, x: &[f64], shape: &[usize], h: f64) -> f64 {
    let var = Var::from_vec(x.to_vec(), shape, &Device::Cpu).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let analytic: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let eval = |v: &[f64]| value(&f(&Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()));
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| super::central_difference(&eval, x, i, h))
        .collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm(&analytic).max(norm(&numeric)).max(1e-300)
}

/// Relative gradient error of each differentiable loss on 16x16 inputs.
pub fn gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Dims { n: 1, c: 3, h: 16, w: 16 };
    let shape = [d.n, d.c, d.h, d.w];
    let (x, y) = correlated_pair(&mut rng, d);
    let target = d.tensor(&x);
    let mut out = Vec::new();

    let two_scale = SsimParams {
        window: 7,
        ..SsimParams::default()
    }
    .with_scales(2);
    let three_scale = SsimParams {
        window: 3,
        ..SsimParams::default()
    }
    .with_scales(3);
    for (name, p) in [("ms_ssim_loss (2 scales)", two_scale), ("ms_ssim_loss (3 scales)", three_scale)] {
        let f = |t: &Tensor| ms_ssim_loss(t, &target, &p).unwrap();
        out.push((name, gradient_error(&f, &y, &shape, 1e-5)));
    }
    let f = |t: &Tensor| color_cycle(t, &target).unwrap();
    out.push(("color_cycle", gradient_error(&f, &y, &shape, 1e-5)));

    let patch = [2, 1, 4, 4];
    let real_fake = uniform(&mut rng, 64, -2.0, 2.0);
    let f = |t: &Tensor| {
        let real = t.narrow(0, 0, 1).unwrap();
        let fake = t.narrow(0, 1, 1).unwrap();
        lsgan_discriminator_loss(&real, &fake).unwrap()
    };
    out.push(("lsgan_d", gradient_error(&f, &real_fake, &patch, 1e-5)));
    let f = |t: &Tensor| lsgan_generator_loss(t).unwrap();
    out.push(("lsgan_g", gradient_error(&f, &real_fake, &patch, 1e-5)));

    let logits = uniform(&mut rng, 4 * 7, -4.0, 4.0);
    let f = |t: &Tensor| classification_loss_indices(t, &[0, 6, 3, 3]).unwrap();
    out.push(("classification", gradient_error(&f, &logits, &[4, 7], 1e-5)));
    out
}
