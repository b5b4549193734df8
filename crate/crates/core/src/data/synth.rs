use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_size, color, Domain, DomainDataset, Pairing};
use crate::{Error, Result};

/// Parameters of a synthetic hue-rotation dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub images_per_domain: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// Generates `images_per_domain` base scenes (textured background plus a
/// few flat shapes, all hues inside a narrow band around red) and derives
/// domain `k` by rotating every hue by `k / m` turns. Scene `i` appears at
/// index `i` in every domain, which is recorded as the pairing.
pub fn synthesize_multidomain(spec: &SynthSpec) -> Result<DomainDataset> {
    if spec.m < 2 {
        return Err(Error::Config(format!("need at least 2 domains, got {}", spec.m)));
    }
    if spec.images_per_domain == 0 {
        return Err(Error::Config("images_per_domain must be at least 1".into()));
    }
    check_image_size(spec.height, spec.width)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let band = 0.3 / spec.m as f32;
    let bases: Vec<Vec<f32>> = (0..spec.images_per_domain)
        .map(|_| base_scene(&mut rng, spec.height, spec.width, band))
        .collect();

    let domains = (0..spec.m)
        .map(|k| {
            let images = if k == 0 {
                bases.clone()
            } else {
                let turns = k as f32 / spec.m as f32;
                bases
                    .iter()
                    .map(|b| color::rotate_hue(b, spec.height, spec.width, turns))
                    .collect()
            };
            Domain {
                name: format!("hue{k:02}"),
                images,
            }
        })
        .collect::<Vec<_>>();
    let pairing = Pairing {
        domain_order: domains.iter().map(|d| d.name.clone()).collect(),
        pairs: (0..spec.images_per_domain).map(|i| vec![i; spec.m]).collect(),
    };
    DomainDataset::new(domains, spec.height, spec.width, Some(pairing))
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Triangle { p: [(f32, f32); 3] },
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle { p } => {
                let edge = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let d0 = edge(p[0], p[1]);
                let d1 = edge(p[1], p[2]);
                let d2 = edge(p[2], p[0]);
                let neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(neg && pos)
            }
        }
    }
}

fn base_scene(rng: &mut ChaCha8Rng, height: usize, width: usize, band: f32) -> Vec<f32> {
    let (hf, wf) = (height as f32, width as f32);
    let bg_hue = rng.random_range(-band..band);
    let bg_sat = rng.random_range(0.3..0.55f32);
    let freq_x = rng.random_range(1.0..4.0f32) * std::f32::consts::TAU / wf;
    let freq_y = rng.random_range(1.0..4.0f32) * std::f32::consts::TAU / hf;
    let phase = rng.random_range(0.0..std::f32::consts::TAU);

    let n_shapes = rng.random_range(2..=5);
    let shapes: Vec<(Shape, (f32, f32, f32))> = (0..n_shapes)
        .map(|_| {
            let colour = (
                rng.random_range(-band..band),
                rng.random_range(0.6..1.0f32),
                rng.random_range(0.5..1.0f32),
            );
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc {
                    cx: rng.random_range(0.0..wf),
                    cy: rng.random_range(0.0..hf),
                    r: rng.random_range(0.08..0.25) * wf.min(hf),
                },
                1 => {
                    let x0 = rng.random_range(0.0..wf * 0.8);
                    let y0 = rng.random_range(0.0..hf * 0.8);
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.random_range(0.15..0.45) * wf,
                        y1: y0 + rng.random_range(0.15..0.45) * hf,
                    }
                }
                _ => {
                    let mut p = [(0.0, 0.0); 3];
                    for v in &mut p {
                        *v = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                    }
                    Shape::Triangle { p }
                }
            };
            (shape, colour)
        })
        .collect();

    let plane = height * width;
    let mut out = vec![0.0f32; 3 * plane];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let texture = (freq_x * px + phase).sin() * (freq_y * py).cos();
            let mut hsv = (bg_hue + 0.2 * band * texture, bg_sat, 0.55 + 0.2 * texture);
            for (shape, colour) in &shapes {
                if shape.contains(px, py) {
                    hsv = *colour;
                }
            }
            let (r, g, b) = color::hsv_to_rgb(hsv.0, hsv.1, hsv.2);
            let i = y * width + x;
            out[i] = r * 2.0 - 1.0;
            out[plane + i] = g * 2.0 - 1.0;
            out[2 * plane + i] = b * 2.0 - 1.0;
        }
    }
    out
}
