//! Multi-domain image data: containers, label encodings, ingestion,
//! synthesis and unpaired sampling.

mod color;
mod folder;
mod label;
mod sampling;
mod synth;

pub use color::{hsv_to_rgb, rgb_to_hsv, rotate_hue};
pub use folder::{export_dataset, load_domain_folders, load_image_file, save_record, LoadOptions, PAIRING_FILE};
pub(crate) use folder::record_to_rgb;
pub use label::{encode_label, tile_labels, DomainLabel};
pub use sampling::{draw_target, sample_from_domain, sample_unpaired, UnpairedSample};
pub use synth::{synthesize_multidomain, SynthSpec};

use std::ops::Deref;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::{ops, Error, Result};

/// Maps an 8-bit channel value into `[-1, 1]`.
pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Maps a `[-1, 1]` value back to 8 bits, clamping out-of-range input.
pub fn denormalize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Checks the spatial constraints the generator imposes on image sizes.
pub fn check_image_size(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0 {
        return Err(Error::Config(format!(
            "image size {height}x{width} must be at least 8 and divisible by 4"
        )));
    }
    Ok(())
}

/// A batch of RGB images, `(batch, 3, height, width)`, values in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    /// Validates shape, finiteness and range.
    pub fn new(tensor: Tensor) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::Shape(format!("expected (N, 3, H, W), got {dims:?}")));
        }
        check_image_size(dims[2], dims[3]).map_err(|e| Error::Shape(e.to_string()))?;
        let values = tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        // tanh outputs can touch the bounds after rounding
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-6) {
            return Err(Error::Numerics(format!("image value {bad} outside [-1, 1]")));
        }
        Ok(ImageTensor(tensor))
    }

    /// Wraps a tensor already known to satisfy the invariants, such as a
    /// tanh-bounded generator output.
    pub(crate) fn trusted(tensor: Tensor) -> Self {
        ImageTensor(tensor)
    }

    /// Stacks CHW records into a batch.
    pub fn from_records(records: &[&[f32]], height: usize, width: usize, dtype: DType) -> Result<Self> {
        let plane = 3 * height * width;
        let mut data = Vec::with_capacity(records.len() * plane);
        for r in records {
            if r.len() != plane {
                return Err(Error::Shape(format!(
                    "record has {} values, expected {plane}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        ImageTensor::new(ops::tensor_from_f32(data, (records.len(), 3, height, width), dtype)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    /// Flattened CHW record of image `i`.
    pub fn record(&self, i: usize) -> Result<Vec<f32>> {
        Ok(self.0.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
    }
}

impl Deref for ImageTensor {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        &self.0
    }
}

/// One named image domain. Images are CHW `f32` records in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub images: Vec<Vec<f32>>,
}

/// Ground-truth correspondence across domains: `pairs[i][k]` is the index
/// of the `i`-th underlying scene inside domain `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub domain_order: Vec<String>,
    pub pairs: Vec<Vec<usize>>,
}

/// Immutable collection of image domains sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domains: Vec<Domain>,
    height: usize,
    width: usize,
    pairing: Option<Pairing>,
}

impl DomainDataset {
    pub fn new(domains: Vec<Domain>, height: usize, width: usize, pairing: Option<Pairing>) -> Result<Self> {
        if domains.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 domains, found {}",
                domains.len()
            )));
        }
        check_image_size(height, width)?;
        let plane = 3 * height * width;
        for d in &domains {
            if d.images.is_empty() {
                return Err(Error::Dataset(format!("domain `{}` is empty", d.name)));
            }
            if d.images.iter().any(|im| im.len() != plane) {
                return Err(Error::Dataset(format!(
                    "domain `{}` has an image that is not {height}x{width}",
                    d.name
                )));
            }
        }
        if let Some(p) = &pairing {
            validate_pairing(p, &domains)?;
        }
        Ok(DomainDataset {
            domains,
            height,
            width,
            pairing,
        })
    }

    pub fn m(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pairing(&self) -> Option<&Pairing> {
        self.pairing.as_ref()
    }

    pub fn len(&self) -> usize {
        self.domains.iter().map(|d| d.images.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, domain: usize, index: usize) -> &[f32] {
        &self.domains[domain].images[index]
    }

    /// Every image as `(domain, index)` in domain-major order.
    pub fn flat_index(&self) -> Vec<(usize, usize)> {
        self.domains
            .iter()
            .enumerate()
            .flat_map(|(d, dom)| (0..dom.images.len()).map(move |i| (d, i)))
            .collect()
    }

    /// Splits off `holdout_per_domain` images from every domain. The last
    /// images of each domain form the holdout, which keeps paired scenes
    /// aligned across domains.
    pub fn split_holdout(&self, holdout_per_domain: usize) -> Result<(DomainDataset, DomainDataset)> {
        if holdout_per_domain == 0 {
            return Err(Error::Dataset("holdout split must be non-empty".into()));
        }
        let mut train = Vec::new();
        let mut hold = Vec::new();
        for d in &self.domains {
            if d.images.len() <= holdout_per_domain {
                return Err(Error::Dataset(format!(
                    "domain `{}` has {} images, cannot hold out {holdout_per_domain}",
                    d.name,
                    d.images.len()
                )));
            }
            let cut = d.images.len() - holdout_per_domain;
            train.push(Domain {
                name: d.name.clone(),
                images: d.images[..cut].to_vec(),
            });
            hold.push(Domain {
                name: d.name.clone(),
                images: d.images[cut..].to_vec(),
            });
        }
        let (train_pairs, hold_pairs) = match &self.pairing {
            Some(p) => {
                let cuts: Vec<usize> = self
                    .domains
                    .iter()
                    .map(|d| d.images.len() - holdout_per_domain)
                    .collect();
                let mut tp = Vec::new();
                let mut hp = Vec::new();
                for row in &p.pairs {
                    if row.iter().zip(&cuts).all(|(&i, &c)| i < c) {
                        tp.push(row.clone());
                    } else if row.iter().zip(&cuts).all(|(&i, &c)| i >= c) {
                        hp.push(row.iter().zip(&cuts).map(|(&i, &c)| i - c).collect());
                    }
                }
                (
                    Some(Pairing {
                        domain_order: p.domain_order.clone(),
                        pairs: tp,
                    }),
                    Some(Pairing {
                        domain_order: p.domain_order.clone(),
                        pairs: hp,
                    }),
                )
            }
            None => (None, None),
        };
        let (train_pairs, hold_pairs) = if self.pairing.is_some() && !is_bijective(&train_pairs, &train, &hold_pairs, &hold) {
            (None, None)
        } else {
            (train_pairs, hold_pairs)
        };
        Ok((
            DomainDataset::new(train, self.height, self.width, train_pairs)?,
            DomainDataset::new(hold, self.height, self.width, hold_pairs)?,
        ))
    }
}

fn is_bijective(tp: &Option<Pairing>, train: &[Domain], hp: &Option<Pairing>, hold: &[Domain]) -> bool {
    let ok = |p: &Option<Pairing>, ds: &[Domain]| match p {
        Some(p) => validate_pairing(p, ds).is_ok(),
        None => true,
    };
    ok(tp, train) && ok(hp, hold)
}

fn validate_pairing(p: &Pairing, domains: &[Domain]) -> Result<()> {
    let names: Vec<&str> = domains.iter().map(|d| d.name.as_str()).collect();
    if p.domain_order.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Dataset("pairing domain order does not match dataset".into()));
    }
    let len = domains[0].images.len();
    if domains.iter().any(|d| d.images.len() != len) || p.pairs.len() != len {
        return Err(Error::Dataset(
            "pairing requires equally sized domains with one row per image".into(),
        ));
    }
    for k in 0..domains.len() {
        let mut seen = vec![false; len];
        for row in &p.pairs {
            if row.len() != domains.len() {
                return Err(Error::Dataset("pairing row has the wrong arity".into()));
            }
            let i = row[k];
            if i >= len || seen[i] {
                return Err(Error::Dataset("pairing is not a bijection".into()));
            }
            seen[i] = true;
        }
    }
    Ok(())
}

/// Mirrors a CHW record left to right.
pub fn flip_horizontal(chw: &[f32], height: usize, width: usize) -> Vec<f32> {
    let mut out = chw.to_vec();
    for row in out.chunks_mut(width).take(3 * height) {
        row.reverse();
    }
    out
}
