use candle_core::DType;
use rand::Rng;

use super::{encode_label, DomainDataset, DomainLabel, ImageTensor};
use crate::Result;

/// One unpaired draw: a real source image with its label and a target label.
#[derive(Debug, Clone)]
pub struct UnpairedSample {
    pub x: ImageTensor,
    pub z_x: DomainLabel,
    pub z_y: DomainLabel,
    pub image_index: usize,
}

/// Uniform target over the `m - 1` domains other than `source`.
pub fn draw_target<R: Rng + ?Sized>(source: usize, m: usize, rng: &mut R) -> usize {
    let t = rng.random_range(0..m - 1);
    if t >= source {
        t + 1
    } else {
        t
    }
}

/// Uniform image index from `domain`.
pub fn sample_from_domain<R: Rng + ?Sized>(dataset: &DomainDataset, domain: usize, rng: &mut R) -> usize {
    rng.random_range(0..dataset.domains()[domain].images.len())
}

/// Draws a source domain and image uniformly, then a different target domain.
/// Pairing information is never consulted.
pub fn sample_unpaired<R: Rng + ?Sized>(dataset: &DomainDataset, rng: &mut R, dtype: DType) -> Result<UnpairedSample> {
    let m = dataset.m();
    let source = rng.random_range(0..m);
    let image_index = sample_from_domain(dataset, source, rng);
    let target = draw_target(source, m, rng);
    let (h, w) = (dataset.height(), dataset.width());
    Ok(UnpairedSample {
        x: ImageTensor::from_records(&[dataset.image(source, image_index)], h, w, dtype)?,
        z_x: encode_label(source, m, h, w)?,
        z_y: encode_label(target, m, h, w)?,
        image_index,
    })
}
