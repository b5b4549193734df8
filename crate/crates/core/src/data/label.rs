use candle_core::{DType, Tensor};

use crate::{ops, Error, Result};

/// A target or source domain, conditioned into the generator as a
/// spatially tiled one-hot map appended to the image channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainLabel {
    index: usize,
    m: usize,
    height: usize,
    width: usize,
}

pub fn encode_label(index: usize, m: usize, height: usize, width: usize) -> Result<DomainLabel> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 domains, got {m}")));
    }
    if index >= m {
        return Err(Error::Label { index, m });
    }
    Ok(DomainLabel {
        index,
        m,
        height,
        width,
    })
}

impl DomainLabel {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn onehot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.m];
        v[self.index] = 1.0;
        v
    }

    /// `(m, height, width)` with channel `index` all ones.
    pub fn tiled(&self, dtype: DType) -> Result<Tensor> {
        let plane = self.height * self.width;
        let mut data = vec![0.0f32; self.m * plane];
        data[self.index * plane..(self.index + 1) * plane].fill(1.0);
        ops::tensor_from_f32(data, (self.m, self.height, self.width), dtype)
    }
}

/// Stacks tiled labels into an `(N, m, H, W)` conditioning batch.
pub fn tile_labels(labels: &[DomainLabel], dtype: DType) -> Result<Tensor> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Shape("empty label batch".into()))?;
    if labels
        .iter()
        .any(|l| (l.m, l.height, l.width) != (first.m, first.height, first.width))
    {
        return Err(Error::Shape("labels in a batch must share m and size".into()));
    }
    let tiles = labels.iter().map(|l| l.tiled(dtype)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&tiles, 0)?)
}
