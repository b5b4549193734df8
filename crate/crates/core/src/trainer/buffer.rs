use candle_core::Tensor;
use rand::Rng;

use crate::Result;

pub const DEFAULT_BUFFER_CAPACITY: usize = 50;

/// History of generated images shown to the discriminator in place of the
/// freshest fake half of the time once full.
#[derive(Debug, Clone)]
pub struct ImageBuffer {
    capacity: usize,
    pool: Vec<Tensor>,
    queries_after_fill: u64,
    swaps: u64,
}

impl Default for ImageBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

impl ImageBuffer {
    pub fn new(capacity: usize) -> Self {
        ImageBuffer {
            capacity,
            pool: Vec::with_capacity(capacity),
            queries_after_fill: 0,
            swaps: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.pool
    }

    /// Per-image queries made against a full pool, and how many of them
    /// returned a stored image.
    pub fn swap_counts(&self) -> (u64, u64) {
        (self.queries_after_fill, self.swaps)
    }

    pub(crate) fn restore(&mut self, pool: Vec<Tensor>, counts: (u64, u64)) {
        self.pool = pool;
        (self.queries_after_fill, self.swaps) = counts;
    }

    /// Runs each image of the `(N, 3, H, W)` batch through the pool. The
    /// result never carries a gradient graph.
    pub fn query<R: Rng + ?Sized>(&mut self, fresh: &Tensor, rng: &mut R) -> Result<Tensor> {
        let fresh = fresh.detach();
        if self.capacity == 0 {
            return Ok(fresh);
        }
        let n = fresh.dims()[0];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let image = fresh.narrow(0, i, 1)?;
            if self.pool.len() < self.capacity {
                self.pool.push(image.clone());
                out.push(image);
                continue;
            }
            self.queries_after_fill += 1;
            if rng.random::<f64>() < 0.5 {
                let slot = rng.random_range(0..self.capacity);
                let stored = std::mem::replace(&mut self.pool[slot], image);
                self.swaps += 1;
                out.push(stored);
            } else {
                out.push(image);
            }
        }
        Ok(Tensor::cat(&out, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(v: f32) -> Tensor {
        Tensor::full(v, (1, 3, 2, 2), &Device::Cpu).unwrap()
    }

    #[test]
    fn fills_then_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ImageBuffer::default();
        let out = buf.query(&image(0.25), &mut rng).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(out.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![0.25; 12]);
        for i in 0..200 {
            buf.query(&image(i as f32 / 200.0), &mut rng).unwrap();
            assert!(buf.len() <= 50);
        }
        assert_eq!(buf.len(), 50);
    }

    #[test]
    fn swap_rate_is_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut buf = ImageBuffer::new(50);
        for _ in 0..50 {
            buf.query(&image(0.0), &mut rng).unwrap();
        }
        for _ in 0..10_000 {
            buf.query(&image(1.0), &mut rng).unwrap();
        }
        let (queries, swaps) = buf.swap_counts();
        assert_eq!(queries, 10_000);
        let rate = swaps as f64 / queries as f64;
        assert!((rate - 0.5).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn output_is_detached() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = ImageBuffer::new(2);
        let v = Var::ones((1, 3, 2, 2), candle_core::DType::F32, &Device::Cpu).unwrap();
        let tracked = (v.as_tensor() * 0.5).unwrap();
        for _ in 0..6 {
            let out = buf.query(&tracked, &mut rng).unwrap();
            let grads = (out.sum_all().unwrap() + v.as_tensor().sum_all().unwrap()).unwrap().backward().unwrap();
            // Only the direct path contributes: d/dv of sum(v) is one.
            let g = grads.get(v.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(g.iter().all(|&x| x == 1.0));
        }
    }
}
