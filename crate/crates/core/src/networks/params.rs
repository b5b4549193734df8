use std::collections::HashSet;

use candle_core::{DType, Device, Tensor, TensorId, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Result;

/// Standard deviation of the Gaussian used for convolution weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormScale,
    NormOffset,
}

/// A named trainable array. Clones alias the same storage.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

impl Param {
    pub(crate) fn zeros(name: String, kind: ParamKind, shape: &[usize], dtype: DType) -> Result<Self> {
        Ok(Param {
            name,
            var: Var::zeros(shape, dtype, &Device::Cpu)?,
            kind,
        })
    }

    pub fn id(&self) -> TensorId {
        self.var.as_tensor().id()
    }

    pub fn elem_count(&self) -> usize {
        self.var.as_tensor().elem_count()
    }

    /// The tensor to use in a forward pass: tracked for gradients, or a
    /// detached view when the owning network is frozen for this pass.
    pub fn value(&self, grad: Grad) -> Tensor {
        match grad {
            Grad::Track => self.var.as_tensor().clone(),
            Grad::Frozen => self.var.as_tensor().detach(),
        }
    }
}

/// Whether a forward pass records gradients for the network's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grad {
    Track,
    Frozen,
}

/// Anything that owns parameters.
pub trait Parameterized {
    /// Parameters in a stable order. Shared parameters may appear more than
    /// once across networks but at most once per network.
    fn parameters(&self) -> Vec<Param>;
}

/// Distinct parameters across `nets`, first occurrence wins.
pub fn distinct_parameters(nets: &[&dyn Parameterized]) -> Vec<Param> {
    let mut seen = HashSet::new();
    nets.iter()
        .flat_map(|n| n.parameters())
        .filter(|p| seen.insert(p.id()))
        .collect()
}

/// Number of scalar parameters, counting shared arrays once.
pub fn count_parameters(nets: &[&dyn Parameterized]) -> usize {
    distinct_parameters(nets).iter().map(Param::elem_count).sum()
}

/// Convolution weights from N(0, 0.02^2) drawn from `rng` in parameter
/// order; biases and normalization offsets zero; normalization scales one.
pub fn init_weights<R: Rng + ?Sized>(net: &dyn Parameterized, rng: &mut R) -> Result<()> {
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    for p in distinct_parameters(&[net]) {
        let t = p.var.as_tensor();
        let n = t.elem_count();
        let values: Vec<f64> = match p.kind {
            ParamKind::ConvWeight => (0..n).map(|_| normal.sample(rng)).collect(),
            ParamKind::Bias | ParamKind::NormOffset => vec![0.0; n],
            ParamKind::NormScale => vec![1.0; n],
        };
        let fresh = Tensor::from_vec(values, t.shape(), &Device::Cpu)?.to_dtype(t.dtype())?;
        p.var.set(&fresh)?;
    }
    Ok(())
}
