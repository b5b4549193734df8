use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::networks::Param;
use crate::Result;

pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Adam with bias correction over a fixed parameter list. Parameters that
/// receive no gradient in a step are left untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    params: Vec<Param>,
    moments: Vec<Moments>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let moments = params
            .iter()
            .map(|p| {
                let t = p.var.as_tensor();
                Ok(Moments {
                    m: t.zeros_like()?,
                    v: t.zeros_like()?,
                    step: 0,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Adam {
            params,
            moments,
            lr,
            beta1,
            beta2,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub(crate) fn moments_mut(&mut self) -> &mut [Moments] {
        &mut self.moments
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (p, state) in self.params.iter().zip(self.moments.iter_mut()) {
            let theta = p.var.as_tensor();
            let Some(g) = grads.get(theta) else { continue };
            state.step += 1;
            state.m = ((&state.m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            state.v = ((&state.v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let t = state.step as i32;
            let m_hat = (&state.m / (1.0 - self.beta1.powi(t)))?;
            let v_hat = (&state.v / (1.0 - self.beta2.powi(t)))?;
            let update = (m_hat / (v_hat.sqrt()? + ADAM_EPS)?)?;
            p.var.set(&(theta - (update * self.lr)?)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ParamKind;
    use candle_core::{DType, Device, Var};

    #[test]
    fn matches_hand_computed_first_steps() {
        let var = Var::from_vec(vec![1.0f64, -2.0], 2, &Device::Cpu).unwrap();
        let p = Param {
            name: "w".into(),
            var: var.clone(),
            kind: ParamKind::ConvWeight,
        };
        let mut adam = Adam::new(vec![p], 0.1, 0.5, 0.999).unwrap();
        let mut theta = [1.0f64, -2.0];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for t in 1..=3 {
            // loss = sum(theta^2), gradient 2 theta.
            let grads = var.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            adam.step(&grads).unwrap();
            for i in 0..2 {
                let g = 2.0 * theta[i];
                m[i] = 0.5 * m[i] + 0.5 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                let mh = m[i] / (1.0 - 0.5f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                theta[i] -= 0.1 * mh / (vh.sqrt() + ADAM_EPS);
            }
            let got = var.as_tensor().to_vec1::<f64>().unwrap();
            for i in 0..2 {
                assert!((got[i] - theta[i]).abs() < 1e-12);
            }
        }
        assert_eq!(adam.moments()[0].step, 3);
    }

    #[test]
    fn absent_gradient_leaves_parameter_alone() {
        let a = Var::ones(3, DType::F32, &Device::Cpu).unwrap();
        let b = Var::ones(3, DType::F32, &Device::Cpu).unwrap();
        let params = [&a, &b]
            .iter()
            .enumerate()
            .map(|(i, v)| Param {
                name: format!("p{i}"),
                var: (*v).clone(),
                kind: ParamKind::ConvWeight,
            })
            .collect();
        let mut adam = Adam::new(params, 0.01, 0.5, 0.999).unwrap();
        let grads = a.as_tensor().sum_all().unwrap().backward().unwrap();
        adam.step(&grads).unwrap();
        assert_eq!(b.as_tensor().to_vec1::<f32>().unwrap(), vec![1.0; 3]);
        assert_eq!(adam.moments()[1].step, 0);
        assert!(a.as_tensor().to_vec1::<f32>().unwrap().iter().all(|&x| x < 1.0));
    }
}
