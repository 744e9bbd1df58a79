use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// Adam with bias correction. `weight_decay` adds `wd * p` to the gradient (L2 form).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor<T>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay: 0.0,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (ob1, ob2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let step_size = T::c(self.lr / bc1);
        let rbc2 = T::c(1.0 / bc2.sqrt());
        let eps = T::c(self.eps);
        let wd = T::c(self.weight_decay);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(shape_err("adam", p.shape(), g.shape()));
            }
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj + wd * *pj;
                m[j] = b1 * m[j] + ob1 * gj;
                v[j] = b2 * v[j] + ob2 * gj * gj;
                *pj -= step_size * m[j] / (v[j].sqrt() * rbc2 + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.f64() * v.f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::c(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}
