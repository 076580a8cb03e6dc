use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

/// Bias-corrected Adam with per-element first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Scalar>(params: &ParamStore<F>, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grads[k]` matches the k-th parameter tensor.
    pub fn step<F: Scalar>(&mut self, params: &mut ParamStore<F>, grads: &[Vec<F>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::LengthMismatch(grads.len(), self.m.len()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let (g, m, v) = (&grads[k], &mut self.m[k], &mut self.v[k]);
            if g.len() != m.len() {
                return Err(Error::LengthMismatch(g.len(), m.len()));
            }
            for (j, w) in tensor.data_mut().iter_mut().enumerate() {
                let gj = g[j].to_f64_lossy();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w = F::from_f64_lossy(w.to_f64_lossy() - update);
            }
        }
        Ok(())
    }
}
