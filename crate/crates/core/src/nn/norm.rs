use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-channel standardization over the nodes of one cloud, followed by a
/// learned scale and shift. Statistics never mix samples, so per-sample
/// gradients stay independent.
#[derive(Debug, Clone)]
pub struct NodeNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl NodeNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let scale = store.add(format!("{name}.scale"), Tensor::filled(&[dim], 1.0), false)?;
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[dim]), false)?;
        Ok(Self {
            scale,
            shift,
            dim,
            eps: Self::EPS,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, NormCache)> {
        x.expect_matrix(self.dim, "normalization input")?;
        let n = x.rows();
        if n == 0 {
            return Err(Error::dim("normalization of an empty cloud"));
        }
        let (gamma, beta) = (store.value(self.scale).data(), store.value(self.shift).data());
        let mut mean = vec![0.0; self.dim];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; self.dim];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / n as f64 + self.eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for i in 0..n {
            let (xi, zi, oi) = (x.row(i), normalized.row_mut(i), out.row_mut(i));
            for c in 0..self.dim {
                zi[c] = (xi[c] - mean[c]) * inv_std[c];
                oi[c] = gamma[c] * zi[c] + beta[c];
            }
        }
        Ok((out, NormCache { normalized, inv_std }))
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &NormCache, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.expect_matrix(self.dim, "normalization upstream gradient")?;
        let z = &cache.normalized;
        let n = z.rows();
        if grad_out.rows() != n {
            return Err(Error::dim("normalization gradient row count"));
        }
        let gamma = store.value(self.scale).data();
        let mut sum_g = vec![0.0; self.dim];
        let mut sum_gz = vec![0.0; self.dim];
        for i in 0..n {
            for c in 0..self.dim {
                let g = grad_out.row(i)[c];
                sum_g[c] += g;
                sum_gz[c] += g * z.row(i)[c];
            }
        }
        for (d, s) in grads.get_mut(self.scale).data_mut().iter_mut().zip(&sum_gz) {
            *d += s;
        }
        for (d, s) in grads.get_mut(self.shift).data_mut().iter_mut().zip(&sum_g) {
            *d += s;
        }
        let nf = n as f64;
        let mut grad_x = Tensor::zeros(z.shape());
        for i in 0..n {
            let (gi, zi) = (grad_out.row(i), z.row(i));
            for (c, dst) in grad_x.row_mut(i).iter_mut().enumerate() {
                let k = gamma[c] * cache.inv_std[c];
                *dst = k * (gi[c] - sum_g[c] / nf - zi[c] * sum_gz[c] / nf);
            }
        }
        Ok(grad_x)
    }
}
