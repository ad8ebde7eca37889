use rand::Rng;

use super::params::{uniform_tensor, Grads, ParamId, ParamStore};
use super::tensor::{gemm, matmul, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Registers a new layer, weights and bias uniform in `±1/√in`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        has_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform_tensor(rng, &[out_dim, in_dim], bound), true)?;
        let bias = if has_bias {
            Some(store.add(format!("{name}.bias"), uniform_tensor(rng, &[out_dim], bound), false)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Registers a layer with explicit initial values.
    pub fn from_values(store: &mut ParamStore, name: &str, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::dim("linear weight must be a matrix"));
        }
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        if let Some(b) = &bias {
            if b.shape() != [out_dim] {
                return Err(Error::dim(format!("bias shape {:?} for {out_dim} outputs", b.shape())));
            }
        }
        let weight = store.add(format!("{name}.weight"), weight, true)?;
        let bias = match bias {
            Some(b) => Some(store.add(format!("{name}.bias"), b, false)?),
            None => None,
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn forward(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        input.expect_matrix(self.in_dim, "linear input")?;
        let mut out = matmul(input, false, store.value(self.weight), true);
        if let Some(b) = self.bias {
            let b = store.value(b).data();
            for i in 0..out.rows() {
                for (o, bb) in out.row_mut(i).iter_mut().zip(b) {
                    *o += bb;
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        input.expect_matrix(self.in_dim, "linear input")?;
        grad_out.expect_matrix(self.out_dim, "linear upstream gradient")?;
        if input.rows() != grad_out.rows() {
            return Err(Error::dim("linear backward row counts differ"));
        }
        gemm(grad_out, true, input, false, grads.get_mut(self.weight), true);
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b).data_mut();
            for i in 0..grad_out.rows() {
                for (g, v) in gb.iter_mut().zip(grad_out.row(i)) {
                    *g += v;
                }
            }
        }
        Ok(matmul(grad_out, false, store.value(self.weight), false))
    }
}
