use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::uniform_tensor;
use crate::nn::{relu, relu_backward, tanh_backward, tanh_scalar, Grads, LinearLayer, ParamStore, Tensor};

/// Maps each edge attribute vector to an `out × in` filter matrix:
/// `FC(hidden) → relu → FC(out·in)`, optionally clamped by `tanh`.
#[derive(Debug, Clone)]
pub struct DynamicFilterNet {
    pub hidden: LinearLayer,
    pub output: LinearLayer,
    pub clamp: bool,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone)]
pub struct FilterCache {
    pub attrs: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    /// `E × (out·in)`, row-major `[o][c]` per edge.
    pub filters: Tensor,
}

impl DynamicFilterNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        attr_dim: usize,
        hidden_dim: usize,
        in_features: usize,
        out_features: usize,
        clamp: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = LinearLayer::new(store, &format!("{name}.hidden"), attr_dim, hidden_dim, true, rng)?;
        let output = LinearLayer::new(
            store,
            &format!("{name}.output"),
            hidden_dim,
            in_features * out_features,
            true,
            rng,
        )?;
        // The output bias is the edge-independent part of every filter. A
        // He-scaled start keeps activations from shrinking layer by layer.
        let base = (6.0 / in_features.max(1) as f64).sqrt();
        *store.value_mut(output.bias.expect("output layer has a bias")) =
            uniform_tensor(rng, &[in_features * out_features], base);
        Ok(Self {
            hidden,
            output,
            clamp,
            in_features,
            out_features,
        })
    }

    pub fn attr_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn forward(&self, store: &ParamStore, attrs: &Tensor) -> Result<FilterCache> {
        if attrs.shape().len() != 2 || attrs.cols() != self.attr_dim() {
            return Err(Error::dim(format!(
                "filter network expects {} attribute columns, got {:?}",
                self.attr_dim(),
                attrs.shape()
            )));
        }
        let hidden_pre = self.hidden.forward(store, attrs)?;
        let hidden = relu(&hidden_pre);
        let mut filters = self.output.forward(store, &hidden)?;
        if self.clamp {
            for v in filters.data_mut() {
                *v = tanh_scalar(*v);
                if !(v.abs() <= 1.0) {
                    return Err(Error::Numeric(format!("clamped filter weight {v} outside [-1, 1]")));
                }
            }
        }
        Ok(FilterCache {
            attrs: attrs.clone(),
            hidden_pre,
            hidden,
            filters,
        })
    }

    /// Returns the gradient with respect to the edge attributes.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &FilterCache, grad_filters: &Tensor) -> Result<Tensor> {
        let grad_out = if self.clamp {
            tanh_backward(&cache.filters, grad_filters)
        } else {
            grad_filters.clone()
        };
        let grad_hidden = self.output.backward(store, grads, &cache.hidden, &grad_out)?;
        let grad_hidden_pre = relu_backward(&cache.hidden_pre, &grad_hidden);
        self.hidden.backward(store, grads, &cache.attrs, &grad_hidden_pre)
    }
}
