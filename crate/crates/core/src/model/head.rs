use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{global_average_pool, global_average_pool_backward, Dropout, Grads, LinearLayer, ParamStore, Tensor};

/// Global average pooling, dropout and a fully connected layer.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub dropout: Dropout,
    pub fc: LinearLayer,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    batch: Vec<usize>,
    dropped: Tensor,
    mask: Tensor,
}

/// Bias whose sigmoid equals the uniform prior `1/C`.
pub fn prior_bias(classes: usize) -> f64 {
    let pi = 1.0 / classes as f64;
    -((1.0 - pi) / pi).ln()
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        let fc = LinearLayer::new(store, name, in_dim, classes, true, rng)?;
        store
            .value_mut(fc.bias.expect("classifier has a bias"))
            .fill(prior_bias(classes));
        Ok(Self {
            dropout: Dropout::new(dropout)?,
            fc,
            classes,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.fc.in_dim
    }

    /// Logits `B × C` for node features grouped by `batch`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        features: &Tensor,
        batch: &[usize],
        samples: usize,
        train: bool,
        rng: &mut R,
    ) -> Result<(Tensor, HeadCache)> {
        features.expect_matrix(self.in_dim(), "classifier input")?;
        let pooled = global_average_pool(features, batch, samples)?;
        let (dropped, mask) = self.dropout.forward(&pooled, train, rng);
        let logits = self.fc.forward(store, &dropped)?;
        Ok((
            logits,
            HeadCache {
                batch: batch.to_vec(),
                dropped,
                mask,
            },
        ))
    }

    /// Logits for a single sample.
    pub fn forward_one<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        features: &Tensor,
        train: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, HeadCache)> {
        let batch = vec![0; features.rows()];
        let (logits, cache) = self.forward(store, features, &batch, 1, train, rng)?;
        Ok((logits.into_data(), cache))
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &HeadCache, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.fc.backward(store, grads, &cache.dropped, grad_logits)?;
        let g = Dropout::backward(&cache.mask, &g);
        Ok(global_average_pool_backward(&g, &cache.batch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::sigmoid;
    use crate::nn::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_bias_matches_prior() {
        for c in 2..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
            let mut store = ParamStore::new();
            let head = ClassifierHead::new(&mut store, "h", 4, c, 0.2, &mut rng).unwrap();
            for &b in store.value(head.fc.bias.unwrap()).data() {
                assert!((sigmoid(b) - 1.0 / c as f64).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let head = ClassifierHead::new(&mut store, "h", 3, 4, 0.0, &mut rng).unwrap();
        store.value_mut(head.fc.weight).fill(0.0);
        let x = crate::nn::params::uniform_tensor(&mut rng, &[7, 3], 1.0);
        let (logits, _) = head.forward_one(&store, &x, false, &mut rng).unwrap();
        for p in softmax(&logits) {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let head = ClassifierHead::new(&mut store, "h", 3, 3, 0.5, &mut rng).unwrap();
        let x = crate::nn::params::uniform_tensor(&mut rng, &[5, 3], 1.0);
        let a = head.forward_one(&store, &x, false, &mut rng).unwrap().0;
        let b = head.forward_one(&store, &x, false, &mut rng).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn width_mismatch_and_single_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let head = ClassifierHead::new(&mut store, "h", 3, 3, 0.5, &mut rng).unwrap();
        assert!(head.forward_one(&store, &Tensor::zeros(&[2, 4]), false, &mut rng).is_err());
        assert!(ClassifierHead::new(&mut store, "g", 3, 1, 0.5, &mut rng).is_err());
    }
}
