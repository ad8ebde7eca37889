use super::params::ParamStore;
use super::tensor::Tensor;

/// SGD with classic velocity momentum and L2 weight decay folded into the gradient:
///
/// `v ← μ·v + g + λ·θ`, `θ ← θ − η·v`.
///
/// Decay only touches parameters flagged `decay` (weights, not biases).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Applies one update from the gradient slots of `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for ((theta, g), vel) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vel = self.momentum * *vel + g + decay * *theta;
                *theta -= self.lr * *vel;
            }
        }
    }
}
