use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

/// Gradient of relu given its input.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    zip(input, grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, tanh_scalar)
}

/// `tanh` through a single `exp`, about three times cheaper than libm's.
/// Small arguments go through `exp_m1` to avoid cancellation; both paths
/// stay within a few ulps of the exact value.
#[inline]
pub fn tanh_scalar(x: f64) -> f64 {
    let a = x.abs();
    let t = if a < 0.25 {
        let m = (-2.0 * a).exp_m1();
        -m / (m + 2.0)
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(x)
}

/// Gradient of tanh given its output.
pub fn tanh_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    zip(output, grad_out, |y, g| g * (1.0 - y * y))
}

/// Max-shifted softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverted dropout: surviving entries are scaled by `1/(1-p)`.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    /// Returns the output and the multiplicative mask; eval mode is the identity.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, train: bool, rng: &mut R) -> (Tensor, Tensor) {
        if !train || self.p == 0.0 {
            return (x.clone(), Tensor::filled(x.shape(), 1.0));
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask_data = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(x.shape().to_vec(), mask_data).expect("same shape");
        (zip(x, &mask, |a, m| a * m), mask)
    }

    pub fn backward(mask: &Tensor, grad_out: &Tensor) -> Tensor {
        zip(mask, grad_out, |m, g| m * g)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
