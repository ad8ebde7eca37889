use crate::error::{Error, Result};

/// Per-class loss weights, normalised so that they sum to the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
            frequencies: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }
}

/// Inverse-frequency weights `w(y) = 1/f(y)`, rescaled so `Σw = C`.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::InvalidDataset("no classes".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidDataset(format!("class {c} has no samples")));
    }
    let total: usize = counts.iter().sum();
    let frequencies: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    let raw: Vec<f64> = frequencies.iter().map(|f| 1.0 / f).collect();
    let sum: f64 = raw.iter().sum();
    let c = counts.len() as f64;
    let weights = raw.iter().map(|w| w * c / sum).collect();
    Ok(ClassWeights { weights, frequencies })
}

/// Weighted cross-entropy of one logit vector, with its gradient.
///
/// `loss = w[y]·(logΣexp(x) − x[y])`, evaluated with a max shift.
pub fn weighted_cross_entropy(logits: &[f64], target: usize, weights: &ClassWeights) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if weights.num_classes() != c {
        return Err(Error::dim(format!("{c} logits for {} class weights", weights.num_classes())));
    }
    if target >= c {
        return Err(Error::invalid(format!("class index {target} out of range for {c} classes")));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lse = m + sum_exp.ln();
    let w = weights.weights[target];
    let loss = w * (lse - logits[target]);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let p = (v - lse).exp();
            w * (p - if j == target { 1.0 } else { 0.0 })
        })
        .collect();
    Ok((loss, grad))
}
