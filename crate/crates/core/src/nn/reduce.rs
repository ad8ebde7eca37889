use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean of node features per sample. `batch[i]` is the sample of node `i`.
pub fn global_average_pool(features: &Tensor, batch: &[usize], samples: usize) -> Result<Tensor> {
    let f = features.cols();
    if batch.len() != features.rows() {
        return Err(Error::dim("batch index length differs from node count"));
    }
    let mut out = Tensor::zeros(&[samples, f]);
    let mut counts = vec![0usize; samples];
    for (i, &b) in batch.iter().enumerate() {
        if b >= samples {
            return Err(Error::invalid(format!("batch index {b} out of range")));
        }
        counts[b] += 1;
        for (o, v) in out.row_mut(b).iter_mut().zip(features.row(i)) {
            *o += v;
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::invalid(format!("sample {b} has no nodes")));
        }
        let inv = 1.0 / n as f64;
        out.row_mut(b).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

pub fn global_average_pool_backward(grad_out: &Tensor, batch: &[usize]) -> Tensor {
    let samples = grad_out.rows();
    let mut counts = vec![0usize; samples];
    for &b in batch {
        counts[b] += 1;
    }
    let f = grad_out.cols();
    let mut grad = Tensor::zeros(&[batch.len(), f]);
    for (i, &b) in batch.iter().enumerate() {
        let inv = 1.0 / counts[b] as f64;
        for (g, v) in grad.row_mut(i).iter_mut().zip(grad_out.row(b)) {
            *g = v * inv;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_is_returned() {
        let x = Tensor::from_rows(&[[1.5, -2.0]]).unwrap();
        assert_eq!(global_average_pool(&x, &[0], 1).unwrap(), x);
    }

    #[test]
    fn mean_of_two_nodes() {
        let x = Tensor::from_rows(&[[1.0, 3.0], [3.0, 5.0]]).unwrap();
        assert_eq!(global_average_pool(&x, &[0, 0], 1).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn permutation_leaves_mean_unchanged() {
        let x = Tensor::from_rows(&[[1.0, 0.5], [2.0, -1.0], [7.0, 3.0], [-4.0, 0.0]]).unwrap();
        let y = x.gather_rows(&[3, 1, 0, 2]);
        let a = global_average_pool(&x, &[0, 1, 0, 1], 2).unwrap();
        let b = global_average_pool(&y, &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let x = Tensor::from_rows(&[[1.0]]).unwrap();
        assert!(global_average_pool(&x, &[0], 2).is_err());
    }

    #[test]
    fn backward_spreads_evenly() {
        let g = Tensor::from_rows(&[[4.0], [1.0]]).unwrap();
        let gi = global_average_pool_backward(&g, &[0, 0, 1, 0]);
        assert_eq!(gi.data(), &[4.0 / 3.0, 4.0 / 3.0, 1.0, 4.0 / 3.0]);
    }
}
