use crate::error::{Error, Result};
use crate::nn::Tensor;

pub type Point3 = [f64; 3];

/// Node positions (meters, camera frame) with per-node feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    /// `N × F` node features; `F` may be zero.
    pub features: Tensor,
    pub batch: Option<Vec<usize>>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, features: Tensor) -> Result<Self> {
        let cloud = Self {
            positions,
            features,
            batch: None,
            label: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Positions only, with an empty feature matrix.
    pub fn from_positions(positions: Vec<Point3>) -> Self {
        let n = positions.len();
        Self {
            positions,
            features: Tensor::zeros(&[n, 0]),
            batch: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.shape().len() != 2 || self.features.rows() != self.positions.len() {
            return Err(Error::dim(format!(
                "{} positions but features of shape {:?}",
                self.positions.len(),
                self.features.shape()
            )));
        }
        if let Some(b) = &self.batch {
            if b.len() != self.positions.len() {
                return Err(Error::dim("batch index length differs from node count"));
            }
        }
        if !self.positions.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite position".into()));
        }
        if !self.features.all_finite() {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(())
    }

    /// Keeps the listed nodes, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.gather_rows(indices),
            batch: self.batch.as_ref().map(|b| indices.iter().map(|&i| b[i]).collect()),
            label: self.label,
        }
    }

    pub fn positions_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), 3], self.positions.iter().flatten().copied().collect())
            .expect("three coordinates per position")
    }

    pub fn centroid(&self) -> Point3 {
        mean_point(self.positions.iter())
    }
}

pub fn mean_point<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        for a in 0..3 {
            sum[a] += p[a];
        }
        n += 1;
    }
    if n == 0 {
        return sum;
    }
    sum.map(|s| s / n as f64)
}

pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_rows_must_match_positions() {
        assert!(PointCloud::new(vec![[0.0; 3]; 2], Tensor::zeros(&[3, 1])).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]; 2], Tensor::zeros(&[2, 1])).is_ok());
    }

    #[test]
    fn non_finite_positions_are_rejected() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], Tensor::zeros(&[1, 0])).is_err());
    }

    #[test]
    fn select_keeps_features_aligned() {
        let c = PointCloud::new(
            vec![[0.0; 3], [1.0; 3], [2.0; 3]],
            Tensor::from_rows(&[[10.0], [11.0], [12.0]]).unwrap(),
        )
        .unwrap();
        let s = c.select(&[2, 0]);
        assert_eq!(s.positions, vec![[2.0; 3], [0.0; 3]]);
        assert_eq!(s.features.data(), &[12.0, 10.0]);
    }
}
