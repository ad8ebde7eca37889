//! Per-edge attribute vectors: a positional part (offset `p_i − p_j`,
//! Cartesian or spherical) followed by a feature part (offset `X_i − X_j` or
//! its L2 norm).

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::neighbourhood::NeighbourhoodGraph;
use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalMode {
    None,
    Cartesian,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    None,
    Offset,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub positional: PositionalMode,
    pub feature: FeatureMode,
}

impl AttributeConfig {
    pub fn new(positional: PositionalMode, feature: FeatureMode) -> Result<Self> {
        let cfg = Self { positional, feature };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positional == PositionalMode::None && self.feature == FeatureMode::None {
            return Err(Error::invalid("edge attributes need a positional or a feature part"));
        }
        Ok(())
    }

    pub fn positional_width(&self) -> usize {
        match self.positional {
            PositionalMode::None => 0,
            _ => 3,
        }
    }

    pub fn feature_width(&self, feature_dim: usize) -> usize {
        match self.feature {
            FeatureMode::None => 0,
            FeatureMode::Offset => feature_dim,
            FeatureMode::L2 => 1,
        }
    }

    pub fn width(&self, feature_dim: usize) -> usize {
        self.positional_width() + self.feature_width(feature_dim)
    }
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            positional: PositionalMode::Spherical,
            feature: FeatureMode::Offset,
        }
    }
}

/// `E × D` attribute rows, one per edge in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAttributes {
    pub values: Tensor,
    pub config: AttributeConfig,
    pub feature_dim: usize,
}

/// `(r, azimuth, inclination)` with `azimuth = atan2(y, x) ∈ (−π, π]` and
/// `inclination = acos(z / r) ∈ [0, π]`; the zero vector maps to zeros.
pub fn cartesian_to_spherical(v: &Point3) -> Point3 {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        return [0.0; 3];
    }
    let mut azimuth = v[1].atan2(v[0]);
    if azimuth == -PI {
        azimuth = PI;
    }
    let inclination = (v[2] / r).clamp(-1.0, 1.0).acos();
    [r, azimuth, inclination]
}

pub fn edge_attributes(
    graph: &NeighbourhoodGraph,
    positions: &[Point3],
    features: Option<&Tensor>,
    config: AttributeConfig,
) -> Result<EdgeAttributes> {
    config.validate()?;
    let n = graph.num_nodes();
    if positions.len() != n {
        return Err(Error::dim(format!("{} positions for a {n}-node graph", positions.len())));
    }
    let feature_dim = match (config.feature, features) {
        (FeatureMode::None, f) => f.map_or(0, |f| f.cols()),
        (_, Some(f)) if f.rows() == n => f.cols(),
        (_, Some(_)) => return Err(Error::dim("feature rows differ from node count")),
        (_, None) => return Err(Error::invalid("feature attributes requested without features")),
    };
    let width = config.width(feature_dim);
    let mut data = Vec::with_capacity(graph.num_edges() * width);
    for (j, i) in graph.edges() {
        let s = [
            positions[i][0] - positions[j][0],
            positions[i][1] - positions[j][1],
            positions[i][2] - positions[j][2],
        ];
        match config.positional {
            PositionalMode::None => {}
            PositionalMode::Cartesian => data.extend_from_slice(&s),
            PositionalMode::Spherical => data.extend_from_slice(&cartesian_to_spherical(&s)),
        }
        if let Some(x) = features {
            match config.feature {
                FeatureMode::None => {}
                FeatureMode::Offset => data.extend(x.row(i).iter().zip(x.row(j)).map(|(a, b)| a - b)),
                FeatureMode::L2 => {
                    let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    data.push(d2.sqrt());
                }
            }
        }
    }
    Ok(EdgeAttributes {
        values: Tensor::new(vec![graph.num_edges(), width], data)?,
        config,
        feature_dim,
    })
}

/// Gradient of the feature part of the attributes with respect to the node
/// features. Positional parts carry no gradient.
pub fn edge_attributes_backward(
    graph: &NeighbourhoodGraph,
    features: &Tensor,
    attrs: &EdgeAttributes,
    grad_attrs: &Tensor,
) -> Tensor {
    let n = graph.num_nodes();
    let f = features.cols();
    let mut grad = Tensor::zeros(&[n, f]);
    let off = attrs.config.positional_width();
    match attrs.config.feature {
        FeatureMode::None => {}
        FeatureMode::Offset => {
            for (e, (j, i)) in graph.edges().enumerate() {
                if i == j {
                    continue;
                }
                let g = &grad_attrs.row(e)[off..off + f];
                let gd = grad.data_mut();
                for c in 0..f {
                    gd[i * f + c] += g[c];
                    gd[j * f + c] -= g[c];
                }
            }
        }
        FeatureMode::L2 => {
            for (e, (j, i)) in graph.edges().enumerate() {
                let dist = attrs.values.get2(e, off);
                if dist == 0.0 {
                    continue;
                }
                let g = grad_attrs.get2(e, off) / dist;
                let (xi, xj) = (features.row(i).to_vec(), features.row(j).to_vec());
                let gd = grad.data_mut();
                for c in 0..f {
                    let d = xi[c] - xj[c];
                    gd[i * f + c] += g * d;
                    gd[j * f + c] -= g * d;
                }
            }
        }
    }
    grad
}

/// Writes one `j i attr_0 … attr_{D-1}` line per edge, ordered by target then source.
pub fn write_edge_list<W: Write>(graph: &NeighbourhoodGraph, attrs: Option<&EdgeAttributes>, w: &mut W) -> Result<()> {
    for (e, (j, i)) in graph.edges().enumerate() {
        write!(w, "{j} {i}")?;
        if let Some(a) = attrs {
            for v in a.values.row(e) {
                write!(w, " {v}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::neighbourhood::{knn_graph_points, GraphPolicy, Space};
    use crate::nn::gradcheck::{finite_difference_check, FdConfig};
    use crate::nn::params::{uniform_tensor, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: PositionalMode, f: FeatureMode) -> AttributeConfig {
        AttributeConfig::new(p, f).unwrap()
    }

    #[test]
    fn spherical_examples() {
        assert_eq!(cartesian_to_spherical(&[0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let s = cartesian_to_spherical(&[1.0, 0.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - PI / 2.0).abs() < 1e-15);
        assert_eq!(cartesian_to_spherical(&[0.0, 0.0, 2.0]), [2.0, 0.0, 0.0]);
        assert_eq!(cartesian_to_spherical(&[-1.0, -0.0, 0.0])[1], PI);
    }

    #[test]
    fn both_parts_none_is_rejected() {
        assert!(AttributeConfig::new(PositionalMode::None, FeatureMode::None).is_err());
    }

    #[test]
    fn antisymmetric_offsets() {
        let pos = [[0.0, 0.0, 0.0], [1.0, 2.0, -1.0]];
        let x = Tensor::from_rows(&[[1.0, 5.0], [3.0, -2.0]]).unwrap();
        let g = knn_graph_points(&pos, 2, true).unwrap();
        let a = edge_attributes(&g, &pos, Some(&x), cfg(PositionalMode::Cartesian, FeatureMode::Offset)).unwrap();
        // Edges in order: (0→0), (1→0), (0→1), (1→1).
        let e10 = a.values.row(1).to_vec();
        let e01 = a.values.row(2).to_vec();
        for (p, q) in e10.iter().zip(&e01) {
            assert_eq!(*p, -q);
        }
        assert!(a.values.row(0).iter().all(|&v| v == 0.0));
        assert!(a.values.row(3).iter().all(|&v| v == 0.0));
        assert_eq!(a.values.row(2), &[1.0, 2.0, -1.0, 2.0, -7.0]);
    }

    #[test]
    fn missing_features_with_feature_mode() {
        let pos = [[0.0; 3]];
        let g = knn_graph_points(&pos, 1, true).unwrap();
        assert!(edge_attributes(&g, &pos, None, cfg(PositionalMode::None, FeatureMode::L2)).is_err());
        assert!(edge_attributes(&g, &pos, None, cfg(PositionalMode::Spherical, FeatureMode::None)).is_ok());
    }

    #[test]
    fn edge_list_format() {
        let g = NeighbourhoodGraph::from_neighbours(
            vec![vec![1, 0], vec![1]],
            GraphPolicy::Knn {
                k: 2,
                include_self: true,
            },
            Space::Euclidean,
        )
        .unwrap();
        let mut out = Vec::new();
        write_edge_list(&g, None, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 0\n1 0\n1 1\n");
    }

    #[test]
    fn feature_gradients_match_finite_differences() {
        for mode in [FeatureMode::Offset, FeatureMode::L2] {
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pos: Vec<Point3> = (0..10)
                    .map(|_| {
                        let t = uniform_tensor(&mut rng, &[3], 1.0);
                        [t.data()[0], t.data()[1], t.data()[2]]
                    })
                    .collect();
                let g = knn_graph_points(&pos, 3, true).unwrap();
                let mut store = ParamStore::new();
                let x = store.add("x", uniform_tensor(&mut rng, &[10, 4], 1.0), false).unwrap();
                let config = cfg(PositionalMode::Spherical, mode);
                let width = config.width(4);
                let probe = uniform_tensor(&mut rng, &[g.num_edges(), width], 1.0);
                let report = finite_difference_check(
                    &mut store,
                    |s| {
                        let a = edge_attributes(&g, &pos, Some(s.value(x)), config).unwrap();
                        a.values.data().iter().zip(probe.data()).map(|(p, q)| p * q).sum()
                    },
                    |s, grads| {
                        let a = edge_attributes(&g, &pos, Some(s.value(x)), config).unwrap();
                        let gx = edge_attributes_backward(&g, s.value(x), &a, &probe);
                        grads.get_mut(x).add_assign(&gx);
                    },
                    &FdConfig::default(),
                )
                .unwrap();
                assert!(report.max_rel_error <= 1e-5, "{mode:?}: {report:?}");
            }
        }
    }
}
