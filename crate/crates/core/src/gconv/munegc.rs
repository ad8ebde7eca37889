use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agc::{AgcCache, AgcLayer};
use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::graph::{
    edge_attributes, edge_attributes_backward, knn_graph, knn_graph_points, radius_graph, AttributeConfig, EdgeAttributes,
    NeighbourhoodGraph,
};
use crate::nn::{Grads, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Average,
    Maximum,
}

/// How the Euclidean neighbourhood is selected. The feature neighbourhood is always kNN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EuclideanPolicy {
    Knn,
    Radius { r: f64 },
}

/// Two graph convolutions, one over a Euclidean neighbourhood of the positions
/// and one over a kNN neighbourhood of the input features, combined per node.
#[derive(Debug, Clone)]
pub struct MunegcLayer {
    pub euclidean: AgcLayer,
    pub feature: AgcLayer,
    pub aggregation: Aggregation,
    pub k: usize,
    pub euclidean_policy: EuclideanPolicy,
    pub attributes: AttributeConfig,
}

#[derive(Debug, Clone)]
pub struct MunegcGraphs {
    pub euclidean: NeighbourhoodGraph,
    pub feature: NeighbourhoodGraph,
}

#[derive(Debug, Clone)]
struct BranchState {
    attrs: EdgeAttributes,
    cache: AgcCache,
    output: Tensor,
}

#[derive(Debug, Clone)]
pub struct MunegcCache {
    pub graphs: MunegcGraphs,
    input: Tensor,
    euclidean: BranchState,
    feature: BranchState,
}

#[derive(Debug, Clone, Copy)]
pub struct MunegcSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_dim: usize,
    pub k: usize,
    pub aggregation: Aggregation,
    pub euclidean_policy: EuclideanPolicy,
    pub attributes: AttributeConfig,
    pub clamp: bool,
}

impl MunegcLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: &MunegcSpec, rng: &mut R) -> Result<Self> {
        spec.attributes.validate()?;
        if spec.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let attr_dim = spec.attributes.width(spec.in_dim);
        let mut branch = |suffix: &str, rng: &mut R| {
            AgcLayer::new(
                store,
                &format!("{name}.{suffix}"),
                attr_dim,
                spec.hidden_dim,
                spec.in_dim,
                spec.out_dim,
                spec.clamp,
                rng,
            )
        };
        let euclidean = branch("euclidean", rng)?;
        let feature = branch("feature", rng)?;
        Ok(Self {
            euclidean,
            feature,
            aggregation: spec.aggregation,
            k: spec.k,
            euclidean_policy: spec.euclidean_policy,
            attributes: spec.attributes,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.euclidean.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.euclidean.out_dim
    }

    /// Builds both neighbourhoods with `k` neighbours (self-loop included).
    pub fn build_graphs(&self, positions: &[Point3], x: &Tensor, k: usize) -> Result<MunegcGraphs> {
        let n = positions.len();
        if k > n {
            return Err(Error::invalid(format!("k = {k} exceeds node count {n}")));
        }
        let euclidean = match self.euclidean_policy {
            EuclideanPolicy::Knn => knn_graph_points(positions, k, true)?,
            EuclideanPolicy::Radius { r } => radius_graph(positions, r)?,
        };
        let feature = knn_graph(x, k, true)?;
        Ok(MunegcGraphs { euclidean, feature })
    }

    pub fn forward(&self, store: &ParamStore, positions: &[Point3], x: &Tensor) -> Result<(Tensor, MunegcCache)> {
        let graphs = self.build_graphs(positions, x, self.k)?;
        self.forward_with_graphs(store, positions, x, graphs)
    }

    pub fn forward_with_graphs(
        &self,
        store: &ParamStore,
        positions: &[Point3],
        x: &Tensor,
        graphs: MunegcGraphs,
    ) -> Result<(Tensor, MunegcCache)> {
        x.expect_matrix(self.in_dim(), "MUNEGC input")?;
        if x.rows() != positions.len() || x.rows() == 0 {
            return Err(Error::dim(format!(
                "{} feature rows for {} positions",
                x.rows(),
                positions.len()
            )));
        }
        let run = |layer: &AgcLayer, graph: &NeighbourhoodGraph| -> Result<BranchState> {
            let attrs = edge_attributes(graph, positions, Some(x), self.attributes)?;
            let (output, cache) = layer.forward(store, graph, &attrs, x)?;
            Ok(BranchState { attrs, cache, output })
        };
        let euclidean = run(&self.euclidean, &graphs.euclidean)?;
        let feature = run(&self.feature, &graphs.feature)?;
        let out = match self.aggregation {
            Aggregation::Average => {
                let mut o = euclidean.output.clone();
                o.add_assign(&feature.output);
                o.scale(0.5);
                o
            }
            Aggregation::Maximum => {
                let data = euclidean
                    .output
                    .data()
                    .iter()
                    .zip(feature.output.data())
                    .map(|(a, b)| a.max(*b))
                    .collect();
                Tensor::new(euclidean.output.shape().to_vec(), data)?
            }
        };
        Ok((
            out,
            MunegcCache {
                graphs,
                input: x.clone(),
                euclidean,
                feature,
            },
        ))
    }

    /// Returns the gradient with respect to the input features; neighbourhoods are held fixed.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &MunegcCache, grad_out: &Tensor) -> Result<Tensor> {
        let (ge, gf) = self.split_gradient(cache, grad_out)?;
        let mut grad_x = Tensor::zeros(cache.input.shape());
        for (layer, graph, state, g) in [
            (&self.euclidean, &cache.graphs.euclidean, &cache.euclidean, ge),
            (&self.feature, &cache.graphs.feature, &cache.feature, gf),
        ] {
            let gr = layer.backward(store, grads, graph, &cache.input, &state.cache, &g)?;
            grad_x.add_assign(&gr.input);
            grad_x.add_assign(&edge_attributes_backward(graph, &cache.input, &state.attrs, &gr.attrs));
        }
        Ok(grad_x)
    }

    fn split_gradient(&self, cache: &MunegcCache, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let e = &cache.euclidean.output;
        if grad_out.shape() != e.shape() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} vs output {:?}",
                grad_out.shape(),
                e.shape()
            )));
        }
        match self.aggregation {
            Aggregation::Average => {
                let mut half = grad_out.clone();
                half.scale(0.5);
                Ok((half.clone(), half))
            }
            Aggregation::Maximum => {
                let f = &cache.feature.output;
                let mut ge = Tensor::zeros(e.shape());
                let mut gf = Tensor::zeros(e.shape());
                for (idx, &g) in grad_out.data().iter().enumerate() {
                    let (a, b) = (e.data()[idx], f.data()[idx]);
                    if a > b {
                        ge.data_mut()[idx] = g;
                    } else if b > a {
                        gf.data_mut()[idx] = g;
                    } else {
                        ge.data_mut()[idx] = 0.5 * g;
                        gf.data_mut()[idx] = 0.5 * g;
                    }
                }
                Ok((ge, gf))
            }
        }
    }
}
