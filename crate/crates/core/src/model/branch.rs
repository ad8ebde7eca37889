use rand::Rng;

use super::config::BranchConfig;
use crate::cloud::PointCloud;
use crate::error::Result;
use crate::gconv::{MunegcCache, MunegcGraphs, MunegcLayer, MunegcSpec};
use crate::nn::{relu, relu_backward, Grads, NodeNorm, NormCache, ParamStore, Tensor};
use crate::pooling::PoolResult;

/// Graph layers alternating with pooling steps.
#[derive(Debug, Clone)]
pub struct GeometricBranch {
    pub config: BranchConfig,
    pub layers: Vec<MunegcLayer>,
    /// One per layer when `config.normalize`, otherwise empty.
    pub norms: Vec<NodeNorm>,
}

#[derive(Debug, Clone)]
struct Stage {
    conv: MunegcCache,
    norm: Option<NormCache>,
    pre_activation: Tensor,
    pool: Option<PoolResult>,
}

#[derive(Debug, Clone)]
pub struct BranchCache {
    stages: Vec<Stage>,
}

impl BranchCache {
    /// Node count entering each graph layer.
    pub fn node_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.pre_activation.rows()).collect()
    }

    /// Neighbourhoods used by each layer, for replaying a forward pass.
    pub fn graphs(&self) -> Vec<MunegcGraphs> {
        self.stages.iter().map(|s| s.conv.graphs.clone()).collect()
    }
}

impl GeometricBranch {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &BranchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.widths.len());
        let mut norms = Vec::new();
        let mut in_dim = config.input_dim;
        for (l, &out_dim) in config.widths.iter().enumerate() {
            let spec = MunegcSpec {
                in_dim,
                out_dim,
                hidden_dim: config.filter_hidden,
                k: config.k,
                aggregation: config.aggregation,
                euclidean_policy: config.euclidean_policy,
                attributes: config.attributes,
                clamp: config.clamp,
            };
            layers.push(MunegcLayer::new(store, &format!("{name}.conv{l}"), &spec, rng)?);
            if config.normalize {
                norms.push(NodeNorm::new(store, &format!("{name}.norm{l}"), out_dim)?);
            }
            in_dim = out_dim;
        }
        Ok(Self {
            config: config.clone(),
            layers,
            norms,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Runs every stage and returns the final node cloud.
    pub fn forward(&self, store: &ParamStore, input: &PointCloud) -> Result<(PointCloud, BranchCache)> {
        self.run(store, input, None)
    }

    /// Forward pass with the neighbourhoods of every layer fixed, as needed
    /// for finite differences where feature-space neighbours would move.
    pub fn forward_with_graphs(
        &self,
        store: &ParamStore,
        input: &PointCloud,
        graphs: &[MunegcGraphs],
    ) -> Result<(PointCloud, BranchCache)> {
        if graphs.len() != self.layers.len() {
            return Err(crate::error::Error::dim("one graph set per layer"));
        }
        self.run(store, input, Some(graphs))
    }

    fn run(&self, store: &ParamStore, input: &PointCloud, frozen: Option<&[MunegcGraphs]>) -> Result<(PointCloud, BranchCache)> {
        input.features.expect_matrix(self.config.input_dim, "branch input")?;
        let mut cloud = input.clone();
        let mut stages = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let k = layer.k.min(cloud.len());
            let graphs = match frozen {
                Some(g) => g[l].clone(),
                None => layer.build_graphs(&cloud.positions, &cloud.features, k)?,
            };
            let (mut pre, conv) = layer.forward_with_graphs(store, &cloud.positions, &cloud.features, graphs)?;
            let norm = match self.norms.get(l) {
                Some(n) => {
                    let (y, cache) = n.forward(store, &pre)?;
                    pre = y;
                    Some(cache)
                }
                None => None,
            };
            let out = if self.config.post_activation {
                relu(&pre)
            } else {
                pre.clone()
            };
            cloud = PointCloud::new(cloud.positions, out)?;
            let pool = match self.config.radii.get(l) {
                Some(&r) => {
                    let pooled = self.config.pooling.pool(&cloud, r, self.config.pool_aggregation)?;
                    cloud = pooled.cloud.clone();
                    Some(pooled)
                }
                None => None,
            };
            stages.push(Stage {
                conv,
                norm,
                pre_activation: pre,
                pool,
            });
        }
        cloud.label = input.label;
        Ok((cloud, BranchCache { stages }))
    }

    /// Accumulates parameter gradients from the gradient of the final node features.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &BranchCache, grad_out: &Tensor) -> Result<Tensor> {
        let mut grad = grad_out.clone();
        for (l, (layer, stage)) in self.layers.iter().zip(&cache.stages).enumerate().rev() {
            if let Some(pool) = &stage.pool {
                grad = pool.backward(&grad)?;
            }
            if self.config.post_activation {
                grad = relu_backward(&stage.pre_activation, &grad);
            }
            if let (Some(n), Some(c)) = (self.norms.get(l), &stage.norm) {
                grad = n.backward(store, grads, c, &grad)?;
            }
            grad = layer.backward(store, grads, &stage.conv, &grad)?;
        }
        Ok(grad)
    }
}
