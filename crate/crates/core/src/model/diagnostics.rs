use rand::Rng;

use super::config::{BranchConfig, FusionConfig};
use super::rng::{stream_rng, Stream};
use super::train::GeometricModel;
use super::AugmentationConfig;
use crate::cloud::PointCloud;
use crate::error::Result;
use crate::fusion::FusionStage;
use crate::nn::params::uniform_tensor;
use crate::nn::{finite_difference_check, weighted_cross_entropy, ClassWeights, FdConfig, ParamStore, Tensor};

/// Nodes in the random cloud fed to the gradient check.
pub const CHECK_NODES: usize = 32;
/// Neighbourhood size used during the gradient check.
pub const CHECK_K: usize = 4;

/// Maximum relative finite-difference error per layer (parameter-name
/// prefix) of a small instance of the branch plus classifier, and of a
/// fusion stage. Neighbourhoods are frozen at their forward values.
pub fn layer_gradient_errors(branch: &BranchConfig, fusion: &FusionConfig, seed: u64) -> Result<Vec<(String, f64)>> {
    let fd = FdConfig {
        max_entries_per_param: Some(48),
        ..FdConfig::default()
    };
    let mut out = Vec::new();

    let config = BranchConfig {
        k: branch.k.min(CHECK_K),
        ..branch.clone()
    };
    let classes = 3;
    let mut model = GeometricModel::new(&config, classes, 0.0, AugmentationConfig::disabled(), seed)?;
    let mut rng = stream_rng(seed, Stream::Eval, 7, 0);
    let cloud = random_cloud(&mut rng, CHECK_NODES, config.input_dim)?;
    let label = rng.random_range(0..classes);
    let weights = ClassWeights::uniform(classes);
    let graphs = model.branch.forward(&model.store, &cloud)?.1.graphs();
    let (branch_net, head) = (model.branch.clone(), model.head.clone());
    let logits = |s: &ParamStore| -> Result<_> {
        let (nodes, cache) = branch_net.forward_with_graphs(s, &cloud, &graphs)?;
        let (logits, head_cache) = head.forward_one(s, &nodes.features, false, &mut stream_rng(0, Stream::Eval, 0, 0))?;
        Ok((logits, cache, head_cache))
    };
    let report = finite_difference_check(
        &mut model.store,
        |s| {
            let (l, _, _) = logits(s).expect("forward");
            weighted_cross_entropy(&l, label, &weights).expect("loss").0
        },
        |s, g| {
            let (l, cache, head_cache) = logits(s).expect("forward");
            let grad = weighted_cross_entropy(&l, label, &weights).expect("loss").1;
            let grad = Tensor::new(vec![1, grad.len()], grad).expect("shape");
            let grad = head.backward(s, g, &head_cache, &grad).expect("head backward");
            branch_net.backward(s, g, &cache, &grad).expect("branch backward");
        },
        &fd,
    )?;
    group_by_layer(&report.per_param, &mut out);

    let mut store = ParamStore::new();
    let (gdim, tdim) = (config.output_dim(), 4);
    let stage = FusionStage::new(
        &mut store,
        "fusion",
        gdim,
        tdim,
        fusion.fused_dim.min(8),
        0.3,
        fusion.layout,
        &mut rng,
    )?;
    let geometric = random_cloud(&mut rng, 12, gdim)?;
    let texture = random_cloud(&mut rng, 20, tdim)?;
    let probe = stage.forward(&store, &geometric, &texture)?.0.features;
    let probe = uniform_tensor(&mut rng, probe.shape(), 1.0);
    let report = finite_difference_check(
        &mut store,
        |s| {
            let fused = stage.forward(s, &geometric, &texture).expect("fusion").0;
            fused.features.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        },
        |s, g| {
            let (_, cache) = stage.forward(s, &geometric, &texture).expect("fusion");
            stage.backward(s, g, &cache, &probe).expect("fusion backward");
        },
        &fd,
    )?;
    group_by_layer(&report.per_param, &mut out);
    Ok(out)
}

fn random_cloud<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Result<PointCloud> {
    let positions = (0..n)
        .map(|_| [rng.random(), rng.random(), rng.random::<f64>() + 1.0])
        .collect();
    PointCloud::new(positions, uniform_tensor(rng, &[n, dim], 1.0))
}

/// Folds `a.b.rest` parameter names into `a.b`, keeping first-seen order.
fn group_by_layer(per_param: &[(String, f64)], out: &mut Vec<(String, f64)>) {
    for (name, err) in per_param {
        let layer: String = name.splitn(3, '.').take(2).collect::<Vec<_>>().join(".");
        match out.iter_mut().find(|(l, _)| *l == layer) {
            Some((_, e)) => *e = e.max(*err),
            None => out.push((layer, *err)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn desk_preset_passes() {
        let cfg = crate::model::ExperimentConfig::preset(Preset::Desk);
        let errors = layer_gradient_errors(&cfg.branch, &cfg.fusion, 0).unwrap();
        let names: Vec<_> = errors.iter().map(|(n, _)| n.as_str()).collect();
        assert!(
            names.contains(&"branch.conv2") && names.contains(&"fusion.geometric"),
            "{errors:?}"
        );
        for (layer, e) in &errors {
            assert!(*e <= 1e-5, "{layer}: {e}");
        }
    }
}
