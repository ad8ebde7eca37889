use rand::Rng;

use super::filter_net::{DynamicFilterNet, FilterCache};
use crate::error::{Error, Result};
use crate::graph::{EdgeAttributes, NeighbourhoodGraph};
use crate::nn::{Grads, ParamId, ParamStore, Tensor};

/// Graph convolution whose per-edge filters come from a [`DynamicFilterNet`]:
/// `out_i = 1/|N(i)| Σ_j F(A_ij) x_j + b`.
#[derive(Debug, Clone)]
pub struct AgcLayer {
    pub filter_net: DynamicFilterNet,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct AgcCache {
    pub filters: FilterCache,
}

#[derive(Debug, Clone)]
pub struct AgcGrad {
    pub input: Tensor,
    pub attrs: Tensor,
}

impl AgcLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        attr_dim: usize,
        hidden_dim: usize,
        in_dim: usize,
        out_dim: usize,
        clamp: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let filter_net = DynamicFilterNet::new(
            store,
            &format!("{name}.filter"),
            attr_dim,
            hidden_dim,
            in_dim,
            out_dim,
            clamp,
            rng,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), false)?;
        Ok(Self {
            filter_net,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn from_parts(filter_net: DynamicFilterNet, bias: ParamId) -> Self {
        let (in_dim, out_dim) = (filter_net.in_features, filter_net.out_features);
        Self {
            filter_net,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        graph: &NeighbourhoodGraph,
        attrs: &EdgeAttributes,
        x: &Tensor,
    ) -> Result<(Tensor, AgcCache)> {
        let n = graph.num_nodes();
        x.expect_matrix(self.in_dim, "graph convolution input")?;
        if x.rows() != n {
            return Err(Error::dim(format!("{} feature rows for a {n}-node graph", x.rows())));
        }
        if attrs.values.rows() != graph.num_edges() {
            return Err(Error::dim("attribute rows differ from edge count"));
        }
        graph.check_no_isolated()?;
        let filters = self.filter_net.forward(store, &attrs.values)?;
        let out = convolve(graph, &filters.filters, x, store.value(self.bias).data(), self.out_dim);
        Ok((out, AgcCache { filters }))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        graph: &NeighbourhoodGraph,
        x: &Tensor,
        cache: &AgcCache,
        grad_out: &Tensor,
    ) -> Result<AgcGrad> {
        grad_out.expect_matrix(self.out_dim, "graph convolution upstream gradient")?;
        let (din, dout) = (self.in_dim, self.out_dim);
        let w = &cache.filters.filters;
        let mut grad_filters = Tensor::zeros(w.shape());
        let mut grad_x = Tensor::zeros(&[graph.num_nodes(), din]);
        let gb = grads.get_mut(self.bias).data_mut();
        for i in 0..graph.num_nodes() {
            let inv = 1.0 / graph.in_degree(i) as f64;
            let gi: Vec<f64> = grad_out.row(i).iter().map(|g| g * inv).collect();
            for (o, g) in grad_out.row(i).iter().enumerate() {
                gb[o] += g;
            }
            for e in graph.edge_range(i) {
                let j = graph.sources()[e];
                let xj = x.row(j).to_vec();
                let we = w.row(e);
                let gw = grad_filters.row_mut(e);
                let mut gx = vec![0.0; din];
                for o in 0..dout {
                    let go = gi[o];
                    let row = &we[o * din..(o + 1) * din];
                    let grow = &mut gw[o * din..(o + 1) * din];
                    for c in 0..din {
                        grow[c] = go * xj[c];
                        gx[c] += row[c] * go;
                    }
                }
                for (dst, v) in grad_x.row_mut(j).iter_mut().zip(gx) {
                    *dst += v;
                }
            }
        }
        let grad_attrs = self.filter_net.backward(store, grads, &cache.filters, &grad_filters)?;
        Ok(AgcGrad {
            input: grad_x,
            attrs: grad_attrs,
        })
    }
}

fn convolve(graph: &NeighbourhoodGraph, filters: &Tensor, x: &Tensor, bias: &[f64], dout: usize) -> Tensor {
    let din = x.cols();
    let n = graph.num_nodes();
    let mut out = Tensor::zeros(&[n, dout]);
    let mut acc = vec![0.0; dout];
    for i in 0..n {
        acc.fill(0.0);
        for e in graph.edge_range(i) {
            let xj = x.row(graph.sources()[e]);
            let we = filters.row(e);
            for (o, a) in acc.iter_mut().enumerate() {
                *a += we[o * din..(o + 1) * din].iter().zip(xj).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        let inv = 1.0 / graph.in_degree(i) as f64;
        for ((dst, a), b) in out.row_mut(i).iter_mut().zip(&acc).zip(bias) {
            *dst = a * inv + b;
        }
    }
    out
}
