use std::fmt;

use super::kdtree::{sq_dist, KdTree, Neighbour};
use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Above this dimension the tree degenerates into a scan with overhead.
const KDTREE_MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphPolicy {
    Knn { k: usize, include_self: bool },
    Radius { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Euclidean,
    Feature,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Euclidean => "euclidean",
            Space::Feature => "feature",
        })
    }
}

/// Directed neighbour → centre edges, grouped by centre (target) with
/// ascending sources inside each group.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    pub policy: GraphPolicy,
    pub space: Space,
}

impl NeighbourhoodGraph {
    /// Builds a graph from per-target neighbour lists.
    pub fn from_neighbours(mut lists: Vec<Vec<usize>>, policy: GraphPolicy, space: Space) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut sources = Vec::new();
        for list in &mut lists {
            list.sort_unstable();
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::invalid(format!("edge source {bad} out of range for {n} nodes")));
            }
            sources.extend_from_slice(list);
            offsets.push(sources.len());
        }
        Ok(Self {
            num_nodes: n,
            offsets,
            sources,
            policy,
            space,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn in_degree(&self, target: usize) -> usize {
        self.offsets[target + 1] - self.offsets[target]
    }

    /// Sources of the edges into `target`.
    pub fn neighbours(&self, target: usize) -> &[usize] {
        &self.sources[self.offsets[target]..self.offsets[target + 1]]
    }

    /// Edge index range of `target`.
    pub fn edge_range(&self, target: usize) -> std::ops::Range<usize> {
        self.offsets[target]..self.offsets[target + 1]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// `(source, target)` pairs, ordered by target then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.neighbours(i).iter().map(move |&j| (j, i)))
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges().map(|(_, i)| i).collect()
    }

    /// Fails with [`Error::IsolatedNode`] if some node has no incoming edge.
    pub fn check_no_isolated(&self) -> Result<()> {
        match (0..self.num_nodes).find(|&i| self.in_degree(i) == 0) {
            Some(i) => Err(Error::IsolatedNode(i)),
            None => Ok(()),
        }
    }
}

/// k-nearest-neighbour graph on the rows of `vectors` (L2 metric).
///
/// With `include_self`, every node receives its self-loop plus the `k − 1`
/// nearest other nodes. Equal distances resolve to the lower index.
pub fn knn_graph(vectors: &Tensor, k: usize, include_self: bool) -> Result<NeighbourhoodGraph> {
    if vectors.shape().len() != 2 {
        return Err(Error::dim("knn_graph expects an N × D matrix"));
    }
    knn_graph_flat(vectors.data(), vectors.cols(), k, include_self, Space::Feature)
}

pub fn knn_graph_points(points: &[Point3], k: usize, include_self: bool) -> Result<NeighbourhoodGraph> {
    knn_graph_flat(points.as_flattened(), 3, k, include_self, Space::Euclidean)
}

pub(crate) fn knn_graph_flat(data: &[f64], dim: usize, k: usize, include_self: bool, space: Space) -> Result<NeighbourhoodGraph> {
    if dim == 0 {
        return Err(Error::invalid("knn_graph needs at least one dimension"));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let available = if include_self { n } else { n.saturating_sub(1) };
    if k > available {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {available} available neighbours"
        )));
    }
    let others = if include_self { k - 1 } else { k };
    let lists: Vec<Vec<usize>> = if dim <= KDTREE_MAX_DIM {
        let tree = KdTree::new(data, dim);
        (0..n)
            .map(|i| neighbour_list(i, tree.nearest(&data[i * dim..(i + 1) * dim], others, Some(i)), include_self))
            .collect()
    } else {
        (0..n)
            .map(|i| neighbour_list(i, scan_nearest(data, dim, i, others), include_self))
            .collect()
    };
    NeighbourhoodGraph::from_neighbours(lists, GraphPolicy::Knn { k, include_self }, space)
}

fn neighbour_list(i: usize, nearest: Vec<Neighbour>, include_self: bool) -> Vec<usize> {
    let mut list: Vec<usize> = nearest.into_iter().map(|n| n.index).collect();
    if include_self {
        list.push(i);
    }
    list
}

fn scan_nearest(data: &[f64], dim: usize, i: usize, k: usize) -> Vec<Neighbour> {
    let q = &data[i * dim..(i + 1) * dim];
    let mut all: Vec<Neighbour> = (0..data.len() / dim)
        .filter(|&j| j != i)
        .map(|j| Neighbour {
            dist2: sq_dist(q, &data[j * dim..(j + 1) * dim]),
            index: j,
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort_unstable();
    all
}

/// All nodes within Euclidean distance `≤ r` (inclusive), plus the self-loop.
pub fn radius_graph(positions: &[Point3], r: f64) -> Result<NeighbourhoodGraph> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    let data = positions.as_flattened();
    let tree = KdTree::new(data, 3);
    let r2 = r * r;
    let lists = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut l = tree.within(p, r2);
            if !l.contains(&i) {
                l.push(i);
            }
            l
        })
        .collect();
    NeighbourhoodGraph::from_neighbours(lists, GraphPolicy::Radius { r }, Space::Euclidean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_example() {
        let g = knn_graph_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], 2, true).unwrap();
        assert_eq!(g.neighbours(1), &[0, 1]);
        assert_eq!(g.neighbours(2), &[1, 2]);
    }

    #[test]
    fn k1_with_self_is_only_self_loops() {
        let pts = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
        let g = knn_graph_points(&pts, 1, true).unwrap();
        for i in 0..3 {
            assert_eq!(g.neighbours(i), &[i]);
        }
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let pts = [[0.0; 3], [5.0, 0.0, 0.0], [0.0; 3], [0.0; 3]];
        let g = knn_graph_points(&pts, 2, true).unwrap();
        assert_eq!(g.neighbours(3), &[0, 3]);
        assert_eq!(g.neighbours(0), &[0, 2]);
        let g = knn_graph_points(&pts, 2, false).unwrap();
        assert_eq!(g.neighbours(3), &[0, 2]);
    }

    #[test]
    fn k_larger_than_n() {
        assert!(knn_graph_points(&[[0.0; 3]; 3], 4, true).is_err());
        assert!(knn_graph_points(&[[0.0; 3]; 3], 3, false).is_err());
        assert!(knn_graph_points(&[[0.0; 3]; 3], 0, true).is_err());
    }

    #[test]
    fn every_node_gets_k_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..50).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let g = knn_graph_points(&pts, 9, true).unwrap();
        assert_eq!(g.num_edges(), 450);
        for i in 0..50 {
            assert_eq!(g.in_degree(i), 9);
            assert!(g.neighbours(i).contains(&i));
        }
    }

    #[test]
    fn high_dimensional_features_use_the_scan_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40;
        let d = 16;
        let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random()).collect()).unwrap();
        let g = knn_graph(&x, 5, true).unwrap();
        for i in 0..n {
            let mut d2: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(x.row(i), x.row(j)), j)).collect();
            d2.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut expected: Vec<usize> = d2[..4].iter().map(|p| p.1).collect();
            expected.push(i);
            expected.sort_unstable();
            assert_eq!(g.neighbours(i), expected.as_slice());
        }
    }

    #[test]
    fn tiny_radius_gives_self_loops() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let g = radius_graph(&pts, 0.5).unwrap();
        assert_eq!(g.num_edges(), 3);
    }

    #[test]
    fn radius_boundary_is_inclusive() {
        let pts = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]];
        let g = radius_graph(&pts, 0.05).unwrap();
        assert_eq!(g.neighbours(0), &[0, 1]);
        assert_eq!(g.neighbours(1), &[0, 1]);
    }

    #[test]
    fn radius_must_be_positive() {
        assert!(radius_graph(&[[0.0; 3]], 0.0).is_err());
    }
}
