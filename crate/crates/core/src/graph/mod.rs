//! Neighbourhood construction in Euclidean and feature space, and edge attributes.

pub mod attributes;
pub mod kdtree;
pub mod neighbourhood;

pub use attributes::{
    cartesian_to_spherical, edge_attributes, edge_attributes_backward, write_edge_list, AttributeConfig, EdgeAttributes,
    FeatureMode, PositionalMode,
};
pub use kdtree::{sq_dist, KdTree};
pub use neighbourhood::{knn_graph, knn_graph_points, radius_graph, GraphPolicy, NeighbourhoodGraph, Space};
