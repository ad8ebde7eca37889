//! Learnable graph layers with analytic gradients.

pub mod agc;
pub mod filter_net;
pub mod munegc;

pub use agc::{AgcCache, AgcGrad, AgcLayer};
pub use filter_net::{DynamicFilterNet, FilterCache};
pub use munegc::{Aggregation, EuclideanPolicy, MunegcCache, MunegcGraphs, MunegcLayer, MunegcSpec};
