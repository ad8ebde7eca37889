//! Minimal differentiable numeric core: dense tensors, linear layers,
//! activations, losses, an optimizer and gradient verification.

pub mod activation;
pub mod checkpoint;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod params;
pub mod reduce;
pub mod tensor;

pub use activation::{relu, relu_backward, sigmoid, softmax, tanh, tanh_backward, tanh_scalar, Dropout};
pub use checkpoint::{Checkpoint, Entry, EntryData};
pub use gradcheck::{finite_difference_check, FdConfig, FdReport};
pub use linear::LinearLayer;
pub use loss::{class_weights_from_counts, weighted_cross_entropy, ClassWeights};
pub use norm::{NodeNorm, NormCache};
pub use optim::Sgd;
pub use params::{Grads, Param, ParamId, ParamStore};
pub use reduce::{global_average_pool, global_average_pool_backward};
pub use tensor::Tensor;
