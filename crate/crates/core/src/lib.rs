//! Deterministic simulator for decentralized federated learning.
//!
//! Clients train a small convolutional network on local data, then mix
//! parameters with their neighbors over a communication graph instead of
//! sending them to a central server. The crate covers:
//!
//! * [`model`]: the network, its gradients, five optimizers and model distances
//! * [`data`]: IDX loading, a synthetic digit stand-in, and the partitioning,
//!   sharing and normalization schemes used to build heterogeneous clients
//! * [`topology`]: communication graphs and their Laplacian spectrum
//! * [`segment`]: splitting a model into shareable units
//! * [`aggregation`]: consensus, direct averaging, FedAvg and segmented mixing
//! * [`sim`]: the experiment loop and its metrics
//!
//! Every random choice is drawn from a stream keyed by the run seed and the
//! role of the draw (see [`rng`]), so results do not depend on thread count.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops read
// better than iterator chains in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregation;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod segment;
pub mod sim;
pub mod topology;

pub use error::{DflError, Result};
pub use model::{
    gradient, init_params, loss_and_gradient, model_distance, nll_loss, Architecture, InitMode,
    LayerKind, LayerSpec, ModelParams, OptimizerKind, OptimizerState,
};
pub use topology::Graph;
