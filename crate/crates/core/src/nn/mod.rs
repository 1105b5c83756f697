//! Layers, nonlinearities and losses on top of the weight stores.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod lstm;
pub mod mlp;
pub mod store;

pub use mlp::{mlp_forward_backward, Layer, Network, Pass};
pub use store::{CrossbarStore, ExactStore, StoreArgs, WeightStore};
