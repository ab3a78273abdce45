//! Minimal neural-network toolkit: reverse-mode graph, GRU cell, Adam and the
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod gru;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{softmax, Graph, NodeId};
pub use gru::{gru_step, BoundGru, GruCell};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};
