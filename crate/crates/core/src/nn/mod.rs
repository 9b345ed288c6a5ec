//! Minimal dense autodiff, parameters, optimiser and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use checkpoint::Checkpoint;
pub use graph::{Grads, Graph, Mat, Var};
pub use layers::{dropout, LayerNorm, Linear};
pub use optim::{cosine_lr, Adam};
pub use params::{ParamId, ParamStore};
