//! Minimal differentiable building blocks for the policy network.

pub mod params;
pub mod tape;

pub use params::{load_checkpoint, save_checkpoint, Adam, AdamConfig, ParamStore};
pub use tape::{normalize_rows, Adjacency, Grads, Tape, Var};
