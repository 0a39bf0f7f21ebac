pub mod aig;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mcts;
pub mod objective;
pub mod selftest;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
