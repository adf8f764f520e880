pub mod airl;
pub mod cli;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod rl;
pub mod scene;

pub use error::{Error, Result};
