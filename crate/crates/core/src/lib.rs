pub mod attention;
pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
