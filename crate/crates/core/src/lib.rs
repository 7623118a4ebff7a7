pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod normalize;
pub mod pairs;
pub mod pipeline;
pub mod seed;

pub use error::{Error, ErrorCategory, Result};
