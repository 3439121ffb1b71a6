pub mod attention;
pub mod error;
pub mod flow;
pub mod harness;
pub mod media;
pub mod model;
pub mod plane;
pub mod rng;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};
