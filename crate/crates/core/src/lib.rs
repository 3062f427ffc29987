pub mod analysis;
pub mod data;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod par;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
