pub mod encoders;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod mpn;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod rounding;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
