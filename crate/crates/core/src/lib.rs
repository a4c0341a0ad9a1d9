pub mod baseline;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod simplex;
pub mod solver;
pub mod spa;
pub mod systems;

pub use error::{Error, Result};
