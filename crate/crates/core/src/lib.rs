pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod train;

pub use config::{ModelConfig, RunConfig, TrainConfig};
pub use error::{Error, Result};
