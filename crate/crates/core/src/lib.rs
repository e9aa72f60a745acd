pub mod corpus;
pub mod distributions;
pub mod error;
pub mod parallel;
pub mod predict;
pub mod regression;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod topic_state;

pub use error::{Error, Result};
