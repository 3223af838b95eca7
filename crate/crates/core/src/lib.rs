pub mod attack;
pub mod classifier;
pub mod ddb;
pub mod error;
pub mod experiment;
pub mod ks;
pub mod scenario;

pub use error::{Error, Result};
