//! Online detection of anomalous subtrajectories on road networks, trained
//! from noisy labels derived from transition frequencies.

pub mod asdnet;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod groupstats;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod roadnet;
pub mod rsrnet;
pub mod synthgen;
pub mod trajio;

pub use error::{Error, Result};
