//! Intention recognition from head motion and throat vibration, mapping of
//! recognised tokens to superlimb commands, and a simulated plant.

pub mod error;
pub mod head_dtw;
pub mod mapper;
pub mod metrics;
pub mod mfcc;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod signal_io;
pub mod sim;
pub mod synthgen;

pub use error::{Error, Result};
