//! Command-line front end: corpus synthesis, training, evaluation, replay,
//! and live sessions streaming telemetry over a WebSocket.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod protocol;
pub mod server;
pub mod session;
pub mod telemetry;

pub use error::{AppError, AppResult};
