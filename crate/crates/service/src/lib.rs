//! HTTP service and command-line interface around the `wavebender` library.

pub mod api;
pub mod cli;
pub mod config;

pub use api::{router, AppState, VocoderInfo};
pub use config::{ProjectConfig, ServiceConfig};
