//! Command-line pipeline and batched inference service.

pub mod app;
pub mod model;
pub mod serve;
pub mod stats;

pub use app::{main_with, Cli, Command};
