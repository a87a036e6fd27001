//! Pipeline driver behind the `stfield` binary: configuration, per-stage
//! commands, the run manifest and heatmap rendering.

pub mod commands;
pub mod config;
pub mod heatmap;
pub mod manifest;
