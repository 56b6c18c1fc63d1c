//! Batch and service front end for the worm screening pipeline: workspace
//! layout, model files, per-well orchestration, the CLI commands and the
//! annotation HTTP API.

pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod process;
pub mod record;
pub mod workspace;
pub mod server;
