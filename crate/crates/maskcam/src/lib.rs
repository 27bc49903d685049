//! File formats, experiment configuration and the `maskcam` command line
//! on top of `maskcam-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
