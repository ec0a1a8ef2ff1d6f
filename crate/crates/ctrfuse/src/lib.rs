//! File formats, dataset loading and the `ctrfuse` command line on top of
//! [`ctrfuse_core`].

pub mod artifacts;
pub mod cache;
pub mod cli;
pub mod commands;
pub mod config;
pub mod document;
pub mod error;
pub mod tsv;

pub use error::{CliError, Result};
