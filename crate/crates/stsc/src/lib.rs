//! IO, file formats and pipeline plumbing around `stsc-core`: the clip
//! and checkpoint disk formats, dataset generation, pseudo-label
//! generation, directory-level training and evaluation.

pub mod checkpoint;
pub mod clipio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod infer;
pub mod pseudo_gen;
pub mod threads;
pub mod trainer;

pub use error::{CliError, Result};
