//! Core algorithms for spatial-temporal semantically consistent video scene
//! parsing at desk scale: a pixel-level cross-frame contrastive loss with
//! analytic gradients, a small convolutional segmentation model with
//! hand-derived backpropagation, confidence-thresholded pseudo-labeling,
//! video-consistency evaluation metrics, and a synthetic moving-shapes
//! benchmark that reproduces the changing-background failure mode.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the CLI
//! live in the companion `stsc` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pseudo;
pub mod synthetic;
pub mod train;
pub mod types;

mod fmath;

pub use error::{Error, Result};
pub use types::{LabelMap, VideoClip, IGNORE};
