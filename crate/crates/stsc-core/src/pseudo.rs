//! Confidence-thresholded hard pseudo-labels from teacher probabilities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::LabelMap;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoLabelConfig {
    /// A pixel keeps its argmax label only when the max probability is
    /// strictly greater than this.
    pub threshold: f64,
    pub ignore: u8,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            ignore: crate::types::IGNORE,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoLabelStats {
    pub total_pixels: u64,
    pub labeled_pixels: u64,
    pub per_class_counts: Vec<u64>,
}

impl PseudoLabelStats {
    pub fn new(num_classes: usize) -> Self {
        Self {
            total_pixels: 0,
            labeled_pixels: 0,
            per_class_counts: vec![0; num_classes],
        }
    }

    pub fn coverage(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.labeled_pixels as f64 / self.total_pixels as f64
        }
    }

    pub fn merge(&mut self, other: &PseudoLabelStats) {
        self.total_pixels += other.total_pixels;
        self.labeled_pixels += other.labeled_pixels;
        if self.per_class_counts.len() < other.per_class_counts.len() {
            self.per_class_counts.resize(other.per_class_counts.len(), 0);
        }
        for (a, b) in self.per_class_counts.iter_mut().zip(&other.per_class_counts) {
            *a += b;
        }
    }
}

/// Argmax where the max probability strictly exceeds the threshold,
/// otherwise IGNORE. Argmax ties break toward the lowest class index.
///
/// `probs` is `[num_classes, h, w]` of per-pixel distributions.
pub fn harden(
    probs: &crate::numerics::DenseArray,
    cfg: &PseudoLabelConfig,
) -> Result<(LabelMap, PseudoLabelStats)> {
    cfg.validate()?;
    let shape = probs.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "probabilities shape {:?}, want [C,h,w]",
            shape
        )));
    }
    let (num_classes, h, w) = (shape[0], shape[1], shape[2]);
    if num_classes == 0 || num_classes > usize::from(cfg.ignore) {
        return Err(Error::Config(format!(
            "{} classes incompatible with ignore id {}",
            num_classes, cfg.ignore
        )));
    }
    let hw = h * w;
    let data = probs.data();
    let mut labels = LabelMap::filled(h, w, cfg.ignore);
    let mut stats = PseudoLabelStats::new(num_classes);
    stats.total_pixels = hw as u64;
    for idx in 0..hw {
        let mut best = 0usize;
        let mut best_p = data[idx];
        for c in 1..num_classes {
            let p = data[c * hw + idx];
            if p > best_p {
                best = c;
                best_p = p;
            }
        }
        if best_p > cfg.threshold {
            labels.data_mut()[idx] = best as u8;
            stats.labeled_pixels += 1;
            stats.per_class_counts[best] += 1;
        }
    }
    Ok((labels, stats))
}
