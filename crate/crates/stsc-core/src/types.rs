//! Shared domain types: label maps and video clips.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// Reserved label excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// Per-pixel integer class labels with a reserved ignore value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(alloc::format!(
                "label map {}x{} needs {} entries, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Nearest-neighbor resample to a new spatial size.
    ///
    /// Source index for output cell `i` is `floor(i * src / dst)`, the same
    /// convention the inference path uses when upsampling predictions.
    pub fn resample(&self, height: usize, width: usize) -> LabelMap {
        let mut out = LabelMap::filled(height, width, IGNORE);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }
}

/// A sequence of frames with per-frame dense label maps; frames without
/// annotation carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    /// Per-frame intensity arrays, each shaped `[channels, height, width]`.
    pub frames: Vec<DenseArray>,
    /// Per-frame labels; `None` marks an unlabeled frame.
    pub labels: Vec<Option<LabelMap>>,
}

impl VideoClip {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn labeled_frame_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_some().then_some(i))
            .collect()
    }

    /// Checks frame/label agreement and label ranges.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data(alloc::format!(
                "clip {}: no frames",
                self.clip_id
            )));
        }
        if self.labels.len() != self.frames.len() {
            return Err(Error::Data(alloc::format!(
                "clip {}: {} frames but {} label slots",
                self.clip_id,
                self.frames.len(),
                self.labels.len()
            )));
        }
        let (c, h, w) = (self.channels(), self.height(), self.width());
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.shape() != [c, h, w] {
                return Err(Error::Data(alloc::format!(
                    "clip {}: frame {} shape {:?} != [{}, {}, {}]",
                    self.clip_id,
                    i,
                    frame.shape(),
                    c,
                    h,
                    w
                )));
            }
            if let Some(labels) = &self.labels[i] {
                if labels.height() != h || labels.width() != w {
                    return Err(Error::Data(alloc::format!(
                        "clip {}: frame {} labels {}x{} != {}x{}",
                        self.clip_id,
                        i,
                        labels.height(),
                        labels.width(),
                        h,
                        w
                    )));
                }
                for &l in labels.data() {
                    if l != IGNORE && usize::from(l) >= num_classes {
                        return Err(Error::Data(alloc::format!(
                            "clip {}: frame {} label {} out of range for {} classes",
                            self.clip_id,
                            i,
                            l,
                            num_classes
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
