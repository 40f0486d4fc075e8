//! Pseudo-label generation: per-frame teacher inference, optional uniform
//! probability averaging over several teacher checkpoints, confidence
//! thresholding, labels written back in the clip format.

use std::path::Path;

use stsc_core::model::Model;
use stsc_core::numerics::DenseArray;
use stsc_core::pseudo::{harden, PseudoLabelConfig, PseudoLabelStats};
use stsc_core::types::VideoClip;

use crate::clipio::{read_dataset, write_clip, write_index, ClipManifest};
use crate::error::{CliError, Result};
use crate::infer::frame_probabilities;
use crate::threads::parallel_map;

/// Mean of the teachers' per-pixel class distributions for one frame.
fn ensemble_probabilities(teachers: &[Model], frame: &DenseArray) -> Result<DenseArray> {
    let mut mean = frame_probabilities(&teachers[0], frame)?;
    for teacher in &teachers[1..] {
        let probs = frame_probabilities(teacher, frame)?;
        if probs.shape() != mean.shape() {
            return Err(stsc_core::Error::Dimension(format!(
                "teacher outputs disagree: {:?} vs {:?}",
                probs.shape(),
                mean.shape()
            ))
            .into());
        }
        for (m, p) in mean.data_mut().iter_mut().zip(probs.data()) {
            *m += p;
        }
    }
    let scale = 1.0 / teachers.len() as f64;
    for m in mean.data_mut() {
        *m *= scale;
    }
    Ok(mean)
}

/// Pseudo-labels every frame of a clip. Hardening happens at feature
/// resolution, where the teacher decisions live; the surviving labels are
/// then upsampled to the input resolution by nearest neighbor.
pub fn pseudo_label_clip(
    teachers: &[Model],
    clip: &VideoClip,
    threshold: f64,
) -> Result<(VideoClip, PseudoLabelStats)> {
    let cfg = PseudoLabelConfig {
        threshold,
        ..PseudoLabelConfig::default()
    };
    let num_classes = teachers[0].config.num_classes;
    let mut stats = PseudoLabelStats::new(num_classes);
    let mut labels = Vec::with_capacity(clip.num_frames());
    for frame in &clip.frames {
        let probs = ensemble_probabilities(teachers, frame)?;
        let (hard, frame_stats) = harden(&probs, &cfg)?;
        stats.merge(&frame_stats);
        labels.push(Some(hard.resample(clip.height(), clip.width())));
    }
    let labeled = VideoClip {
        clip_id: clip.clip_id.clone(),
        frames: clip.frames.clone(),
        labels,
    };
    Ok((labeled, stats))
}

/// Pseudo-labels a whole dataset directory into `out_dir`.
pub fn generate(
    teachers: &[Model],
    in_dir: &Path,
    out_dir: &Path,
    threshold: f64,
) -> Result<PseudoLabelStats> {
    if teachers.is_empty() {
        return Err(CliError::format(in_dir, "at least one teacher checkpoint required"));
    }
    let (clips, mut index) = read_dataset(in_dir)?;
    index.num_classes = teachers[0].config.num_classes;
    let per_clip = parallel_map(&clips, |(clip, _)| {
        let (labeled, stats) = pseudo_label_clip(teachers, clip, threshold)?;
        let mut manifest = ClipManifest::for_clip(&labeled, index.num_classes);
        manifest.pseudo = true;
        write_clip(&out_dir.join(&labeled.clip_id), &labeled, &manifest)?;
        Ok(stats)
    })?;
    write_index(out_dir, &index)?;
    let mut total = PseudoLabelStats::new(index.num_classes);
    for stats in &per_clip {
        total.merge(stats);
    }
    Ok(total)
}
