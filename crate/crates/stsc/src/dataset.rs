//! Dataset-level helpers shared by the CLI and the acceptance tests.

use std::path::Path;

use stsc_core::metrics::{evaluate, MetricsReport};
use stsc_core::synthetic::{generate_clip, sparsify_labels, ClipConfig};

use crate::clipio::{read_clip, read_dataset, write_clip, write_index, ClipManifest, DatasetIndex};
use crate::error::{CliError, Result};
use crate::threads::parallel_map;

/// Generates `count` synthetic clips into `out_dir`. Clip i uses
/// `base.seed + i` and id `clip_{i:04}`; labels are kept on every
/// `keep_every`-th frame.
pub fn generate_dataset(
    out_dir: &Path,
    count: usize,
    base: &ClipConfig,
    keep_every: usize,
) -> Result<DatasetIndex> {
    base.validate()?;
    if keep_every == 0 {
        return Err(CliError::format(out_dir, "keep_every must be >= 1"));
    }
    let ids: Vec<String> = (0..count).map(|i| format!("clip_{i:04}")).collect();
    let entries: Vec<(usize, String)> = ids.iter().cloned().enumerate().collect();
    parallel_map(&entries, |(i, id)| {
        let cfg = ClipConfig {
            seed: base.seed.wrapping_add(*i as u64),
            ..base.clone()
        };
        let clip = generate_clip(&cfg, id)?;
        let clip = sparsify_labels(&clip, keep_every)?;
        let mut manifest = ClipManifest::for_clip(&clip, cfg.num_classes);
        manifest.seed = Some(cfg.seed);
        manifest.config = Some(cfg);
        write_clip(&out_dir.join(id), &clip, &manifest)
    })?;
    let index = DatasetIndex {
        clips: ids,
        num_classes: base.num_classes,
    };
    write_index(out_dir, &index)?;
    Ok(index)
}

/// Pairs prediction and ground-truth datasets by clip id and evaluates.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    num_classes: usize,
    vc_windows: &[usize],
) -> Result<MetricsReport> {
    let (gt, gt_index) = read_dataset(gt_dir)?;
    let pred_index = crate::clipio::read_index(pred_dir)?;
    let missing: Vec<&String> = gt_index
        .clips
        .iter()
        .filter(|id| !pred_index.clips.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::format(
            pred_dir,
            format!("missing predictions for clips {missing:?}"),
        ));
    }
    let pairs = parallel_map(&gt, |(gt_clip, _)| {
        let (pred_clip, _) = read_clip(&pred_dir.join(&gt_clip.clip_id))?;
        Ok((pred_clip, gt_clip.clone()))
    })?;
    Ok(evaluate(&pairs, num_classes, vc_windows)?)
}
