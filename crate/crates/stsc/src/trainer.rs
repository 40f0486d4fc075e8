//! Directory-level training: loads ground-truth and optional pseudo-label
//! clip pools, merges them with equal weight, trains, and writes the
//! checkpoint plus `history.json`.

use std::path::Path;

use stsc_core::train::{train, TrainConfig, TrainHistory};
use stsc_core::types::VideoClip;

use crate::checkpoint::save_checkpoint;
use crate::clipio::{read_dataset, write_atomic};
use crate::error::{CliError, Result};

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let cfg: TrainConfig = crate::config::load_partial(path, TrainConfig::default())?;
    cfg.validate()?;
    Ok(cfg)
}

pub struct TrainOutcome {
    pub model: stsc_core::model::Model,
    pub history: TrainHistory,
}

pub fn load_training_clips(data_dir: &Path, pseudo_dir: Option<&Path>) -> Result<Vec<VideoClip>> {
    let (gt, _) = read_dataset(data_dir)?;
    let mut clips: Vec<VideoClip> = gt.into_iter().map(|(c, _)| c).collect();
    if let Some(dir) = pseudo_dir {
        let (pseudo, _) = read_dataset(dir)?;
        clips.extend(pseudo.into_iter().map(|(c, _)| c));
    }
    Ok(clips)
}

/// Trains on the merged clip pool and writes checkpoint + history to
/// `out_dir`.
pub fn run_training(
    data_dir: &Path,
    pseudo_dir: Option<&Path>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let clips = load_training_clips(data_dir, pseudo_dir)?;
    let (model, history) = train(&clips, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    save_checkpoint(out_dir, &model)?;
    let json = serde_json::to_string_pretty(&history).map_err(CliError::json(out_dir))?;
    write_atomic(&out_dir.join("history.json"), json.as_bytes())?;
    Ok(TrainOutcome { model, history })
}
