//! On-disk clip format: one directory per clip with `manifest.json`,
//! `frames.bin` (little-endian f32, frame-major) and `labels.bin`
//! (u8 per pixel, 255 = ignore, unlabeled frames filled with 255).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stsc_core::numerics::DenseArray;
use stsc_core::synthetic::ClipConfig;
use stsc_core::types::{LabelMap, VideoClip, IGNORE};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub num_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub labeled_frames: Vec<usize>,
    #[serde(default)]
    pub pseudo: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ClipConfig>,
}

impl ClipManifest {
    pub fn for_clip(clip: &VideoClip, num_classes: usize) -> Self {
        Self {
            clip_id: clip.clip_id.clone(),
            num_frames: clip.num_frames(),
            channels: clip.channels(),
            height: clip.height(),
            width: clip.width(),
            dtype: "f32".into(),
            num_classes,
            class_names: (0..num_classes).map(|c| format!("class_{c}")).collect(),
            labeled_frames: clip.labeled_frame_indices(),
            pseudo: false,
            seed: None,
            config: None,
        }
    }
}

/// Writes `bytes` to `path` atomically via a sibling temp file + rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))?;
    Ok(())
}

pub fn write_clip(dir: &Path, clip: &VideoClip, manifest: &ClipManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut frames = Vec::with_capacity(clip.num_frames() * clip.channels() * clip.height() * clip.width() * 4);
    for frame in &clip.frames {
        for &v in frame.data() {
            frames.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let hw = clip.height() * clip.width();
    let mut labels = Vec::with_capacity(clip.num_frames() * hw);
    for l in &clip.labels {
        match l {
            Some(map) => labels.extend_from_slice(map.data()),
            None => labels.resize(labels.len() + hw, IGNORE),
        }
    }
    write_atomic(&dir.join("frames.bin"), &frames)?;
    write_atomic(&dir.join("labels.bin"), &labels)?;
    let json = serde_json::to_string_pretty(manifest).map_err(CliError::json(dir))?;
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<ClipManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(CliError::json(&path))
}

pub fn read_clip(dir: &Path) -> Result<(VideoClip, ClipManifest)> {
    let manifest = read_manifest(dir)?;
    let (t, c, h, w) = (
        manifest.num_frames,
        manifest.channels,
        manifest.height,
        manifest.width,
    );
    if manifest.dtype != "f32" {
        return Err(CliError::format(
            dir,
            format!("unsupported dtype {:?}", manifest.dtype),
        ));
    }
    let frames_path = dir.join("frames.bin");
    let raw = fs::read(&frames_path).map_err(CliError::io(&frames_path))?;
    let per_frame = c * h * w;
    if raw.len() != t * per_frame * 4 {
        return Err(CliError::format(
            &frames_path,
            format!("{} bytes, expected {}", raw.len(), t * per_frame * 4),
        ));
    }
    let mut frames = Vec::with_capacity(t);
    for ft in 0..t {
        let mut data = Vec::with_capacity(per_frame);
        for i in 0..per_frame {
            let off = (ft * per_frame + i) * 4;
            let bits: [u8; 4] = raw[off..off + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(bits) as f64);
        }
        frames.push(DenseArray::new(vec![c, h, w], data)?);
    }
    let labels_path = dir.join("labels.bin");
    let raw = fs::read(&labels_path).map_err(CliError::io(&labels_path))?;
    let hw = h * w;
    if raw.len() != t * hw {
        return Err(CliError::format(
            &labels_path,
            format!("{} bytes, expected {}", raw.len(), t * hw),
        ));
    }
    let mut labels = Vec::with_capacity(t);
    for ft in 0..t {
        if manifest.labeled_frames.contains(&ft) {
            labels.push(Some(LabelMap::new(
                h,
                w,
                raw[ft * hw..(ft + 1) * hw].to_vec(),
            )?));
        } else {
            labels.push(None);
        }
    }
    let clip = VideoClip {
        clip_id: manifest.clip_id.clone(),
        frames,
        labels,
    };
    clip.validate(manifest.num_classes)?;
    Ok((clip, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub clips: Vec<String>,
    pub num_classes: usize,
}

pub fn write_index(dir: &Path, index: &DatasetIndex) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let json = serde_json::to_string_pretty(index).map_err(CliError::json(dir))?;
    write_atomic(&dir.join("index.json"), json.as_bytes())
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(CliError::json(&path))
}

/// Loads every clip listed in a dataset's `index.json`, in index order.
pub fn read_dataset(dir: &Path) -> Result<(Vec<(VideoClip, ClipManifest)>, DatasetIndex)> {
    let index = read_index(dir)?;
    let clips = crate::threads::parallel_map(&index.clips, |id| read_clip(&dir.join(id)))?;
    Ok((clips, index))
}
