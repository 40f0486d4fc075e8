//! Per-frame inference: each frame's prediction depends on that frame
//! alone. Predictions are made at feature resolution and upsampled to the
//! input resolution by nearest neighbor.

use stsc_core::model::Model;
use stsc_core::numerics::DenseArray;
use stsc_core::pseudo::{harden, PseudoLabelConfig};
use stsc_core::types::{LabelMap, VideoClip};

use crate::error::Result;

/// Class probabilities for one frame at feature resolution.
pub fn frame_probabilities(model: &Model, frame: &DenseArray) -> Result<DenseArray> {
    let features = model.encode(frame)?;
    Ok(model.classify(&features)?)
}

/// Argmax prediction for one frame, upsampled to the frame's resolution.
pub fn predict_frame(model: &Model, frame: &DenseArray) -> Result<LabelMap> {
    let probs = frame_probabilities(model, frame)?;
    // Softmax outputs are strictly positive, so threshold 0 is plain argmax.
    let cfg = PseudoLabelConfig {
        threshold: 0.0,
        ..PseudoLabelConfig::default()
    };
    let (labels, _) = harden(&probs, &cfg)?;
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    Ok(labels.resample(h, w))
}

/// Predicted clip: same frames, every frame labeled with the prediction.
pub fn predict_clip(model: &Model, clip: &VideoClip) -> Result<VideoClip> {
    let labels = clip
        .frames
        .iter()
        .map(|frame| predict_frame(model, frame).map(Some))
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoClip {
        clip_id: clip.clip_id.clone(),
        frames: clip.frames.clone(),
        labels,
    })
}
