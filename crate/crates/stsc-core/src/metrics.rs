//! Evaluation metrics: mean IoU, frequency-weighted IoU and the
//! video-consistency scores VC_n.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{LabelMap, VideoClip, IGNORE};

/// Row = ground truth, column = prediction; ignore pixels excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Dimension(format!(
                "confusion matrices for {} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// From explicit counts, row-major. Test helper and oracle entry point.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Dimension(format!(
                "expected {} counts, got {}",
                num_classes * num_classes,
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }
}

/// Accumulates prediction/ground-truth agreement over one frame.
pub fn confusion(
    pred: &LabelMap,
    gt: &LabelMap,
    num_classes: usize,
    ignore: u8,
) -> Result<ConfusionMatrix> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "pred {}x{} vs gt {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g == ignore {
            continue;
        }
        if usize::from(g) >= num_classes || usize::from(p) >= num_classes {
            return Err(Error::Data(format!(
                "label out of range: gt {} pred {} with {} classes",
                g, p, num_classes
            )));
        }
        cm.counts[usize::from(g) * num_classes + usize::from(p)] += 1;
    }
    Ok(cm)
}

/// Per-class IoU; `None` for classes absent from both gt and prediction.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    let n = cm.num_classes;
    (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let fp: u64 = (0..n).filter(|&g| g != c).map(|g| cm.get(g, c)).sum();
            let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

/// Mean IoU over classes present in gt or prediction.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = per_class_iou(cm).into_iter().flatten().collect();
    if ious.is_empty() {
        return Err(Error::Data("mIoU undefined: all classes absent".into()));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// IoU weighted by ground-truth class frequency.
pub fn wiou(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("WIoU undefined: no evaluated pixels".into()));
    }
    let ious = per_class_iou(cm);
    let n = cm.num_classes;
    let mut acc = 0.0;
    for c in 0..n {
        let gt_count: u64 = (0..n).map(|p| cm.get(c, p)).sum();
        if gt_count == 0 {
            continue;
        }
        let iou = ious[c].unwrap_or(0.0);
        acc += (gt_count as f64 / total as f64) * iou;
    }
    Ok(acc)
}

/// Video consistency over sliding windows of `n` consecutive frames.
///
/// Within a window, D is the set of pixels whose gt label is identical and
/// not IGNORE across all frames; the score is the fraction of D whose
/// prediction is also identical across the window and equals the gt label.
/// Windows with empty D are skipped.
pub fn video_consistency(preds: &[LabelMap], gts: &[LabelMap], n: usize) -> Result<f64> {
    match video_consistency_scores(preds, gts, n)? {
        Some(mean) => Ok(mean),
        None => Err(Error::Data(format!(
            "no VC{} windows with static ground truth",
            n
        ))),
    }
}

/// Like [`video_consistency`] but returns `None` when every window has an
/// empty static-gt pixel set, leaving the mean undefined.
pub fn video_consistency_scores(
    preds: &[LabelMap],
    gts: &[LabelMap],
    n: usize,
) -> Result<Option<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("window size {n} must be >= 2")));
    }
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if preds.len() < n {
        return Err(Error::Data(format!(
            "clip of {} frames too short for VC{}",
            preds.len(),
            n
        )));
    }
    let (h, w) = (gts[0].height(), gts[0].width());
    for (p, g) in preds.iter().zip(gts) {
        if p.height() != h || p.width() != w || g.height() != h || g.width() != w {
            return Err(Error::Dimension("frame sizes differ within clip".into()));
        }
    }
    let mut window_scores = Vec::new();
    for start in 0..=(preds.len() - n) {
        let mut denom = 0u64;
        let mut num = 0u64;
        for idx in 0..h * w {
            let g0 = gts[start].data()[idx];
            if g0 == IGNORE {
                continue;
            }
            let gt_static = (1..n).all(|k| gts[start + k].data()[idx] == g0);
            if !gt_static {
                continue;
            }
            denom += 1;
            let pred_ok = (0..n).all(|k| preds[start + k].data()[idx] == g0);
            if pred_ok {
                num += 1;
            }
        }
        if denom > 0 {
            window_scores.push(num as f64 / denom as f64);
        }
    }
    if window_scores.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        window_scores.iter().sum::<f64>() / window_scores.len() as f64,
    ))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub miou: f64,
    pub wiou: f64,
    /// Window size → mean VC over clips with enough frames.
    pub vc: Vec<(usize, f64)>,
    pub per_class_iou: Vec<f64>,
    pub pixel_counts: Vec<u64>,
}

/// Labeled frames of a clip as (pred, gt) pairs, in frame order.
fn labeled_pairs<'a>(pred: &'a VideoClip, gt: &'a VideoClip) -> Result<Vec<(&'a LabelMap, &'a LabelMap)>> {
    if pred.num_frames() != gt.num_frames() {
        return Err(Error::Data(format!(
            "clip {}: {} predicted frames vs {} ground-truth frames",
            gt.clip_id,
            pred.num_frames(),
            gt.num_frames()
        )));
    }
    let mut pairs = Vec::new();
    for t in 0..gt.num_frames() {
        match (&pred.labels[t], &gt.labels[t]) {
            (Some(p), Some(g)) => pairs.push((p, g)),
            (None, Some(_)) => {
                return Err(Error::Data(format!(
                    "clip {}: frame {} has ground truth but no prediction",
                    gt.clip_id, t
                )))
            }
            _ => {}
        }
    }
    Ok(pairs)
}

/// Clip-set evaluation: confusion accumulated globally for mIoU/WIoU, VC
/// averaged per clip over clips long enough for each window size.
pub fn evaluate(
    clips: &[(VideoClip, VideoClip)],
    num_classes: usize,
    vc_windows: &[usize],
) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    let mut vc_sums: Vec<(usize, f64, usize)> = vc_windows.iter().map(|&n| (n, 0.0, 0)).collect();
    for (pred, gt) in clips {
        let pairs = labeled_pairs(pred, gt)
            .map_err(|e| Error::Data(format!("clip {}: {}", gt.clip_id, e)))?;
        for (p, g) in &pairs {
            cm.add(&confusion(p, g, num_classes, IGNORE)?)?;
        }
        let preds: Vec<LabelMap> = pairs.iter().map(|(p, _)| (*p).clone()).collect();
        let gts: Vec<LabelMap> = pairs.iter().map(|(_, g)| (*g).clone()).collect();
        for entry in vc_sums.iter_mut() {
            if preds.len() >= entry.0 {
                if let Some(mean) = video_consistency_scores(&preds, &gts, entry.0)? {
                    entry.1 += mean;
                    entry.2 += 1;
                }
            }
        }
    }
    let per_class = per_class_iou(&cm)
        .into_iter()
        .map(|v| v.unwrap_or(0.0))
        .collect();
    let pixel_counts = (0..num_classes)
        .map(|c| (0..num_classes).map(|p| cm.get(c, p)).sum())
        .collect();
    Ok(MetricsReport {
        miou: miou(&cm)?,
        wiou: wiou(&cm)?,
        vc: vc_sums
            .into_iter()
            .filter(|&(_, _, count)| count > 0)
            .map(|(n, sum, count)| (n, sum / count as f64))
            .collect(),
        per_class_iou: per_class,
        pixel_counts,
    })
}

impl MetricsReport {
    pub fn vc_for(&self, n: usize) -> Option<f64> {
        self.vc.iter().find(|&&(w, _)| w == n).map(|&(_, v)| v)
    }

    /// Six-decimal JSON rendering used by the `eval` subcommand.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{");
        s.push_str(&format!("\"miou\": {:.6}, \"wiou\": {:.6}", self.miou, self.wiou));
        for &(n, v) in &self.vc {
            s.push_str(&format!(", \"vc{}\": {:.6}", n, v));
        }
        s.push_str(", \"per_class\": [");
        for (i, v) in self.per_class_iou.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&format!("{:.6}", v));
        }
        s.push_str("], \"pixels\": [");
        for (i, v) in self.pixel_counts.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&format!("{}", v));
        }
        s.push_str("]}");
        s
    }
}
