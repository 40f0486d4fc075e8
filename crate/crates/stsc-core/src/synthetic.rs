//! Labeled synthetic video clips: foreground shapes that persist while the
//! surrounding background switches class and texture mid-clip.
//!
//! The benchmark is built so that a per-frame segmenter relying on
//! surrounding-context cues flips its foreground predictions at the
//! background switch, while the shapes themselves are unchanged.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmath;
use crate::numerics::DenseArray;
use crate::types::{LabelMap, VideoClip};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClipConfig {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    /// Total class count; the first one or two ids are background classes,
    /// the rest are foreground shape classes.
    pub num_classes: usize,
    pub shapes_per_clip: usize,
    /// Pixels per frame each shape translates.
    pub motion_speed: f64,
    /// Frame index at which the background class and texture switch.
    pub background_change_frame: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_frames: 16,
            num_classes: 4,
            shapes_per_clip: 3,
            motion_speed: 1.0,
            background_change_frame: 8,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(Error::Config(format!(
                "num_frames must be >= 2, got {}",
                self.num_frames
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "frames must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.background_change_frame >= self.num_frames {
            return Err(Error::Config(format!(
                "background_change_frame {} out of range for {} frames",
                self.background_change_frame, self.num_frames
            )));
        }
        if self.num_classes < 3 || self.num_classes > 254 {
            return Err(Error::Config(format!(
                "num_classes must be in [3, 254], got {}",
                self.num_classes
            )));
        }
        if self.shapes_per_clip == 0 {
            return Err(Error::Config("shapes_per_clip must be >= 1".into()));
        }
        if !(self.motion_speed.is_finite() && self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("motion_speed/noise_std invalid".into()));
        }
        Ok(())
    }

    /// Number of background classes: two when there is room (the switch
    /// changes the class), otherwise one (the switch changes texture only).
    pub fn num_background_classes(&self) -> usize {
        if self.num_classes >= 4 {
            2
        } else {
            1
        }
    }

    pub fn background_class(&self, frame: usize) -> u8 {
        if frame >= self.background_change_frame && self.num_background_classes() == 2 {
            1
        } else {
            0
        }
    }

    pub fn background_intensity(&self, frame: usize) -> f64 {
        if frame >= self.background_change_frame {
            0.85
        } else {
            0.15
        }
    }

    pub fn shape_classes(&self) -> core::ops::Range<u8> {
        (self.num_background_classes() as u8)..(self.num_classes as u8)
    }

    /// Fixed base intensity of a foreground class, between the two
    /// background intensities so boundary mixtures are ambiguous.
    pub fn shape_intensity(&self, class: u8) -> f64 {
        let first = self.num_background_classes() as u8;
        let n = (self.num_classes as u8 - first).max(1);
        let j = (class - first) as f64;
        if n == 1 {
            0.5
        } else {
            0.35 + 0.35 * j / (n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Circle,
}

/// One moving shape with its full deterministic trajectory parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub class: u8,
    /// Half extent (rectangles) or radius (circles) in pixels.
    pub half_size: usize,
    pub start_row: f64,
    pub start_col: f64,
    pub vel_row: f64,
    pub vel_col: f64,
}

impl Shape {
    /// Integer center at frame `t` from the motion equation.
    pub fn center_at(&self, t: usize) -> (i64, i64) {
        let r = self.start_row + self.vel_row * t as f64;
        let c = self.start_col + self.vel_col * t as f64;
        (fmath::round(r) as i64, fmath::round(c) as i64)
    }

    fn covers(&self, row: i64, col: i64, t: usize) -> bool {
        let (cr, cc) = self.center_at(t);
        let (dr, dc) = (row - cr, col - cc);
        let h = self.half_size as i64;
        match self.kind {
            ShapeKind::Rectangle => dr.abs() <= h && dc.abs() <= h,
            ShapeKind::Circle => dr * dr + dc * dc <= h * h,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the spare is discarded to keep the stream simple.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
}

/// Deterministic shape parameters for a config; the same RNG stream prefix
/// `generate_clip` consumes, so tests can recompute trajectories.
pub fn sample_shapes(config: &ClipConfig) -> Result<Vec<Shape>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(sample_shapes_with(&mut rng, config))
}

fn constrained_start(
    rng: &mut ChaCha8Rng,
    extent: usize,
    margin: f64,
    vel: &mut f64,
    t_last: f64,
) -> f64 {
    let lo_base = margin;
    let hi_base = extent as f64 - 1.0 - margin;
    let (mut lo, mut hi) = (
        lo_base - (*vel * t_last).min(0.0),
        hi_base - (*vel * t_last).max(0.0),
    );
    if lo >= hi {
        *vel = 0.0;
        lo = lo_base;
        hi = hi_base.max(lo_base + 1.0);
    }
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Renders a fully labeled clip; deterministic function of the config.
pub fn generate_clip(config: &ClipConfig, clip_id: &str) -> Result<VideoClip> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes = sample_shapes_with(&mut rng, config);
    let (h, w) = (config.height, config.width);
    let mut frames = Vec::with_capacity(config.num_frames);
    let mut labels = Vec::with_capacity(config.num_frames);
    for t in 0..config.num_frames {
        let mut intensity = vec![config.background_intensity(t); h * w];
        let mut label = LabelMap::filled(h, w, config.background_class(t));
        for shape in &shapes {
            let value = config.shape_intensity(shape.class);
            let (cr, cc) = shape.center_at(t);
            let half = shape.half_size as i64;
            let r0 = (cr - half).max(0) as usize;
            let r1 = ((cr + half).min(h as i64 - 1)).max(0) as usize;
            let c0 = (cc - half).max(0) as usize;
            let c1 = ((cc + half).min(w as i64 - 1)).max(0) as usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if shape.covers(r as i64, c as i64, t) {
                        intensity[r * w + c] = value;
                        label.set(r, c, shape.class);
                    }
                }
            }
        }
        if config.noise_std > 0.0 {
            for v in intensity.iter_mut() {
                *v += config.noise_std * standard_normal(&mut rng);
            }
        }
        frames.push(DenseArray::new(vec![1, h, w], intensity)?);
        labels.push(Some(label));
    }
    Ok(VideoClip {
        clip_id: String::from(clip_id),
        frames,
        labels,
    })
}

fn sample_shapes_with(rng: &mut ChaCha8Rng, config: &ClipConfig) -> Vec<Shape> {
    let classes: Vec<u8> = config.shape_classes().collect();
    let min_half = (config.height.min(config.width) / 10).max(2);
    let max_half = (config.height.min(config.width) / 5).max(min_half + 1);
    let mut shapes = Vec::with_capacity(config.shapes_per_clip);
    for i in 0..config.shapes_per_clip {
        let kind = if i % 2 == 0 {
            ShapeKind::Rectangle
        } else {
            ShapeKind::Circle
        };
        let class = classes[rng.gen_range(0..classes.len())];
        let half_size = rng.gen_range(min_half..max_half);
        let angle = rng.gen::<f64>() * 2.0 * core::f64::consts::PI;
        let mut vel_row = config.motion_speed * fmath::sin(angle);
        let mut vel_col = config.motion_speed * fmath::cos(angle);
        let t_last = (config.num_frames - 1) as f64;
        let margin = half_size as f64 + 1.0;
        let start_row = constrained_start(rng, config.height, margin, &mut vel_row, t_last);
        let start_col = constrained_start(rng, config.width, margin, &mut vel_col, t_last);
        shapes.push(Shape {
            kind,
            class,
            half_size,
            start_row,
            start_col,
            vel_row,
            vel_col,
        });
    }
    shapes
}

/// Keeps labels only on frames whose index is a multiple of `keep_every`.
pub fn sparsify_labels(clip: &VideoClip, keep_every: usize) -> Result<VideoClip> {
    if keep_every == 0 {
        return Err(Error::Config("keep_every must be >= 1".into()));
    }
    let mut out = clip.clone();
    for (i, slot) in out.labels.iter_mut().enumerate() {
        if i % keep_every != 0 {
            *slot = None;
        }
    }
    Ok(out)
}
