//! Joint optimization of the segmentation and consistency objectives over
//! clip datasets, with query/reference frame-pair sampling.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{self, StclConfig};
use crate::model::{Model, ModelConfig, Params};
use crate::types::{VideoClip, IGNORE};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Largest |k| when pairing a reference frame t+k with query frame t.
    pub max_frame_gap: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub stcl: StclConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.2,
            max_frame_gap: 3,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            iterations: 400,
            seed: 0,
            model: ModelConfig::default(),
            stcl: StclConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stcl.validate()?;
        if self.max_frame_gap == 0 {
            return Err(Error::Config("max_frame_gap must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum/weight_decay out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub iteration: usize,
    pub l_seg: f64,
    pub l_stcl: f64,
    pub total: f64,
    pub anchor_count: usize,
    pub learning_rate: f64,
}

pub type TrainHistory = Vec<StepRecord>;

/// Uniformly picks a labeled query frame t, then a labeled reference t+k
/// with k nonzero in [-K, K]. `None` when the drawn t has no valid partner.
pub fn sample_pair(clip: &VideoClip, max_gap: usize, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
    let labeled = clip.labeled_frame_indices();
    if labeled.is_empty() || clip.num_frames() < 2 {
        return None;
    }
    let t = labeled[rng.gen_range(0..labeled.len())];
    let mut offsets: Vec<i64> = Vec::new();
    for k in 1..=max_gap as i64 {
        for s in [-k, k] {
            let r = t as i64 + s;
            if r >= 0 && (r as usize) < clip.num_frames() && clip.labels[r as usize].is_some() {
                offsets.push(s);
            }
        }
    }
    if offsets.is_empty() {
        return None;
    }
    offsets.sort_unstable();
    let k = offsets[rng.gen_range(0..offsets.len())];
    Some((t, (t as i64 + k) as usize))
}

/// SGD with momentum and decoupled-from-nothing classic weight decay
/// (decay folded into the gradient before the momentum update).
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Params,
}

impl SgdState {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            velocity: Params::zeros(config),
        }
    }

    pub fn apply(&mut self, model: &mut Model, grads: &Params, cfg: &TrainConfig) {
        for (((_, param), (_, grad)), (_, vel)) in model
            .params
            .arrays_mut()
            .into_iter()
            .zip(grads.arrays())
            .zip(self.velocity.arrays_mut())
        {
            for i in 0..param.len() {
                let g = grad[i] + cfg.weight_decay * param[i];
                vel[i] = cfg.momentum * vel[i] + g;
                param[i] -= cfg.learning_rate * vel[i];
            }
        }
    }
}

/// One optimization step on a (query, reference) frame pair.
///
/// Labels are nearest-neighbor downsampled to feature resolution; L_seg is
/// computed on the query frame only, the consistency loss over both frames'
/// embeddings. When `lambda2` is zero the consistency path is skipped
/// entirely so the update is bit-identical to plain cross-entropy training.
pub fn train_step(
    model: &mut Model,
    sgd: &mut SgdState,
    clip: &VideoClip,
    pair: (usize, usize),
    cfg: &TrainConfig,
    stcl_seed: u64,
    iteration: usize,
) -> Result<StepRecord> {
    let (t, r) = pair;
    let query = &clip.frames[t];
    let reference = &clip.frames[r];
    let labels_q_full = clip.labels[t]
        .as_ref()
        .ok_or_else(|| Error::State(format!("query frame {t} unlabeled")))?;
    let labels_r_full = clip.labels[r]
        .as_ref()
        .ok_or_else(|| Error::State(format!("reference frame {r} unlabeled")))?;
    let (fh, fw) = model.config.feature_extent(clip.height(), clip.width());
    let labels_q = labels_q_full.resample(fh, fw);

    let scale = |m: &crate::numerics::DenseArray, s: f64| {
        let data: Vec<f64> = m.data().iter().map(|&v| v * s).collect();
        crate::numerics::DenseArray::new(m.shape().to_vec(), data).unwrap()
    };
    // With the consistency weight at zero the reference frame is not
    // forwarded at all, so the update (and BN running statistics) match
    // plain single-frame cross-entropy training exactly.
    let (pass, ce, l_stcl, anchor_count, grads) = if cfg.lambda2 > 0.0 {
        let pass = model.forward_train(&[query, reference])?;
        let ce = losses::cross_entropy(&pass.logits[0], &labels_q, IGNORE)?;
        let stcl_cfg = StclConfig {
            sampling_seed: stcl_seed,
            ..cfg.stcl.clone()
        };
        let labels_r = labels_r_full.resample(fh, fw);
        let st = losses::stcl(
            &pass.embeddings[0],
            &pass.embeddings[1],
            &labels_q,
            &labels_r,
            &stcl_cfg,
        )?;
        let d_logits_q = scale(&ce.grad, cfg.lambda1);
        let d_emb_q = scale(&st.grad_query, cfg.lambda2);
        let d_emb_r = scale(&st.grad_reference, cfg.lambda2);
        let grads = model.backward(
            &pass,
            &[Some(&d_logits_q), None],
            &[Some(&d_emb_q), Some(&d_emb_r)],
        )?;
        (pass, ce, st.value, st.anchor_count, grads)
    } else {
        let pass = model.forward_train(&[query])?;
        let ce = losses::cross_entropy(&pass.logits[0], &labels_q, IGNORE)?;
        let d_logits_q = scale(&ce.grad, cfg.lambda1);
        let grads = model.backward(&pass, &[Some(&d_logits_q)], &[None])?;
        (pass, ce, 0.0, 0, grads)
    };
    let total = losses::total_loss(ce.value, l_stcl, cfg.lambda1, cfg.lambda2);
    if !total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at iteration {iteration}: l_seg={} l_stcl={}",
            ce.value, l_stcl
        )));
    }
    model.update_running_stats(&pass);
    sgd.apply(model, &grads, cfg);
    model.train_steps += 1;
    if !model.params.all_finite() {
        return Err(Error::Training(format!(
            "non-finite parameters after iteration {iteration}"
        )));
    }
    Ok(StepRecord {
        iteration,
        l_seg: ce.value,
        l_stcl,
        total,
        anchor_count,
        learning_rate: cfg.learning_rate,
    })
}

/// Full training run over a merged clip pool; deterministic in `cfg.seed`.
pub fn train(clips: &[VideoClip], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if clips.is_empty() || clips.iter().all(|c| c.labeled_frame_indices().is_empty()) {
        return Err(Error::Config("training requires at least one labeled clip".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg.model.clone(), rng.gen())?;
    let mut sgd = SgdState::new(&cfg.model);
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut picked = None;
        for _ in 0..100 {
            let clip = &clips[rng.gen_range(0..clips.len())];
            if let Some(pair) = sample_pair(clip, cfg.max_frame_gap, &mut rng) {
                picked = Some((clip, pair));
                break;
            }
        }
        let (clip, pair) = picked.ok_or_else(|| {
            Error::Config("no clip yields a valid (query, reference) pair".into())
        })?;
        let stcl_seed: u64 = rng.gen();
        history.push(train_step(
            &mut model, &mut sgd, clip, pair, cfg, stcl_seed, iteration,
        )?);
    }
    Ok((model, history))
}
