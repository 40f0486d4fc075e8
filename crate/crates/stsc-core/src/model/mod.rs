//! A tiny differentiable segmentation network: two-layer convolutional
//! encoder at 1/4 resolution, 1x1 classifier head, and a projection head
//! (1x1 conv → batch norm → ReLU → per-pixel L2 normalization).

pub mod layers;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{self, StclConfig};
use crate::numerics::DenseArray;
use crate::types::LabelMap;
use layers::pooled_extent;

pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            hidden_channels: 8,
            feature_dim: 16,
            num_classes: 4,
            proj_dim: 32,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.hidden_channels == 0
            || self.feature_dim == 0
            || self.num_classes < 2
            || self.proj_dim == 0
        {
            return Err(Error::Config(format!("degenerate model config {:?}", self)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("bn_momentum/bn_eps out of range".into()));
        }
        Ok(())
    }

    /// Feature-resolution extents for an input of `h` x `w`.
    pub fn feature_extent(&self, h: usize, w: usize) -> (usize, usize) {
        (
            pooled_extent(pooled_extent(h)),
            pooled_extent(pooled_extent(w)),
        )
    }
}

/// Trainable parameter arrays; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            conv1_w: vec![0.0; cfg.hidden_channels * cfg.in_channels * 9],
            conv1_b: vec![0.0; cfg.hidden_channels],
            conv2_w: vec![0.0; cfg.feature_dim * cfg.hidden_channels * 9],
            conv2_b: vec![0.0; cfg.feature_dim],
            cls_w: vec![0.0; cfg.num_classes * cfg.feature_dim],
            cls_b: vec![0.0; cfg.num_classes],
            proj_w: vec![0.0; cfg.proj_dim * cfg.feature_dim],
            proj_b: vec![0.0; cfg.proj_dim],
            bn_gamma: vec![0.0; cfg.proj_dim],
            bn_beta: vec![0.0; cfg.proj_dim],
        }
    }

    /// Named parameter arrays in checkpoint order.
    pub fn arrays(&self) -> [(&'static str, &Vec<f64>); 10] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("cls_w", &self.cls_w),
            ("cls_b", &self.cls_b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
            ("bn_gamma", &self.bn_gamma),
            ("bn_beta", &self.bn_beta),
        ]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 10] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("cls_w", &mut self.cls_w),
            ("cls_b", &mut self.cls_b),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
            ("bn_gamma", &mut self.bn_gamma),
            ("bn_beta", &mut self.bn_beta),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub train_steps: u64,
}

/// Per-frame forward intermediates kept for the backward pass.
struct FrameCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    p1: Vec<f64>,
    z2: Vec<f64>,
    feat: Vec<f64>,
    /// Post-BN pre-ReLU projector activations.
    relu_pre: Vec<f64>,
    emb_out: Vec<f64>,
    norms: Vec<f64>,
    h: usize,
    w: usize,
}

/// Cached train-mode forward over a batch of frames (shared BN statistics).
pub struct ForwardPass {
    frames: Vec<FrameCache>,
    bn_cache: layers::BatchNormCache,
    /// Classifier logits per frame, `[num_classes, fh, fw]`.
    pub logits: Vec<DenseArray>,
    /// Normalized embeddings per frame, `[proj_dim, fh, fw]`.
    pub embeddings: Vec<DenseArray>,
    /// Feature extent of this batch.
    pub feature_size: (usize, usize),
}

impl Model {
    /// Deterministic initialization: uniform fan-in weights, zero biases,
    /// unit BN scale.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&config);
        let mut fill = |buf: &mut Vec<f64>, fan_in: usize| {
            let bound = crate::fmath::sqrt(1.0 / fan_in as f64);
            for v in buf.iter_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
        };
        fill(&mut params.conv1_w, config.in_channels * 9);
        fill(&mut params.conv2_w, config.hidden_channels * 9);
        fill(&mut params.cls_w, config.feature_dim);
        fill(&mut params.proj_w, config.feature_dim);
        for g in params.bn_gamma.iter_mut() {
            *g = 1.0;
        }
        Ok(Self {
            bn_running_mean: vec![0.0; config.proj_dim],
            bn_running_var: vec![1.0; config.proj_dim],
            train_steps: 0,
            config,
            params,
        })
    }

    fn check_frame(&self, frame: &DenseArray) -> Result<(usize, usize)> {
        let shape = frame.shape();
        if shape.len() != 3 || shape[0] != self.config.in_channels {
            return Err(Error::Dimension(format!(
                "frame shape {:?}, want [{}, h, w]",
                shape, self.config.in_channels
            )));
        }
        Ok((shape[1], shape[2]))
    }

    /// Encoder forward: conv3x3 → ReLU → pool → conv3x3 → ReLU → pool.
    pub fn encode(&self, frame: &DenseArray) -> Result<DenseArray> {
        let (h, w) = self.check_frame(frame)?;
        let cache = self.encode_cached(frame.data(), h, w);
        let (fh, fw) = self.config.feature_extent(h, w);
        DenseArray::new(vec![self.config.feature_dim, fh, fw], cache.3)
    }

    #[allow(clippy::type_complexity)]
    fn encode_cached(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let z1 = layers::conv2d_same(
            input,
            &self.params.conv1_w,
            &self.params.conv1_b,
            cfg.in_channels,
            cfg.hidden_channels,
            h,
            w,
            3,
        );
        let a1 = layers::relu(&z1);
        let p1 = layers::avg_pool2(&a1, cfg.hidden_channels, h, w);
        let (h1, w1) = (pooled_extent(h), pooled_extent(w));
        let z2 = layers::conv2d_same(
            &p1,
            &self.params.conv2_w,
            &self.params.conv2_b,
            cfg.hidden_channels,
            cfg.feature_dim,
            h1,
            w1,
            3,
        );
        let a2 = layers::relu(&z2);
        let feat = layers::avg_pool2(&a2, cfg.feature_dim, h1, w1);
        (z1, p1, z2, feat)
    }

    fn check_features(&self, features: &DenseArray) -> Result<(usize, usize)> {
        let shape = features.shape();
        if shape.len() != 3 || shape[0] != self.config.feature_dim {
            return Err(Error::Dimension(format!(
                "feature shape {:?}, want [{}, h, w]",
                shape, self.config.feature_dim
            )));
        }
        Ok((shape[1], shape[2]))
    }

    /// Classifier logits (1x1 conv over features).
    pub fn classify_logits(&self, features: &DenseArray) -> Result<DenseArray> {
        let (fh, fw) = self.check_features(features)?;
        let logits = layers::conv2d_same(
            features.data(),
            &self.params.cls_w,
            &self.params.cls_b,
            self.config.feature_dim,
            self.config.num_classes,
            fh,
            fw,
            1,
        );
        DenseArray::new(vec![self.config.num_classes, fh, fw], logits)
    }

    /// Per-pixel class probabilities.
    pub fn classify(&self, features: &DenseArray) -> Result<DenseArray> {
        let logits = self.classify_logits(features)?;
        let shape = logits.shape().to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let data = logits.data();
        let mut out = vec![0.0; c * hw];
        let mut scores = vec![0.0; c];
        for i in 0..hw {
            for ch in 0..c {
                scores[ch] = data[ch * hw + i];
            }
            let probs = crate::numerics::softmax(&scores)?;
            for ch in 0..c {
                out[ch * hw + i] = probs[ch];
            }
        }
        DenseArray::new(shape, out)
    }

    /// Projection head in eval mode (running BN statistics); output is
    /// per-pixel unit-normalized.
    pub fn project_eval(&self, features: &DenseArray) -> Result<DenseArray> {
        let (fh, fw) = self.check_features(features)?;
        let cfg = &self.config;
        let hw = fh * fw;
        let pre = layers::conv2d_same(
            features.data(),
            &self.params.proj_w,
            &self.params.proj_b,
            cfg.feature_dim,
            cfg.proj_dim,
            fh,
            fw,
            1,
        );
        let bn = layers::batch_norm_eval(
            &pre,
            &self.params.bn_gamma,
            &self.params.bn_beta,
            &self.bn_running_mean,
            &self.bn_running_var,
            cfg.proj_dim,
            hw,
            cfg.bn_eps,
        );
        let act = layers::relu(&bn);
        let (out, _) = layers::normalize_pixels(&act, cfg.proj_dim, hw, NORM_EPS);
        DenseArray::new(vec![cfg.proj_dim, fh, fw], out)
    }

    /// Train-mode forward over a batch of frames; BN statistics are shared
    /// across the whole batch. Pure: running statistics are not touched
    /// (see [`Model::update_running_stats`]).
    pub fn forward_train(&self, frames: &[&DenseArray]) -> Result<ForwardPass> {
        if frames.is_empty() {
            return Err(Error::Dimension("forward_train: empty batch".into()));
        }
        let (h, w) = self.check_frame(frames[0])?;
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_extent(h, w);
        let hw = fh * fw;
        let mut caches = Vec::with_capacity(frames.len());
        let mut proj_pre = Vec::with_capacity(frames.len());
        let mut logits = Vec::with_capacity(frames.len());
        for frame in frames {
            let (fh2, fw2) = self.check_frame(frame)?;
            if (fh2, fw2) != (h, w) {
                return Err(Error::Dimension("frames in batch differ in size".into()));
            }
            let (z1, p1, z2, feat) = self.encode_cached(frame.data(), h, w);
            let frame_logits = layers::conv2d_same(
                &feat,
                &self.params.cls_w,
                &self.params.cls_b,
                cfg.feature_dim,
                cfg.num_classes,
                fh,
                fw,
                1,
            );
            logits.push(DenseArray::new(
                vec![cfg.num_classes, fh, fw],
                frame_logits,
            )?);
            let pre = layers::conv2d_same(
                &feat,
                &self.params.proj_w,
                &self.params.proj_b,
                cfg.feature_dim,
                cfg.proj_dim,
                fh,
                fw,
                1,
            );
            proj_pre.push(pre);
            caches.push(FrameCache {
                input: frame.data().to_vec(),
                z1,
                p1,
                z2,
                feat,
                relu_pre: Vec::new(),
                emb_out: Vec::new(),
                norms: Vec::new(),
                h,
                w,
            });
        }
        let pre_refs: Vec<&[f64]> = proj_pre.iter().map(|v| v.as_slice()).collect();
        let (bn_outs, bn_cache) = layers::batch_norm_train(
            &pre_refs,
            &self.params.bn_gamma,
            &self.params.bn_beta,
            cfg.proj_dim,
            hw,
            cfg.bn_eps,
        );
        let mut embeddings = Vec::with_capacity(frames.len());
        for (cache, bn_out) in caches.iter_mut().zip(bn_outs) {
            let act = layers::relu(&bn_out);
            let (emb, norms) = layers::normalize_pixels(&act, cfg.proj_dim, hw, NORM_EPS);
            cache.relu_pre = bn_out;
            cache.emb_out = emb.clone();
            cache.norms = norms;
            embeddings.push(DenseArray::new(vec![cfg.proj_dim, fh, fw], emb)?);
        }
        Ok(ForwardPass {
            frames: caches,
            bn_cache,
            logits,
            embeddings,
            feature_size: (fh, fw),
        })
    }

    /// Folds the batch statistics of a cached forward into the running
    /// averages (momentum `bn_momentum`).
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        let m = self.config.bn_momentum;
        for ch in 0..self.config.proj_dim {
            self.bn_running_mean[ch] = m * self.bn_running_mean[ch] + (1.0 - m) * pass.bn_cache.mean[ch];
            self.bn_running_var[ch] = m * self.bn_running_var[ch] + (1.0 - m) * pass.bn_cache.var[ch];
        }
    }

    /// Backpropagates head gradients to every parameter.
    ///
    /// `d_logits[i]` / `d_embeddings[i]` are the upstream gradients for
    /// frame `i` of the cached batch; `None` means zero.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_logits: &[Option<&DenseArray>],
        d_embeddings: &[Option<&DenseArray>],
    ) -> Result<Params> {
        let n = pass.frames.len();
        if d_logits.len() != n || d_embeddings.len() != n {
            return Err(Error::Dimension(format!(
                "backward: {} frames cached, got {} logit and {} embedding grads",
                n,
                d_logits.len(),
                d_embeddings.len()
            )));
        }
        let cfg = &self.config;
        let (fh, fw) = pass.feature_size;
        let hw = fh * fw;
        let mut grads = Params::zeros(cfg);
        let zero_emb = vec![0.0; cfg.proj_dim * hw];

        // Projection path first: ReLU+normalize backward per frame, then BN
        // backward jointly over the batch.
        let mut d_bn_out: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, cache) in pass.frames.iter().enumerate() {
            let d_emb = match d_embeddings[i] {
                Some(g) => {
                    if g.shape() != [cfg.proj_dim, fh, fw] {
                        return Err(Error::Dimension(format!(
                            "embedding grad shape {:?}, want [{}, {}, {}]",
                            g.shape(),
                            cfg.proj_dim,
                            fh,
                            fw
                        )));
                    }
                    g.data()
                }
                None => zero_emb.as_slice(),
            };
            let d_act = layers::normalize_pixels_backward(
                d_emb,
                &cache.emb_out,
                &cache.norms,
                cfg.proj_dim,
                hw,
                NORM_EPS,
            );
            d_bn_out.push(layers::relu_backward(&d_act, &cache.relu_pre));
        }
        let d_bn_refs: Vec<&[f64]> = d_bn_out.iter().map(|v| v.as_slice()).collect();
        let d_proj_pre = layers::batch_norm_backward(
            &d_bn_refs,
            &pass.bn_cache,
            &self.params.bn_gamma,
            &mut grads.bn_gamma,
            &mut grads.bn_beta,
            cfg.proj_dim,
            hw,
            cfg.bn_eps,
        );

        for (i, cache) in pass.frames.iter().enumerate() {
            // Feature gradient from the projector 1x1 conv.
            let mut d_feat = layers::conv2d_same_backward(
                &cache.feat,
                &self.params.proj_w,
                &d_proj_pre[i],
                &mut grads.proj_w,
                &mut grads.proj_b,
                cfg.feature_dim,
                cfg.proj_dim,
                fh,
                fw,
                1,
            );
            // Plus the classifier 1x1 conv.
            if let Some(g) = d_logits[i] {
                if g.shape() != [cfg.num_classes, fh, fw] {
                    return Err(Error::Dimension(format!(
                        "logit grad shape {:?}, want [{}, {}, {}]",
                        g.shape(),
                        cfg.num_classes,
                        fh,
                        fw
                    )));
                }
                let d_from_cls = layers::conv2d_same_backward(
                    &cache.feat,
                    &self.params.cls_w,
                    g.data(),
                    &mut grads.cls_w,
                    &mut grads.cls_b,
                    cfg.feature_dim,
                    cfg.num_classes,
                    fh,
                    fw,
                    1,
                );
                for (a, b) in d_feat.iter_mut().zip(d_from_cls) {
                    *a += b;
                }
            }
            // Back through the encoder.
            let (h1, w1) = (pooled_extent(cache.h), pooled_extent(cache.w));
            let d_a2 = layers::avg_pool2_backward(&d_feat, cfg.feature_dim, h1, w1);
            let d_z2 = layers::relu_backward(&d_a2, &cache.z2);
            let d_p1 = layers::conv2d_same_backward(
                &cache.p1,
                &self.params.conv2_w,
                &d_z2,
                &mut grads.conv2_w,
                &mut grads.conv2_b,
                cfg.hidden_channels,
                cfg.feature_dim,
                h1,
                w1,
                3,
            );
            let d_a1 = layers::avg_pool2_backward(&d_p1, cfg.hidden_channels, cache.h, cache.w);
            let d_z1 = layers::relu_backward(&d_a1, &cache.z1);
            let _ = layers::conv2d_same_backward(
                &cache.input,
                &self.params.conv1_w,
                &d_z1,
                &mut grads.conv1_w,
                &mut grads.conv1_b,
                cfg.in_channels,
                cfg.hidden_channels,
                cache.h,
                cache.w,
                3,
            );
        }
        Ok(grads)
    }
}

/// The joint training objective on a fixed two-frame batch, as a pure
/// function of the model parameters. Used by the finite-difference check.
pub fn training_loss(
    model: &Model,
    query: &DenseArray,
    reference: &DenseArray,
    labels_q: &LabelMap,
    labels_r: &LabelMap,
    lambda1: f64,
    lambda2: f64,
    stcl_cfg: &StclConfig,
) -> Result<f64> {
    let pass = model.forward_train(&[query, reference])?;
    let ce = losses::cross_entropy(&pass.logits[0], labels_q, crate::types::IGNORE)?;
    let st = losses::stcl(
        &pass.embeddings[0],
        &pass.embeddings[1],
        labels_q,
        labels_r,
        stcl_cfg,
    )?;
    Ok(losses::total_loss(ce.value, st.value, lambda1, lambda2))
}

/// Analytic parameter gradients of [`training_loss`] on the same batch.
pub fn training_grads(
    model: &Model,
    query: &DenseArray,
    reference: &DenseArray,
    labels_q: &LabelMap,
    labels_r: &LabelMap,
    lambda1: f64,
    lambda2: f64,
    stcl_cfg: &StclConfig,
) -> Result<(f64, f64, Params)> {
    let pass = model.forward_train(&[query, reference])?;
    let ce = losses::cross_entropy(&pass.logits[0], labels_q, crate::types::IGNORE)?;
    let st = losses::stcl(
        &pass.embeddings[0],
        &pass.embeddings[1],
        labels_q,
        labels_r,
        stcl_cfg,
    )?;
    let scale = |m: &DenseArray, s: f64| -> DenseArray {
        let data: Vec<f64> = m.data().iter().map(|&v| v * s).collect();
        DenseArray::new(m.shape().to_vec(), data).unwrap()
    };
    let d_logits_q = scale(&ce.grad, lambda1);
    let d_emb_q = scale(&st.grad_query, lambda2);
    let d_emb_r = scale(&st.grad_reference, lambda2);
    let grads = model.backward(
        &pass,
        &[Some(&d_logits_q), None],
        &[Some(&d_emb_q), Some(&d_emb_r)],
    )?;
    Ok((ce.value, st.value, grads))
}

/// Result of a finite-difference comparison over every parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_array: alloc::string::String,
    pub worst_index: usize,
    pub params_checked: usize,
    pub seed: u64,
}

/// Builds a random small model and two-frame batch, then compares the
/// analytic gradient of λ1·L_seg + λ2·L_stcl against central finite
/// differences for every parameter.
///
/// Relative error uses `|a - n| / max(|a|, |n|, 1e-3)`; inputs are redrawn
/// (deterministically) while any ReLU pre-activation sits within a few
/// finite-difference steps of its kink, where the comparison is undefined.
pub fn grad_check(seed: u64, fd_step: f64, lambda2: f64) -> Result<GradCheckReport> {
    let config = ModelConfig {
        in_channels: 1,
        hidden_channels: 4,
        feature_dim: 6,
        num_classes: 3,
        proj_dim: 8,
        ..ModelConfig::default()
    };
    let (h, w) = (8, 8);
    let (fh, fw) = config.feature_extent(h, w);
    let stcl_cfg = StclConfig {
        dense_mode: true,
        ..StclConfig::default()
    };
    let lambda1 = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kink_margin = fd_step * 50.0;
    let mut chosen = None;
    for _attempt in 0..64 {
        let model = Model::init(config.clone(), rng.gen())?;
        let mk_frame = |rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            DenseArray::new(vec![1, h, w], data).unwrap()
        };
        let query = mk_frame(&mut rng);
        let reference = mk_frame(&mut rng);
        let mk_labels = |rng: &mut ChaCha8Rng| {
            let data: Vec<u8> = (0..fh * fw)
                .map(|_| rng.gen_range(0..config.num_classes as u8))
                .collect();
            LabelMap::new(fh, fw, data).unwrap()
        };
        let labels_q = mk_labels(&mut rng);
        let labels_r = mk_labels(&mut rng);
        let pass = model.forward_train(&[&query, &reference])?;
        let mut safe = true;
        for cache in &pass.frames {
            for &z in cache.z1.iter().chain(&cache.z2).chain(&cache.relu_pre) {
                if crate::fmath::abs(z) < kink_margin {
                    safe = false;
                }
            }
            for &norm in &cache.norms {
                if norm != 0.0 && norm < 1e-3 {
                    safe = false;
                }
            }
        }
        if safe {
            chosen = Some((model, query, reference, labels_q, labels_r));
            break;
        }
    }
    let (model, query, reference, labels_q, labels_r) = chosen.ok_or_else(|| {
        Error::State("grad_check: no kink-free instance found in 64 attempts".into())
    })?;

    let (_, _, analytic) = training_grads(
        &model, &query, &reference, &labels_q, &labels_r, lambda1, lambda2, &stcl_cfg,
    )?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_array: alloc::string::String::new(),
        worst_index: 0,
        params_checked: 0,
        seed,
    };
    let names: Vec<&'static str> = analytic.arrays().iter().map(|(n, _)| *n).collect();
    for name in names {
        let len = analytic
            .arrays()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| a.len())
            .unwrap();
        for idx in 0..len {
            let eval_at = |delta: f64| -> Result<f64> {
                let mut perturbed = model.clone();
                for (n, arr) in perturbed.params.arrays_mut() {
                    if n == name {
                        arr[idx] += delta;
                    }
                }
                training_loss(
                    &perturbed, &query, &reference, &labels_q, &labels_r, lambda1, lambda2,
                    &stcl_cfg,
                )
            };
            let plus = eval_at(fd_step)?;
            let minus = eval_at(-fd_step)?;
            let numeric = (plus - minus) / (2.0 * fd_step);
            let a = analytic
                .arrays()
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, arr)| arr[idx])
                .unwrap();
            let denom = crate::fmath::abs(a).max(crate::fmath::abs(numeric)).max(1e-3);
            let rel = crate::fmath::abs(a - numeric) / denom;
            report.params_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_array = alloc::string::String::from(name);
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
