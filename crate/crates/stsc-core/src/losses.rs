//! Training objectives: pixel cross-entropy, the cross-frame contrastive
//! consistency loss with analytic gradients, and their weighted sum.
//!
//! For an anchor pixel embedding `a` with positives P and negatives N the
//! per-anchor loss is
//!
//! ```text
//! L(a) = (1/|P|) Σ_{p∈P} -log( exp(a·p/τ) / (exp(a·p/τ) + Σ_{n∈N} exp(a·n/τ)) )
//! ```
//!
//! and the clip loss is the mean of `L` over retained anchors in the query
//! frame. Each positive's denominator contains that positive's own term plus
//! all negatives; other positives are excluded.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmath;
use crate::numerics::{self, DenseArray};
use crate::types::{LabelMap, IGNORE};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StclConfig {
    /// Temperature dividing similarities inside the contrastive softmax.
    pub tau: f64,
    pub max_anchors_per_class: usize,
    pub max_positives_per_anchor: usize,
    pub max_negatives_per_anchor: usize,
    pub sampling_seed: u64,
    /// Exhaustive anchors and pair sets; the semantic reference used by
    /// oracle tests. Sampled mode equals it when the limits exceed the
    /// population sizes.
    pub dense_mode: bool,
    /// Stop gradients into the reference frame's embeddings.
    pub detach_reference: bool,
}

impl Default for StclConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            max_anchors_per_class: 64,
            max_positives_per_anchor: 128,
            max_negatives_per_anchor: 512,
            sampling_seed: 0,
            dense_mode: false,
            detach_reference: false,
        }
    }
}

impl StclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_anchors_per_class == 0
            || self.max_positives_per_anchor == 0
            || self.max_negatives_per_anchor == 0
        {
            return Err(Error::Config("sampling limits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of a loss evaluation over one map.
#[derive(Debug, Clone)]
pub struct CrossEntropyResult {
    pub value: f64,
    /// Gradient with respect to the logits, same shape.
    pub grad: DenseArray,
    /// Non-ignored pixels that entered the mean.
    pub pixel_count: usize,
}

/// Mean over non-ignored pixels of −log softmax(logits)[label].
///
/// `logits` is `[num_classes, h, w]`; `labels` must already be at the same
/// spatial resolution.
pub fn cross_entropy(logits: &DenseArray, labels: &LabelMap, ignore: u8) -> Result<CrossEntropyResult> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("logits shape {:?}, want [C,h,w]", shape)));
    }
    let (num_classes, h, w) = (shape[0], shape[1], shape[2]);
    if labels.height() != h || labels.width() != w {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs logits {}x{}",
            labels.height(),
            labels.width(),
            h,
            w
        )));
    }
    let hw = h * w;
    let data = logits.data();
    let mut grad = DenseArray::zeros(vec![num_classes, h, w]);
    let mut count = 0usize;
    // First pass counts pixels so the 1/count scaling is applied in a
    // single deterministic pass below.
    for &l in labels.data() {
        if l == ignore {
            continue;
        }
        if usize::from(l) >= num_classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                l, num_classes
            )));
        }
        count += 1;
    }
    if count == 0 {
        return Ok(CrossEntropyResult {
            value: 0.0,
            grad,
            pixel_count: 0,
        });
    }
    let inv = 1.0 / count as f64;
    let mut value = 0.0;
    let mut scores = vec![0.0; num_classes];
    for idx in 0..hw {
        let label = labels.data()[idx];
        if label == ignore {
            continue;
        }
        for c in 0..num_classes {
            scores[c] = data[c * hw + idx];
        }
        let lse = numerics::log_sum_exp(&scores)?;
        value += (lse - scores[usize::from(label)]) * inv;
        let g = grad.data_mut();
        for c in 0..num_classes {
            let p = fmath::exp(scores[c] - lse);
            let onehot = if c == usize::from(label) { 1.0 } else { 0.0 };
            g[c * hw + idx] = (p - onehot) * inv;
        }
    }
    Ok(CrossEntropyResult {
        value,
        grad,
        pixel_count: count,
    })
}

/// A pixel position: (frame, flat index). Frame 0 is the query frame.
pub type PixelRef = (usize, usize);

#[derive(Debug, Clone)]
pub struct AnchorSet {
    /// Flat index of the anchor in the query frame.
    pub anchor: usize,
    pub class: u8,
    pub positives: Vec<PixelRef>,
    pub negatives: Vec<PixelRef>,
}

fn subsample(rng: &mut ChaCha8Rng, items: &[PixelRef], limit: usize) -> Vec<PixelRef> {
    if items.len() <= limit {
        return items.to_vec();
    }
    // Partial Fisher-Yates over positions, then restore canonical order so
    // sampled mode reduces to dense mode when the limit covers everything.
    let mut positions: Vec<usize> = (0..items.len()).collect();
    for i in 0..limit {
        let j = rng.gen_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut chosen = positions[..limit].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i]).collect()
}

/// Builds anchor/positive/negative index sets from two label maps at
/// embedding resolution.
///
/// Anchors come from non-ignored query pixels; positives are same-class
/// pixels in both frames excluding the anchor; negatives are non-ignored
/// pixels of other classes in both frames. Anchors with no positive are
/// dropped. Sampling is deterministic in `sampling_seed`.
pub fn build_anchor_sets(
    labels_q: &LabelMap,
    labels_r: &LabelMap,
    cfg: &StclConfig,
) -> Result<Vec<AnchorSet>> {
    cfg.validate()?;
    if labels_q.height() != labels_r.height() || labels_q.width() != labels_r.width() {
        return Err(Error::Dimension(format!(
            "label maps {}x{} vs {}x{}",
            labels_q.height(),
            labels_q.width(),
            labels_r.height(),
            labels_r.width()
        )));
    }
    // class id -> pixels of that class across both frames, canonical order.
    let mut by_class: Vec<(u8, Vec<PixelRef>)> = Vec::new();
    for (frame, labels) in [(0usize, labels_q), (1usize, labels_r)] {
        for (idx, &l) in labels.data().iter().enumerate() {
            if l == IGNORE {
                continue;
            }
            match by_class.iter_mut().find(|(c, _)| *c == l) {
                Some((_, v)) => v.push((frame, idx)),
                None => by_class.push((l, vec![(frame, idx)])),
            }
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling_seed);
    // Candidate anchors per class (query frame only), optionally capped.
    let mut anchors: Vec<(usize, u8)> = Vec::new();
    for (class, pixels) in &by_class {
        let in_query: Vec<PixelRef> = pixels.iter().copied().filter(|&(f, _)| f == 0).collect();
        let kept = if cfg.dense_mode {
            in_query
        } else {
            subsample(&mut rng, &in_query, cfg.max_anchors_per_class)
        };
        anchors.extend(kept.into_iter().map(|(_, idx)| (idx, *class)));
    }
    // Raster order over the query frame keeps reductions deterministic.
    anchors.sort_unstable();

    let mut sets = Vec::new();
    for (anchor, class) in anchors {
        let same: &[PixelRef] = &by_class.iter().find(|(c, _)| *c == class).unwrap().1;
        let positives_all: Vec<PixelRef> = same
            .iter()
            .copied()
            .filter(|&p| p != (0, anchor))
            .collect();
        if positives_all.is_empty() {
            continue;
        }
        let mut negatives_all: Vec<PixelRef> = Vec::new();
        for (c, pixels) in &by_class {
            if *c != class {
                negatives_all.extend_from_slice(pixels);
            }
        }
        negatives_all.sort_unstable();
        let (positives, negatives) = if cfg.dense_mode {
            (positives_all, negatives_all)
        } else {
            (
                subsample(&mut rng, &positives_all, cfg.max_positives_per_anchor),
                subsample(&mut rng, &negatives_all, cfg.max_negatives_per_anchor),
            )
        };
        sets.push(AnchorSet {
            anchor,
            class,
            positives,
            negatives,
        });
    }
    Ok(sets)
}

/// Per-anchor contrastive term and its gradients.
#[derive(Debug, Clone)]
pub struct AnchorLoss {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// Evaluates the per-anchor loss via log-sum-exp; requires ≥ 1 positive.
pub fn stcl_per_anchor(
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<AnchorLoss> {
    if positives.is_empty() {
        return Err(Error::State(
            "stcl_per_anchor called with zero positives; callers must pre-filter".into(),
        ));
    }
    let dim = anchor.len();
    let inv_tau = 1.0 / tau;
    let inv_p = 1.0 / positives.len() as f64;
    let neg_scores: Vec<f64> = negatives
        .iter()
        .map(|n| numerics::dot(anchor, n).map(|s| s * inv_tau))
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut grad_anchor = vec![0.0; dim];
    let mut grad_positives = Vec::with_capacity(positives.len());
    let mut neg_coeff = vec![0.0; negatives.len()];
    let mut terms = vec![0.0; 1 + negatives.len()];
    for p in positives {
        let s_p = numerics::dot(anchor, p)? * inv_tau;
        terms[0] = s_p;
        terms[1..].copy_from_slice(&neg_scores);
        let lse = numerics::log_sum_exp(&terms)?;
        value += (lse - s_p) * inv_p;
        // d value / d s_p, accumulated with the 1/|P| weight.
        let w_pp = fmath::exp(s_p - lse);
        let coeff_p = inv_p * (w_pp - 1.0) * inv_tau;
        let mut g_p = vec![0.0; dim];
        for k in 0..dim {
            g_p[k] = coeff_p * anchor[k];
            grad_anchor[k] += coeff_p * p[k];
        }
        grad_positives.push(g_p);
        for (j, &s_n) in neg_scores.iter().enumerate() {
            neg_coeff[j] += inv_p * fmath::exp(s_n - lse) * inv_tau;
        }
    }
    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for (j, n) in negatives.iter().enumerate() {
        let mut g_n = vec![0.0; dim];
        for k in 0..dim {
            g_n[k] = neg_coeff[j] * anchor[k];
            grad_anchor[k] += neg_coeff[j] * n[k];
        }
        grad_negatives.push(g_n);
    }
    Ok(AnchorLoss {
        value,
        grad_anchor,
        grad_positives,
        grad_negatives,
    })
}

/// Spatial-temporal consistency loss over a query/reference embedding pair.
#[derive(Debug, Clone)]
pub struct StclResult {
    pub value: f64,
    /// Gradient with respect to the query embedding map, `[dim, h, w]`.
    pub grad_query: DenseArray,
    /// Gradient with respect to the reference embedding map.
    pub grad_reference: DenseArray,
    pub anchor_count: usize,
}

/// Mean per-anchor loss over retained anchors, with gradients accumulated
/// into both embedding maps (reference grads zeroed when detached).
pub fn stcl(
    emb_q: &DenseArray,
    emb_r: &DenseArray,
    labels_q: &LabelMap,
    labels_r: &LabelMap,
    cfg: &StclConfig,
) -> Result<StclResult> {
    let shape = emb_q.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("embedding shape {:?}, want [d,h,w]", shape)));
    }
    if emb_r.shape() != shape.as_slice() {
        return Err(Error::Dimension(format!(
            "embedding shapes differ: {:?} vs {:?}",
            shape,
            emb_r.shape()
        )));
    }
    let (dim, h, w) = (shape[0], shape[1], shape[2]);
    if labels_q.height() != h || labels_q.width() != w {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs embeddings {}x{}",
            labels_q.height(),
            labels_q.width(),
            h,
            w
        )));
    }
    let hw = h * w;
    // Gather per-pixel vectors contiguously; maps are channel-major.
    let gather = |m: &DenseArray| -> Vec<f64> {
        let src = m.data();
        let mut out = vec![0.0; hw * dim];
        for idx in 0..hw {
            for k in 0..dim {
                out[idx * dim + k] = src[k * hw + idx];
            }
        }
        out
    };
    let pix_q = gather(emb_q);
    let pix_r = gather(emb_r);
    let vec_at = |p: PixelRef| -> &[f64] {
        let buf = if p.0 == 0 { &pix_q } else { &pix_r };
        &buf[p.1 * dim..(p.1 + 1) * dim]
    };

    let sets = build_anchor_sets(labels_q, labels_r, cfg)?;
    let mut grad_q = vec![0.0; hw * dim];
    let mut grad_r = vec![0.0; hw * dim];
    let mut total = 0.0;
    for set in &sets {
        let positives: Vec<&[f64]> = set.positives.iter().map(|&p| vec_at(p)).collect();
        let negatives: Vec<&[f64]> = set.negatives.iter().map(|&p| vec_at(p)).collect();
        let anchor_vec = &pix_q[set.anchor * dim..(set.anchor + 1) * dim];
        let res = stcl_per_anchor(anchor_vec, &positives, &negatives, cfg.tau)?;
        total += res.value;
        let mut scatter = |p: PixelRef, g: &[f64]| {
            let buf = if p.0 == 0 {
                &mut grad_q
            } else {
                if cfg.detach_reference {
                    return;
                }
                &mut grad_r
            };
            for k in 0..dim {
                buf[p.1 * dim + k] += g[k];
            }
        };
        scatter((0, set.anchor), &res.grad_anchor);
        for (p, g) in set.positives.iter().zip(&res.grad_positives) {
            scatter(*p, g);
        }
        for (p, g) in set.negatives.iter().zip(&res.grad_negatives) {
            scatter(*p, g);
        }
    }
    let count = sets.len();
    let (value, scale) = if count == 0 {
        (0.0, 0.0)
    } else {
        (total / count as f64, 1.0 / count as f64)
    };
    // Back to channel-major layout with the 1/|Ω| factor applied.
    let scatter_map = |pix_grad: &[f64]| -> DenseArray {
        let mut out = DenseArray::zeros(vec![dim, h, w]);
        let dst = out.data_mut();
        for idx in 0..hw {
            for k in 0..dim {
                dst[k * hw + idx] = pix_grad[idx * dim + k] * scale;
            }
        }
        out
    };
    Ok(StclResult {
        value,
        grad_query: scatter_map(&grad_q),
        grad_reference: scatter_map(&grad_r),
        anchor_count: count,
    })
}

/// Weighted total objective.
pub fn total_loss(l_seg: f64, l_stcl: f64, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * l_seg + lambda2 * l_stcl
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(h: usize, w: usize, data: &[u8]) -> LabelMap {
        LabelMap::new(h, w, data.to_vec()).unwrap()
    }

    fn dense_cfg() -> StclConfig {
        StclConfig {
            dense_mode: true,
            ..StclConfig::default()
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let c = 3;
        let logits = DenseArray::zeros(vec![c, 2, 2]);
        let labels = lm(2, 2, &[0, 1, 2, 0]);
        let res = cross_entropy(&logits, &labels, IGNORE).unwrap();
        assert!((res.value - (c as f64).ln()).abs() < 1e-12);
        assert_eq!(res.pixel_count, 4);
    }

    #[test]
    fn cross_entropy_all_ignore() {
        let logits = DenseArray::zeros(vec![2, 1, 2]);
        let labels = lm(1, 2, &[IGNORE, IGNORE]);
        let res = cross_entropy(&logits, &labels, IGNORE).unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_hand_value() {
        // 1 pixel, logits (ln 1, ln 3), label 1 -> -ln 0.75
        let logits = DenseArray::new(vec![2, 1, 1], vec![1.0f64.ln(), 3.0f64.ln()]).unwrap();
        let labels = lm(1, 1, &[1]);
        let res = cross_entropy(&logits, &labels, IGNORE).unwrap();
        assert!((res.value - (-(0.75f64.ln()))).abs() < 1e-12);
        // grad = softmax - onehot = (0.25, -0.25)
        assert!((res.grad.data()[0] - 0.25).abs() < 1e-12);
        assert!((res.grad.data()[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = DenseArray::zeros(vec![2, 1, 1]);
        let labels = lm(1, 1, &[7]);
        assert!(cross_entropy(&logits, &labels, IGNORE).is_err());
    }

    #[test]
    fn anchor_sets_single_class_has_no_negatives() {
        let q = lm(2, 2, &[0, 0, 0, 0]);
        let sets = build_anchor_sets(&q, &q, &dense_cfg()).unwrap();
        assert_eq!(sets.len(), 4);
        assert!(sets.iter().all(|s| s.negatives.is_empty()));
    }

    #[test]
    fn anchor_sets_ignored_query_yields_no_anchors() {
        let q = lm(2, 2, &[IGNORE; 4]);
        let r = lm(2, 2, &[0, 1, 0, 1]);
        let sets = build_anchor_sets(&q, &r, &dense_cfg()).unwrap();
        assert!(sets.is_empty());
    }

    #[test]
    fn anchor_sets_checkerboard_counts() {
        let q = lm(2, 2, &[0, 1, 1, 0]);
        let r = lm(2, 2, &[0, 1, 1, 0]);
        let sets = build_anchor_sets(&q, &r, &dense_cfg()).unwrap();
        let first = sets.iter().find(|s| s.anchor == 0).unwrap();
        assert_eq!(first.class, 0);
        // 1 same-frame + 2 cross-frame positives, 4 negatives.
        assert_eq!(first.positives.len(), 3);
        assert_eq!(first.negatives.len(), 4);
    }

    #[test]
    fn per_anchor_no_negatives_is_zero() {
        let a = [1.0, 0.0];
        let p = [0.5, 0.5];
        let res = stcl_per_anchor(&a, &[&p], &[], 0.07).unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.grad_anchor.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn per_anchor_symmetric_gives_ln2() {
        // i·i+ == i·i- makes each term -log(1/2) regardless of tau.
        let a = [1.0, 0.0];
        let p = [0.3, 0.4];
        let n = [0.3, 0.4];
        for tau in [0.07, 0.5, 1.0] {
            let res = stcl_per_anchor(&a, &[&p], &[&n], tau).unwrap();
            assert!((res.value - 2.0f64.ln()).abs() < 1e-12, "tau {tau}");
        }
    }

    #[test]
    fn per_anchor_softplus_value() {
        // s+ = 1, s- = 0, tau = 1 -> ln(1 + e^-1)
        let a = [1.0, 0.0];
        let p = [1.0, 0.0];
        let n = [0.0, 1.0];
        let res = stcl_per_anchor(&a, &[&p], &[&n], 1.0).unwrap();
        assert!((res.value - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn per_anchor_requires_positive() {
        let a = [1.0, 0.0];
        let n = [0.0, 1.0];
        assert!(stcl_per_anchor(&a, &[], &[&n], 1.0).is_err());
    }

    #[test]
    fn stcl_single_class_is_zero() {
        let emb = DenseArray::new(vec![2, 2, 2], vec![0.1; 8]).unwrap();
        let labels = lm(2, 2, &[1, 1, 1, 1]);
        let res = stcl(&emb, &emb, &labels, &labels, &dense_cfg()).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.anchor_count, 4);
    }

    #[test]
    fn stcl_no_anchors_is_zero() {
        let emb = DenseArray::zeros(vec![2, 2, 2]);
        let labels = lm(2, 2, &[IGNORE; 4]);
        let res = stcl(&emb, &emb, &labels, &labels, &dense_cfg()).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.anchor_count, 0);
        assert!(res.grad_query.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sampled_equals_dense_when_limits_cover_population() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (d, h, w) = (3, 3, 3);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let data: Vec<f64> = (0..d * h * w).map(|_| rng.gen::<f64>() - 0.5).collect();
            DenseArray::new(vec![d, h, w], data).unwrap()
        };
        let emb_q = mk(&mut rng);
        let emb_r = mk(&mut rng);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..3u8)).collect();
        let lq = lm(h, w, &labels);
        let lr = lm(h, w, &labels);
        let dense = stcl(&emb_q, &emb_r, &lq, &lr, &dense_cfg()).unwrap();
        let sampled_cfg = StclConfig {
            dense_mode: false,
            max_anchors_per_class: 1000,
            max_positives_per_anchor: 1000,
            max_negatives_per_anchor: 1000,
            ..StclConfig::default()
        };
        let sampled = stcl(&emb_q, &emb_r, &lq, &lr, &sampled_cfg).unwrap();
        assert_eq!(dense.value, sampled.value);
        assert_eq!(dense.grad_query, sampled.grad_query);
        assert_eq!(dense.grad_reference, sampled.grad_reference);
    }

    #[test]
    fn detach_reference_zeroes_reference_grads() {
        let emb_q = DenseArray::new(vec![2, 2, 2], vec![0.3, -0.1, 0.2, 0.9, -0.4, 0.5, 0.0, 0.7])
            .unwrap();
        let emb_r = DenseArray::new(vec![2, 2, 2], vec![0.1, 0.6, -0.2, 0.4, 0.8, -0.3, 0.2, 0.1])
            .unwrap();
        let labels = lm(2, 2, &[0, 1, 0, 1]);
        let cfg = StclConfig {
            detach_reference: true,
            ..dense_cfg()
        };
        let res = stcl(&emb_q, &emb_r, &labels, &labels, &cfg).unwrap();
        assert!(res.grad_reference.data().iter().all(|&g| g == 0.0));
        assert!(res.grad_query.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, 0.5, 1.0, 0.2) - 1.1).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 0.5, 1.0, 0.0), 0.7);
        assert_eq!(total_loss(0.7, 0.5, 0.0, 0.0), 0.0);
    }
}
