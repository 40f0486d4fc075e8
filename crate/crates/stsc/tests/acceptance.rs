//! End-to-end acceptance suite. Each test prints one PASS line; assertion
//! failures mark the corresponding criterion as failed.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsc::checkpoint::save_checkpoint;
use stsc::infer::predict_clip;
use stsc::pseudo_gen::pseudo_label_clip;
use stsc_core::losses::{stcl, stcl_per_anchor, StclConfig};
use stsc_core::metrics::{
    confusion, evaluate, miou, video_consistency, wiou, ConfusionMatrix, MetricsReport,
};
use stsc_core::model::{grad_check, Model};
use stsc_core::numerics::DenseArray;
use stsc_core::pseudo::{harden, PseudoLabelConfig};
use stsc_core::synthetic::{generate_clip, sparsify_labels, ClipConfig};
use stsc_core::train::{train, TrainConfig, TrainHistory};
use stsc_core::types::{LabelMap, VideoClip, IGNORE};

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let report = grad_check(seed, 1e-5, 0.2).unwrap();
        worst = worst.max(report.max_relative_error);
        assert!(
            report.max_relative_error <= 1e-5,
            "seed {seed}: {}",
            report.max_relative_error
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!("criterion 1 (gradient fidelity): PASS, max rel err {worst:.3e} in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// criterion 2: dense-mode loss vs an independent brute-force evaluation

struct LossInstance {
    emb_q: DenseArray,
    emb_r: DenseArray,
    labels_q: LabelMap,
    labels_r: LabelMap,
    dim: usize,
    hw: usize,
}

fn random_loss_instance(rng: &mut ChaCha8Rng) -> LossInstance {
    let h = rng.gen_range(2..=8);
    let w = rng.gen_range(2..=8);
    let dim = rng.gen_range(2..=6);
    let classes = rng.gen_range(2..=4u8);
    let emb = |rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..dim * h * w).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        DenseArray::new(vec![dim, h, w], data).unwrap()
    };
    let emb_q = emb(rng);
    let emb_r = emb(rng);
    let labels = |rng: &mut ChaCha8Rng| {
        let data: Vec<u8> = (0..h * w)
            .map(|_| {
                if rng.gen::<f64>() < 0.1 {
                    IGNORE
                } else {
                    rng.gen_range(0..classes)
                }
            })
            .collect();
        LabelMap::new(h, w, data).unwrap()
    };
    let labels_q = labels(rng);
    let labels_r = labels(rng);
    LossInstance {
        emb_q,
        emb_r,
        labels_q,
        labels_r,
        dim,
        hw: h * w,
    }
}

fn brute_force_loss(inst: &LossInstance, tau: f64) -> f64 {
    let pixel = |frame: usize, idx: usize| -> Vec<f64> {
        let m = if frame == 0 { &inst.emb_q } else { &inst.emb_r };
        (0..inst.dim).map(|k| m.data()[k * inst.hw + idx]).collect()
    };
    let label = |frame: usize, idx: usize| -> u8 {
        if frame == 0 {
            inst.labels_q.data()[idx]
        } else {
            inst.labels_r.data()[idx]
        }
    };
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for a_idx in 0..inst.hw {
        let c = label(0, a_idx);
        if c == IGNORE {
            continue;
        }
        let a = pixel(0, a_idx);
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for frame in 0..2 {
            for idx in 0..inst.hw {
                if frame == 0 && idx == a_idx {
                    continue;
                }
                let l = label(frame, idx);
                if l == IGNORE {
                    continue;
                }
                if l == c {
                    positives.push(pixel(frame, idx));
                } else {
                    negatives.push(pixel(frame, idx));
                }
            }
        }
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let neg_sum: f64 = negatives.iter().map(|n| (dot(&a, n) / tau).exp()).sum();
        let mut l_i = 0.0;
        for p in &positives {
            let e_p = (dot(&a, p) / tau).exp();
            l_i += -(e_p / (e_p + neg_sum)).ln();
        }
        total += l_i / positives.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[test]
fn criterion_2_loss_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let inst = random_loss_instance(&mut rng);
        let tau = [0.07, 0.5, 1.0][case % 3];
        let cfg = StclConfig {
            tau,
            dense_mode: true,
            ..StclConfig::default()
        };
        let got = stcl(&inst.emb_q, &inst.emb_r, &inst.labels_q, &inst.labels_r, &cfg)
            .unwrap()
            .value;
        let expected = brute_force_loss(&inst, tau);
        let dev = (got - expected).abs();
        worst = worst.max(dev);
        assert!(dev <= 1e-12, "case {case}: {got} vs {expected}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("criterion 2 (loss oracle equivalence): PASS, max dev {worst:.3e} in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// criterion 3: closed-form per-anchor loss values

#[test]
fn criterion_3_closed_form_values() {
    // No negatives: the fraction is 1, the loss is 0.
    let anchor = [1.0, 0.0];
    let positive = [0.0, 1.0];
    let v = stcl_per_anchor(&anchor, &[&positive], &[], 0.07).unwrap().value;
    assert!(v.abs() <= 1e-9, "{v}");
    // One positive and one negative at equal similarity: -ln(1/2).
    let negative = [0.0, 1.0];
    let v = stcl_per_anchor(&anchor, &[&positive], &[&negative], 0.07)
        .unwrap()
        .value;
    assert!((v - core::f64::consts::LN_2).abs() <= 1e-9, "{v}");
    // s+ = 1, s- = 0 at tau = 1: ln(1 + e^-1).
    let aligned = [1.0, 0.0];
    let orthogonal = [0.0, 1.0];
    let v = stcl_per_anchor(&anchor, &[&aligned], &[&orthogonal], 1.0)
        .unwrap()
        .value;
    assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() <= 1e-9, "{v}");
    assert!((v - 0.313262).abs() < 1e-6);
    println!("criterion 3 (closed-form loss values): PASS");
}

// ---------------------------------------------------------------------------
// criterion 4: metrics vs naive re-implementations plus hand examples

fn naive_metrics(preds: &[LabelMap], gts: &[LabelMap], classes: usize) -> (f64, f64) {
    let mut iou = Vec::new();
    let mut gt_counts = vec![0u64; classes];
    let mut total = 0u64;
    for c in 0..classes {
        let mut tp = 0u64;
        let mut union = 0u64;
        for (p, g) in preds.iter().zip(gts) {
            for (&pv, &gv) in p.data().iter().zip(g.data()) {
                if gv == IGNORE {
                    continue;
                }
                if usize::from(gv) == c && usize::from(pv) == c {
                    tp += 1;
                }
                if usize::from(gv) == c || usize::from(pv) == c {
                    union += 1;
                }
                if c == 0 {
                    total += 1;
                    gt_counts[usize::from(gv)] += 1;
                }
            }
        }
        iou.push(if union > 0 { Some(tp as f64 / union as f64) } else { None });
    }
    let present: Vec<f64> = iou.iter().copied().flatten().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    let wiou = (0..classes)
        .map(|c| gt_counts[c] as f64 / total as f64 * iou[c].unwrap_or(0.0))
        .sum();
    (miou, wiou)
}

fn naive_vc(preds: &[LabelMap], gts: &[LabelMap], n: usize) -> Option<f64> {
    let (h, w) = (gts[0].height(), gts[0].width());
    let mut scores = Vec::new();
    for start in 0..=(gts.len() - n) {
        let mut denom = 0u64;
        let mut num = 0u64;
        for r in 0..h {
            for c in 0..w {
                let g0 = gts[start].get(r, c);
                if g0 == IGNORE || !(1..n).all(|k| gts[start + k].get(r, c) == g0) {
                    continue;
                }
                denom += 1;
                if (0..n).all(|k| preds[start + k].get(r, c) == g0) {
                    num += 1;
                }
            }
        }
        if denom > 0 {
            scores.push(num as f64 / denom as f64);
        }
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[test]
fn criterion_4_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4040);
    for case in 0..100 {
        let classes = rng.gen_range(2..=4u8);
        let gts: Vec<LabelMap> = (0..4)
            .map(|_| {
                let data: Vec<u8> = (0..64)
                    .map(|_| {
                        if rng.gen::<f64>() < 0.1 {
                            IGNORE
                        } else {
                            rng.gen_range(0..classes)
                        }
                    })
                    .collect();
                LabelMap::new(8, 8, data).unwrap()
            })
            .collect();
        let preds: Vec<LabelMap> = gts
            .iter()
            .map(|g| {
                let data: Vec<u8> = g
                    .data()
                    .iter()
                    .map(|&v| {
                        if v == IGNORE || rng.gen::<f64>() < 0.3 {
                            rng.gen_range(0..classes)
                        } else {
                            v
                        }
                    })
                    .collect();
                LabelMap::new(8, 8, data).unwrap()
            })
            .collect();
        let mut cm = ConfusionMatrix::new(classes as usize);
        for (p, g) in preds.iter().zip(&gts) {
            cm.add(&confusion(p, g, classes as usize, IGNORE).unwrap()).unwrap();
        }
        let (nm, nw) = naive_metrics(&preds, &gts, classes as usize);
        assert!((miou(&cm).unwrap() - nm).abs() <= 1e-12, "case {case}");
        assert!((wiou(&cm).unwrap() - nw).abs() <= 1e-12, "case {case}");
        for n in [2, 3, 4] {
            match naive_vc(&preds, &gts, n) {
                Some(expected) => assert!(
                    (video_consistency(&preds, &gts, n).unwrap() - expected).abs() <= 1e-12,
                    "case {case} vc{n}"
                ),
                None => assert!(video_consistency(&preds, &gts, n).is_err()),
            }
        }
    }
    // Hand example: confusion matrix [[1,1],[0,2]] gives mIoU 7/12.
    let cm = ConfusionMatrix::from_counts(2, vec![1, 1, 0, 2]).unwrap();
    let expected = (0.5 + 2.0 / 3.0) / 2.0;
    assert_eq!(miou(&cm).unwrap(), expected);
    assert!((miou(&cm).unwrap() - 0.583333).abs() < 1e-6);
    // Hand example: one of the two statically-labeled pixels flips.
    let gts = vec![
        LabelMap::new(1, 2, vec![0, 1]).unwrap(),
        LabelMap::new(1, 2, vec![0, 1]).unwrap(),
    ];
    let preds = vec![
        LabelMap::new(1, 2, vec![0, 1]).unwrap(),
        LabelMap::new(1, 2, vec![0, 0]).unwrap(),
    ];
    assert_eq!(video_consistency(&preds, &gts, 2).unwrap(), 0.5);
    println!("criterion 4 (metrics oracle): PASS");
}

// ---------------------------------------------------------------------------
// criterion 5: pseudo-label thresholding properties

#[test]
fn criterion_5_pseudo_label_properties() {
    let clip = generate_clip(&benchmark_clip_config(77), "t").unwrap();
    let model = Model::init(Default::default(), 3).unwrap();
    let features = model.encode(&clip.frames[0]).unwrap();
    let probs = model.classify(&features).unwrap();
    let argmax = harden(
        &probs,
        &PseudoLabelConfig {
            threshold: 0.0,
            ..PseudoLabelConfig::default()
        },
    )
    .unwrap()
    .0;
    let mut last = f64::INFINITY;
    for theta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = PseudoLabelConfig {
            threshold: theta,
            ..PseudoLabelConfig::default()
        };
        let (labels, stats) = harden(&probs, &cfg).unwrap();
        assert!(stats.coverage() <= last, "coverage rose at theta={theta}");
        last = stats.coverage();
        if theta == 1.0 {
            assert_eq!(stats.coverage(), 0.0);
        }
        for (&l, &a) in labels.data().iter().zip(argmax.data()) {
            assert!(l == IGNORE || l == a);
        }
    }
    println!("criterion 5 (pseudo-label properties): PASS");
}

// ---------------------------------------------------------------------------
// shared benchmark setup for criteria 6-8

fn benchmark_clip_config(seed: u64) -> ClipConfig {
    ClipConfig {
        noise_std: 0.15,
        shapes_per_clip: 5,
        seed,
        ..ClipConfig::default()
    }
}

fn benchmark_clips(count: usize, base_seed: u64, keep_every: usize) -> Vec<VideoClip> {
    (0..count)
        .map(|i| {
            let cfg = benchmark_clip_config(base_seed + i as u64);
            let clip = generate_clip(&cfg, &format!("clip_{i:04}")).unwrap();
            sparsify_labels(&clip, keep_every).unwrap()
        })
        .collect()
}

fn benchmark_train_config(seed: u64, lambda2: f64, iterations: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        lambda2,
        iterations,
        learning_rate: lr,
        seed,
        ..TrainConfig::default()
    }
}

fn eval_benchmark(model: &Model, eval_clips: &[VideoClip]) -> MetricsReport {
    let pairs: Vec<(VideoClip, VideoClip)> = eval_clips
        .iter()
        .map(|gt| (predict_clip(model, gt).unwrap(), gt.clone()))
        .collect();
    evaluate(&pairs, 4, &[8]).unwrap()
}

/// Checkpoint files plus history serialized to bytes, for byte-identity
/// comparisons between repeated runs.
fn run_artifacts(model: &Model, history: &TrainHistory) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), model).unwrap();
    let mut bytes = std::fs::read(dir.path().join("checkpoint.json")).unwrap();
    bytes.extend(std::fs::read(dir.path().join("params.bin")).unwrap());
    bytes.extend(serde_json::to_vec(history).unwrap());
    bytes
}

struct AblationOutcome {
    mean_vc8: [f64; 2],
    mean_miou: [f64; 2],
    artifacts: Vec<Vec<u8>>,
    elapsed_secs: f64,
}

fn run_ablation() -> AblationOutcome {
    let start = Instant::now();
    let train_clips = benchmark_clips(20, 0, 2);
    let eval_clips = benchmark_clips(10, 1000, 1);
    let mut mean_vc8 = [0.0; 2];
    let mut mean_miou = [0.0; 2];
    let mut artifacts = Vec::new();
    for (arm, lambda2) in [0.2, 0.0].into_iter().enumerate() {
        for seed in 0..5u64 {
            let cfg = benchmark_train_config(seed, lambda2, 300, 0.02);
            let (model, history) = train(&train_clips, &cfg).unwrap();
            let report = eval_benchmark(&model, &eval_clips);
            mean_vc8[arm] += report.vc_for(8).unwrap() / 5.0;
            mean_miou[arm] += report.miou / 5.0;
            artifacts.push(run_artifacts(&model, &history));
        }
    }
    AblationOutcome {
        mean_vc8,
        mean_miou,
        artifacts,
        elapsed_secs: start.elapsed().as_secs_f64(),
    }
}

struct PseudoOutcome {
    mean_baseline_miou: f64,
    mean_student_miou: f64,
    artifacts: Vec<Vec<u8>>,
}

fn run_pseudo_utility() -> PseudoOutcome {
    let all = benchmark_clips(20, 0, 2);
    let labeled: Vec<VideoClip> = all[..10].to_vec();
    let unlabeled: Vec<VideoClip> = all[10..]
        .iter()
        .map(|clip| VideoClip {
            clip_id: clip.clip_id.clone(),
            frames: clip.frames.clone(),
            labels: clip.frames.iter().map(|_| None).collect(),
        })
        .collect();
    let eval_clips = benchmark_clips(10, 1000, 1);
    let teacher_cfg = benchmark_train_config(1000, 0.2, 1000, 0.02);
    let (teacher, teacher_history) = train(&labeled, &teacher_cfg).unwrap();
    let mut artifacts = vec![run_artifacts(&teacher, &teacher_history)];
    let mut pool = labeled.clone();
    for clip in &unlabeled {
        let (pl, _) = pseudo_label_clip(std::slice::from_ref(&teacher), clip, 0.5).unwrap();
        pool.push(pl);
    }
    let mut mean_baseline = 0.0;
    let mut mean_student = 0.0;
    for seed in 0..5u64 {
        let cfg = benchmark_train_config(seed, 0.2, 300, 0.02);
        let (baseline, baseline_history) = train(&labeled, &cfg).unwrap();
        let (student, student_history) = train(&pool, &cfg).unwrap();
        mean_baseline += eval_benchmark(&baseline, &eval_clips).miou / 5.0;
        mean_student += eval_benchmark(&student, &eval_clips).miou / 5.0;
        artifacts.push(run_artifacts(&baseline, &baseline_history));
        artifacts.push(run_artifacts(&student, &student_history));
    }
    PseudoOutcome {
        mean_baseline_miou: mean_baseline,
        mean_student_miou: mean_student,
        artifacts,
    }
}

static ABLATION: OnceLock<AblationOutcome> = OnceLock::new();
static PSEUDO: OnceLock<PseudoOutcome> = OnceLock::new();

fn ablation() -> &'static AblationOutcome {
    ABLATION.get_or_init(run_ablation)
}

fn pseudo_utility() -> &'static PseudoOutcome {
    PSEUDO.get_or_init(run_pseudo_utility)
}

#[test]
fn criterion_6_ablation_direction() {
    let outcome = ablation();
    let vc8_gain = outcome.mean_vc8[0] - outcome.mean_vc8[1];
    let miou_delta = outcome.mean_miou[0] - outcome.mean_miou[1];
    assert!(
        vc8_gain >= 0.01,
        "mean VC8 gain {vc8_gain:.4} (with {:.4} vs without {:.4})",
        outcome.mean_vc8[0],
        outcome.mean_vc8[1]
    );
    assert!(
        miou_delta >= -0.01,
        "mean mIoU degraded by {:.4}",
        -miou_delta
    );
    assert!(
        outcome.elapsed_secs < 900.0,
        "took {:.0}s",
        outcome.elapsed_secs
    );
    println!(
        "criterion 6 (ablation direction): PASS, VC8 {:.4} -> {:.4}, mIoU {:.4} -> {:.4}, {:.0}s",
        outcome.mean_vc8[1],
        outcome.mean_vc8[0],
        outcome.mean_miou[1],
        outcome.mean_miou[0],
        outcome.elapsed_secs
    );
}

#[test]
fn criterion_7_pseudo_label_utility() {
    let outcome = pseudo_utility();
    let delta = outcome.mean_student_miou - outcome.mean_baseline_miou;
    assert!(
        delta >= -0.005,
        "pseudo labels reduced mean mIoU by {:.4} ({:.4} -> {:.4})",
        -delta,
        outcome.mean_baseline_miou,
        outcome.mean_student_miou
    );
    println!(
        "criterion 7 (pseudo-label utility): PASS, mIoU {:.4} -> {:.4}",
        outcome.mean_baseline_miou, outcome.mean_student_miou
    );
}

#[test]
fn criterion_8_determinism() {
    let first_ablation = ablation();
    let second_ablation = run_ablation();
    assert_eq!(
        first_ablation.artifacts, second_ablation.artifacts,
        "ablation artifacts differ between runs"
    );
    let first_pseudo = pseudo_utility();
    let second_pseudo = run_pseudo_utility();
    assert_eq!(
        first_pseudo.artifacts, second_pseudo.artifacts,
        "pseudo-label artifacts differ between runs"
    );
    println!("criterion 8 (determinism): PASS, all checkpoints and histories byte-identical");
}
