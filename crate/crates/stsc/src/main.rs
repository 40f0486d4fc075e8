use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stsc::checkpoint::load_checkpoint;
use stsc::clipio::{read_dataset, write_clip, write_index, ClipManifest};
use stsc::dataset::{evaluate_dirs, generate_dataset};
use stsc::error::Result;
use stsc::infer::predict_clip;
use stsc::threads::parallel_map;
use stsc::trainer::{load_train_config, run_training};
use stsc_core::synthetic::ClipConfig;
use stsc_core::train::TrainConfig;

#[derive(Parser)]
#[command(name = "stsc", version, about = "Video scene parsing toolkit: synthetic data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip dataset
    GenData {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of clips to generate
        #[arg(long)]
        clips: usize,
        /// Optional JSON file overriding clip-generation defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; clip i uses seed + i
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep labels only on every k-th frame
        #[arg(long, default_value_t = 1)]
        keep_every: usize,
    },
    /// Train a model on a clip dataset
    Train {
        /// Ground-truth dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Optional pseudo-labeled dataset directory, merged with equal weight
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Optional JSON file overriding training defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint and history.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predicted clips against ground truth
    Eval {
        /// Directory of predicted clips
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth clips
        #[arg(long)]
        gt: PathBuf,
        /// Number of classes
        #[arg(long)]
        classes: usize,
        /// Video-consistency window sizes
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16])]
        vc: Vec<usize>,
    },
    /// Pseudo-label a dataset with one or more teacher checkpoints
    PseudoLabel {
        /// Comma-separated teacher checkpoint directories
        #[arg(long, value_delimiter = ',', required = true)]
        teacher: Vec<PathBuf>,
        /// Input dataset directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Confidence threshold; pixels at or below it are ignored
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Compare analytic gradients against central finite differences
    GradCheck {
        /// Number of seeds to check (seeds 0..N)
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Weight of the consistency loss in the checked objective
        #[arg(long, default_value_t = 0.2)]
        lambda2: f64,
    },
    /// Predict labels for every frame of every clip in a dataset
    Infer {
        /// Checkpoint directory
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input dataset directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            clips,
            config,
            seed,
            keep_every,
        } => {
            let mut base = match config {
                Some(path) => stsc::config::load_partial(&path, ClipConfig::default())?,
                None => ClipConfig::default(),
            };
            base.seed = seed;
            let index = generate_dataset(&out, clips, &base, keep_every)?;
            println!(
                "{}",
                serde_json::json!({ "clips": index.clips.len(), "out": out })
            );
        }
        Command::Train {
            data,
            pseudo,
            config,
            out,
        } => {
            let cfg = match config {
                Some(path) => load_train_config(&path)?,
                None => TrainConfig::default(),
            };
            let outcome = run_training(&data, pseudo.as_deref(), &cfg, &out)?;
            let last = outcome.history.last();
            eprintln!(
                "trained {} iterations on {:?}",
                outcome.history.len(),
                data
            );
            println!(
                "{}",
                serde_json::json!({
                    "iterations": outcome.history.len(),
                    "final_total": last.map(|r| r.total),
                    "out": out,
                })
            );
        }
        Command::Eval {
            pred,
            gt,
            classes,
            vc,
        } => {
            let report = evaluate_dirs(&pred, &gt, classes, &vc)?;
            println!("{}", report.to_json());
        }
        Command::PseudoLabel {
            teacher,
            input,
            out,
            threshold,
        } => {
            let teachers = teacher
                .iter()
                .map(|dir| load_checkpoint(dir))
                .collect::<Result<Vec<_>>>()?;
            let stats = stsc::pseudo_gen::generate(&teachers, &input, &out, threshold)?;
            println!(
                "{}",
                serde_json::json!({
                    "total_pixels": stats.total_pixels,
                    "labeled_pixels": stats.labeled_pixels,
                    "coverage": stats.coverage(),
                    "per_class_counts": stats.per_class_counts,
                })
            );
        }
        Command::GradCheck {
            seeds,
            step,
            lambda2,
        } => {
            let mut reports = Vec::new();
            let mut worst = 0.0f64;
            for seed in 0..seeds {
                let report = stsc_core::model::grad_check(seed, step, lambda2)?;
                worst = worst.max(report.max_relative_error);
                reports.push(serde_json::json!({
                    "seed": report.seed,
                    "max_relative_error": report.max_relative_error,
                    "worst_array": report.worst_array,
                    "worst_index": report.worst_index,
                    "params_checked": report.params_checked,
                }));
            }
            println!(
                "{}",
                serde_json::json!({ "max_relative_error": worst, "reports": reports })
            );
        }
        Command::Infer {
            checkpoint,
            input,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let (clips, mut index) = read_dataset(&input)?;
            index.num_classes = model.config.num_classes;
            parallel_map(&clips, |(clip, _)| {
                let predicted = predict_clip(&model, clip)?;
                let manifest = ClipManifest::for_clip(&predicted, index.num_classes);
                write_clip(&out.join(&predicted.clip_id), &predicted, &manifest)
            })?;
            write_index(&out, &index)?;
            println!(
                "{}",
                serde_json::json!({ "clips": index.clips.len(), "out": out })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
