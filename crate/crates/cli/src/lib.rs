//! Command-line front end of the weakly supervised segmentation pipeline.

pub mod manifest;
pub mod pipeline;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wsseg::config::{LambdaMode, TrainConfig};
use wsseg::inference::InferMode;
use wsseg::segmenter::DEFAULT_NOISE_RADIUS;
use wsseg::synth::SynthConfig;
use wsseg::trainer::{RunKind, Target};
use wsseg::{Error, Result};

use manifest::RunManifest;
use pipeline::{SegmenterSpec, SplitSel};

#[derive(Debug, Parser)]
#[command(name = "wsseg", version, about = "Weakly supervised nodule segmentation from aspect-ratio annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic phantoms with masks, annotations and a train/test split.
    SynthData {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Side length of the square images.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Build the three box prompts of every annotated image.
    GenPrompts {
        /// Dataset directory (from synth-data or with the same layout).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Segment each prompt and write intersection, union and uncertainty labels.
    GenPseudolabels {
        #[arg(long)]
        data: PathBuf,
        /// prompts.csv or the gen-prompts output directory.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// oracle, noisy_oracle or recorded.
        #[arg(long, default_value = "noisy_oracle")]
        segmenter: String,
        /// Disk radius of the noisy oracle's erosion/dilation.
        #[arg(long, default_value_t = DEFAULT_NOISE_RADIUS)]
        radius: usize,
        /// Seed of the noisy oracle's erode/dilate choice.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory of `<image_id>__b<k>.png` masks for the recorded segmenter.
        #[arg(long)]
        preds_dir: Option<PathBuf>,
        /// train, test or all.
        #[arg(long, default_value = "train")]
        split: SplitSel,
        #[arg(long)]
        force: bool,
    },
    /// Train the two cross-teaching networks (or one baseline network).
    Train {
        #[command(flatten)]
        common: TrainArgs,
        /// Train a single supervised model on y_int or y_uni instead.
        #[arg(long)]
        single: Option<Target>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score a trained run against ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// f1, f2 or ensemble.
        #[arg(long, default_value = "ensemble")]
        mode: InferMode,
        /// Use the best-validation checkpoints instead of the last ones.
        #[arg(long)]
        best: bool,
        #[arg(long, default_value = "test")]
        split: SplitSel,
        #[arg(long)]
        force: bool,
    },
    /// Train and evaluate λ ∈ {0.1, 0.3, 0.5, 1.0} and a Gaussian warm-up.
    SweepLambda {
        #[command(flatten)]
        common: TrainArgs,
        /// Final λ of the warm-up row.
        #[arg(long, default_value_t = wsseg::losses::DEFAULT_LAMBDA)]
        warmup_max: f64,
        #[arg(long, default_value = "ensemble")]
        mode: InferMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare single models on y_int and y_uni with the full method.
    Ablate {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long, default_value = "ensemble")]
        mode: InferMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Inputs and config overrides shared by the training subcommands.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of gen-pseudolabels.
    #[arg(long)]
    pub labels: PathBuf,
    /// key=value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// constant or gaussian_warmup.
    #[arg(long)]
    pub lambda_mode: Option<LambdaMode>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Share of the train split held out for validation and best-checkpoint selection.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda_value = v;
        }
        if let Some(v) = self.lambda_mode {
            cfg.lambda_mode = v;
        }
        if let Some(v) = self.iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::Shape(_)
        | Error::Config(_) => 2,
        Error::MissingArtifact { .. } | Error::MissingPrediction(_) => 3,
        Error::Numerical(_) => 4,
        Error::Io { .. } => 1,
    }
}

fn out_files(dir: &Path, names: &[&str]) -> Vec<PathBuf> {
    names.iter().map(|n| dir.join(n)).collect()
}

/// Runs one subcommand; `args` is recorded in the manifest.
pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    match cli.command {
        Command::SynthData {
            count,
            size,
            seed,
            out,
            force,
        } => {
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("synth-data", args);
            let cfg = SynthConfig::new(count, size, seed);
            let n = pipeline::synth_data(&cfg, &out)?;
            log::info!("wrote {n} phantoms to {}", out.display());
            m.seed = Some(seed);
            m.outputs = out_files(&out, &["images/", "gt_masks/", "annotations.csv", "split.csv"]);
            m.finish(&out)
        }
        Command::GenPrompts { data, out, force } => {
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("gen-prompts", args);
            let p = pipeline::gen_prompts(&data, &out)?;
            log::info!("wrote prompts for {} images", p.len());
            m.outputs = out_files(&out, &[pipeline::PROMPTS_FILE]);
            m.finish(&out)
        }
        Command::GenPseudolabels {
            data,
            prompts,
            out,
            segmenter,
            radius,
            seed,
            preds_dir,
            split,
            force,
        } => {
            let spec = match segmenter.as_str() {
                "oracle" => SegmenterSpec::Oracle,
                "noisy_oracle" => SegmenterSpec::NoisyOracle { radius, seed },
                "recorded" => SegmenterSpec::Recorded {
                    dir: preds_dir.ok_or_else(|| {
                        Error::Config("the recorded segmenter needs --preds-dir".into())
                    })?,
                },
                other => {
                    return Err(Error::Config(format!(
                        "unknown segmenter {other:?} (oracle, noisy_oracle or recorded)"
                    )))
                }
            };
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("gen-pseudolabels", args);
            let n = pipeline::gen_pseudolabels(&data, &prompts, &out, &spec, split)?;
            log::info!("wrote pseudo-labels for {n} images");
            m.seed = Some(seed);
            m.outputs = out_files(&out, &["<id>__yint.png", "<id>__yuni.png", "<id>__unc.png", wsseg::pseudolabel::BUNDLE_MANIFEST]);
            m.finish(&out)
        }
        Command::Train {
            common,
            single,
            out,
            force,
        } => {
            let cfg = common.resolve()?;
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("train", args);
            let data = pipeline::load_train_data(&common.data, &common.labels, &cfg, common.val_fraction)?;
            let kind = single.map(RunKind::Single).unwrap_or(RunKind::Dual);
            let t = pipeline::train_run(&data, &cfg, kind, &out)?;
            if let Some(v) = t.best_val_dsc() {
                log::info!("best validation DSC {v:.2}");
            }
            m.seed = Some(cfg.seed);
            m.config = Some(cfg.to_text());
            let stems: &[&str] = match kind {
                RunKind::Dual => &["f1.ckpt", "f2.ckpt", "f1_best.ckpt", "f2_best.ckpt"],
                RunKind::Single(_) => &["model.ckpt", "model_best.ckpt"],
            };
            m.outputs = out_files(&out, stems);
            m.outputs.extend(out_files(&out, &["loss.csv", "train_config.txt"]));
            m.finish(&out)
        }
        Command::Eval {
            data,
            run,
            out,
            mode,
            best,
            split,
            force,
        } => {
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("eval", args);
            let s = pipeline::eval_run(&data, &run, &out, mode, best, split)?;
            print!("{}", s.to_text(mode.as_str()));
            m.outputs = out_files(&out, &["eval.csv", "summary.txt", "preds/"]);
            m.finish(&out)
        }
        Command::SweepLambda {
            common,
            warmup_max,
            mode,
            out,
            force,
        } => {
            let cfg = common.resolve()?;
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("sweep-lambda", args);
            let rows = pipeline::sweep_lambda(
                &common.data,
                &common.labels,
                &out,
                &cfg,
                warmup_max,
                common.val_fraction,
                mode,
            )?;
            for r in &rows {
                println!("{}", r.to_csv());
            }
            m.seed = Some(cfg.seed);
            m.config = Some(cfg.to_text());
            m.outputs = out_files(&out, &["sweep.csv", "sweep.svg", "runs/"]);
            m.finish(&out)
        }
        Command::Ablate {
            common,
            mode,
            out,
            force,
        } => {
            let cfg = common.resolve()?;
            pipeline::prepare_out(&out, force)?;
            let mut m = RunManifest::new("ablate", args);
            let rows = pipeline::ablate(&common.data, &common.labels, &out, &cfg, common.val_fraction, mode)?;
            for r in &rows {
                println!("{}: DSC {:.2} HD95 {:.2}", r.method, r.summary.dsc_mean, r.summary.hd95_mean);
            }
            m.seed = Some(cfg.seed);
            m.config = Some(cfg.to_text());
            m.outputs = out_files(&out, &["ablation.csv", "runs/"]);
            m.finish(&out)
        }
    }
}
