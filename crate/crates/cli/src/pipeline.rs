//! The pipeline stages behind each subcommand. Stages talk to each other only
//! through the files they write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsseg::config::{LambdaMode, TrainConfig};
use wsseg::dataio::{write_csv, DatasetIndex, Split};
use wsseg::geometry::{generate_prompts, load_prompts, save_prompts, BoxPromptSet};
use wsseg::inference::{evaluate, InferMode, InferModels};
use wsseg::metrics::{save_eval, summarize, EvalSummary};
use wsseg::pseudolabel::{build_bundle, load_targets, save_manifest, save_targets};
use wsseg::segmenter::{SceneTruth, Segmenter};
use wsseg::synth::{generate_dataset, SynthConfig};
use wsseg::trainer::{RunKind, Target, Trainer, TrainingSample, ValSample};
use wsseg::{Error, Result};

pub const PROMPTS_FILE: &str = "prompts.csv";
pub const SWEEP_HEADER: &str = "lambda_mode,lambda,dsc_mean,dsc_std,hd95_mean,hd95_std";
pub const ABLATION_HEADER: &str = "method,dsc_mean,dsc_std,hd95_mean,hd95_std";
/// λ values of the sweep; a Gaussian warm-up row follows them.
pub const SWEEP_LAMBDAS: [f64; 4] = [0.1, 0.3, 0.5, 1.0];

/// Refuses a non-empty directory unless `force`, then makes sure it exists.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Error::Validation(format!(
                "output directory {} is not empty (pass --force to write into it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth_data(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    Ok(generate_dataset(cfg, out)?.len())
}

/// Writes `prompts.csv` with the three boxes of every annotated image.
pub fn gen_prompts(data: &Path, out: &Path) -> Result<Vec<BoxPromptSet>> {
    let index = DatasetIndex::load(data)?;
    let prompts = index
        .entries
        .iter()
        .map(|e| generate_prompts(&e.annotation, e.dims))
        .collect::<Result<Vec<_>>>()?;
    save_prompts(out.join(PROMPTS_FILE), &prompts)?;
    Ok(prompts)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmenterSpec {
    Oracle,
    NoisyOracle { radius: usize, seed: u64 },
    Recorded { dir: PathBuf },
}

/// Which images a stage covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitSel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSel::Train),
            "test" => Ok(SplitSel::Test),
            "all" => Ok(SplitSel::All),
            other => Err(Error::Config(format!("unknown split {other:?} (train, test or all)"))),
        }
    }
}

fn select_ids(index: &DatasetIndex, sel: SplitSel) -> Result<Vec<String>> {
    match sel {
        SplitSel::Train => index.ids_in(Split::Train),
        SplitSel::Test => index.ids_in(Split::Test),
        SplitSel::All => Ok(index.entries.iter().map(|e| e.id().to_string()).collect()),
    }
}

fn build_segmenter(spec: &SegmenterSpec, index: &DatasetIndex, ids: &[String]) -> Result<Segmenter> {
    let truths = || -> Result<Vec<SceneTruth>> {
        ids.iter()
            .map(|id| {
                let entry = index.get(id).expect("id taken from the index");
                let gt = entry.load_gt()?.ok_or_else(|| {
                    Error::validation(format!("oracle segmenters need the ground truth of {id}"))
                })?;
                SceneTruth::new(id.clone(), gt)
            })
            .collect()
    };
    Ok(match spec {
        SegmenterSpec::Oracle => Segmenter::oracle(truths()?),
        SegmenterSpec::NoisyOracle { radius, seed } => Segmenter::noisy_oracle(truths()?, *radius, *seed),
        SegmenterSpec::Recorded { dir } => Segmenter::recorded(dir.clone()),
    })
}

/// Builds and writes `y_int`, `y_uni` and `u` for the selected images.
/// `prompts` is a `prompts.csv` or the directory holding one.
pub fn gen_pseudolabels(
    data: &Path,
    prompts: &Path,
    out: &Path,
    spec: &SegmenterSpec,
    split: SplitSel,
) -> Result<usize> {
    let index = DatasetIndex::load(data)?;
    let prompts_path = if prompts.is_dir() {
        prompts.join(PROMPTS_FILE)
    } else {
        prompts.to_path_buf()
    };
    let prompts: BTreeMap<String, BoxPromptSet> = load_prompts(&prompts_path)?
        .into_iter()
        .map(|p| (p.image_id.clone(), p))
        .collect();
    let ids = select_ids(&index, split)?;
    let segmenter = build_segmenter(spec, &index, &ids)?;
    let mut targets = Vec::with_capacity(ids.len());
    for id in &ids {
        let p = prompts.get(id).ok_or_else(|| {
            Error::validation(format!(
                "{} has no prompts for {id}; re-run `gen-prompts` on this dataset",
                prompts_path.display()
            ))
        })?;
        let image = index.get(id).expect("id taken from the index").load_image()?;
        let t = build_bundle(&image, p, &segmenter)?.targets();
        save_targets(out, &t)?;
        targets.push(t);
    }
    save_manifest(out, &targets)?;
    Ok(targets.len())
}

/// Training data of a run: pseudo-labelled train images, and optionally a
/// validation subset of them scored against ground truth.
pub struct TrainData {
    pub samples: Vec<TrainingSample>,
    pub val: Vec<ValSample>,
}

/// `val_fraction` of the train split (seeded) is held out for validation.
pub fn load_train_data(data: &Path, labels: &Path, cfg: &TrainConfig, val_fraction: f64) -> Result<TrainData> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config("val_fraction must be in [0, 1)".into()));
    }
    let index = DatasetIndex::load(data)?;
    let mut ids = index.ids_in(Split::Train)?;
    let n_val = (ids.len() as f64 * val_fraction).round() as usize;
    let mut val_ids = Vec::new();
    if n_val > 0 {
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        val_ids = shuffled[..n_val].to_vec();
        val_ids.sort();
        ids.retain(|id| !val_ids.contains(id));
    }
    let s = cfg.image_size;
    let samples = ids
        .iter()
        .map(|id| {
            let entry = index.get(id).expect("id taken from the index");
            let targets = load_targets(labels, id, entry.dims)?;
            TrainingSample::new(&entry.load_image()?, &targets, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut val = Vec::new();
    for id in &val_ids {
        let entry = index.get(id).expect("id taken from the index");
        match entry.load_gt()? {
            Some(gt) => val.push(ValSample::new(&entry.load_image()?, &gt, s)),
            None => log::warn!("{id}: no ground truth, left out of validation"),
        }
    }
    Ok(TrainData { samples, val })
}

/// Trains one run and writes its checkpoints, `loss.csv` and `train_config.txt`.
pub fn train_run(data: &TrainData, cfg: &TrainConfig, kind: RunKind, out: &Path) -> Result<Trainer> {
    let mut t = Trainer::new(cfg.clone(), data.samples.clone(), data.val.clone(), kind)?;
    t.run()?;
    t.save(out)?;
    Ok(t)
}

/// Scores a run on `split`, writing `eval.csv`, `summary.txt` and the
/// predicted masks under `out/preds/`.
pub fn eval_run(
    data: &Path,
    run: &Path,
    out: &Path,
    mode: InferMode,
    best: bool,
    split: SplitSel,
) -> Result<EvalSummary> {
    let index = DatasetIndex::load(data)?;
    let models = InferModels::load(run, best)?;
    let ids = select_ids(&index, split)?;
    let (results, preds, skipped) = evaluate(&models, &index, &ids, mode)?;
    if results.is_empty() {
        return Err(Error::validation("no images with ground truth to evaluate"));
    }
    for (r, p) in results.iter().zip(&preds) {
        wsseg::dataio::save_mask(p, out.join("preds").join(format!("{}.png", r.image_id)))?;
    }
    let summary = summarize(&results, skipped);
    save_eval(out, &results, &summary, mode.as_str())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mode: LambdaMode,
    pub lambda: f64,
    pub summary: EvalSummary,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            self.mode.as_str(),
            self.lambda,
            s.dsc_mean,
            s.dsc_std,
            s.hd95_mean,
            s.hd95_std
        )
    }
}

/// The five sweep settings: constant λ on the grid, then Gaussian warm-up to `warmup_max`.
pub fn sweep_settings(warmup_max: f64) -> Vec<(LambdaMode, f64)> {
    SWEEP_LAMBDAS
        .iter()
        .map(|&l| (LambdaMode::Constant, l))
        .chain([(LambdaMode::GaussianWarmup, warmup_max)])
        .collect()
}

pub fn run_name(mode: LambdaMode, lambda: f64) -> String {
    match mode {
        LambdaMode::Constant => format!("lambda_{lambda}"),
        LambdaMode::GaussianWarmup => format!("warmup_{lambda}"),
    }
}

/// Trains and evaluates every setting under `out/runs/<name>/`, then writes
/// `sweep.csv` and `sweep.svg`.
pub fn sweep_lambda(
    data: &Path,
    labels: &Path,
    out: &Path,
    base: &TrainConfig,
    warmup_max: f64,
    val_fraction: f64,
    mode: InferMode,
) -> Result<Vec<SweepRow>> {
    let train_data = load_train_data(data, labels, base, val_fraction)?;
    let mut rows = Vec::new();
    for (lm, lambda) in sweep_settings(warmup_max) {
        let cfg = TrainConfig {
            lambda_mode: lm,
            lambda_value: lambda,
            ..base.clone()
        };
        let dir = out.join("runs").join(run_name(lm, lambda));
        log::info!("sweep: training {}", dir.display());
        train_run(&train_data, &cfg, RunKind::Dual, &dir)?;
        let summary = eval_run(data, &dir, &dir.join("eval"), mode, false, SplitSel::Test)?;
        rows.push(SweepRow {
            mode: lm,
            lambda,
            summary,
        });
    }
    let lines: Vec<String> = rows.iter().map(SweepRow::to_csv).collect();
    write_csv(out.join("sweep.csv"), SWEEP_HEADER, &lines)?;
    crate::plot::sweep_plot(&out.join("sweep.svg"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: &'static str,
    pub summary: EvalSummary,
}

/// Single model on `y_int`, single model on `y_uni` and the full method, all
/// with the same config and seed, scored on the test split.
pub fn ablate(
    data: &Path,
    labels: &Path,
    out: &Path,
    cfg: &TrainConfig,
    val_fraction: f64,
    mode: InferMode,
) -> Result<Vec<AblationRow>> {
    let train_data = load_train_data(data, labels, cfg, val_fraction)?;
    let arms = [
        ("single_y_int", RunKind::Single(Target::Int)),
        ("single_y_uni", RunKind::Single(Target::Uni)),
        ("cross_teaching", RunKind::Dual),
    ];
    let mut rows = Vec::new();
    for (method, kind) in arms {
        let dir = out.join("runs").join(method);
        log::info!("ablate: training {method}");
        train_run(&train_data, cfg, kind, &dir)?;
        let summary = eval_run(data, &dir, &dir.join("eval"), mode, false, SplitSel::Test)?;
        rows.push(AblationRow { method, summary });
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            format!(
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.method, s.dsc_mean, s.dsc_std, s.hd95_mean, s.hd95_std
            )
        })
        .collect();
    write_csv(out.join("ablation.csv"), ABLATION_HEADER, &lines)?;
    Ok(rows)
}
