//! Uncertainty-aware cross-teaching trainer and the single-model baseline.
//!
//! Both run the same loop. Batch composition and augmentation are pure
//! functions of `(seed, step)`: every epoch draws its own permutation and every
//! step its own augmentation stream, so a run resumed from a checkpoint
//! replays exactly the steps a continuous run would have taken.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::augment::Transform;
use crate::config::TrainConfig;
use crate::dataio::{write_csv, write_file};
use crate::error::{Error, Result};
use crate::inference::{predict_labels, InferMode};
use crate::losses::{ce_dice, dual_objective, Logits, LossReport};
use crate::mask::{BinaryMask, Dims, Image};
use crate::metrics::dsc;
use crate::model::{ModelCheckpoint, RngState, SegModel, Sgd, Tensor};
use crate::pseudolabel::LabelTargets;

pub const LOSS_HEADER: &str = "step,lr,lambda,l_sup,l_ct_u,l_total,val_dsc";

/// One training image and its labels at the training resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub size: usize,
    pub image: Vec<f32>,
    pub y_int: Vec<u8>,
    pub y_uni: Vec<u8>,
    pub u: Vec<u8>,
}

impl TrainingSample {
    /// Resizes image (bilinear) and labels (nearest) to `size × size`.
    pub fn new(image: &Image, targets: &LabelTargets, size: usize) -> Result<Self> {
        if targets.y_int.dims() != image.dims() {
            return Err(Error::validation(format!(
                "labels of {} do not match the image size",
                image.id
            )));
        }
        targets.validate()?;
        let d = Dims::new(size, size);
        let y_int = targets.y_int.resized(d);
        let y_uni = targets.y_uni.resized(d);
        let u = targets.u.resized(d);
        Ok(TrainingSample {
            id: image.id.clone(),
            size,
            image: image.resized(d).pixels().to_vec(),
            y_int: y_int.pixels().to_vec(),
            y_uni: y_uni.pixels().to_vec(),
            u: u.pixels().to_vec(),
        })
    }

    /// The four grids after a joint transform.
    pub fn transformed(&self, t: Transform) -> TrainingSample {
        let d = Dims::new(self.size, self.size);
        TrainingSample {
            id: self.id.clone(),
            size: self.size,
            image: t.apply(d, &self.image),
            y_int: t.apply(d, &self.y_int),
            y_uni: t.apply(d, &self.y_uni),
            u: t.apply(d, &self.u),
        }
    }
}

/// Validation image with its ground truth at the training resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ValSample {
    pub id: String,
    pub image: Vec<f32>,
    pub gt: BinaryMask,
}

impl ValSample {
    pub fn new(image: &Image, gt: &BinaryMask, size: usize) -> Self {
        let d = Dims::new(size, size);
        ValSample {
            id: image.id.clone(),
            image: image.resized(d).pixels().to_vec(),
            gt: gt.resized(d),
        }
    }
}

/// Label a single-model run trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Int,
    Uni,
}

impl Target {
    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Int => "y_int",
            Target::Uni => "y_uni",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y_int" | "int" => Ok(Target::Int),
            "y_uni" | "uni" => Ok(Target::Uni),
            other => Err(Error::Config(format!("unknown target {other:?} (y_int or y_uni)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    /// Two networks with cross teaching.
    Dual,
    /// One network, supervised only.
    Single(Target),
}

/// Networks and their optimizers.
#[derive(Clone, Debug)]
pub enum Members {
    Dual {
        f1: SegModel,
        f2: SegModel,
        opt1: Sgd,
        opt2: Sgd,
    },
    Single {
        model: SegModel,
        opt: Sgd,
        target: Target,
    },
}

impl Members {
    /// F₁ starts from `seed`, F₂ from `seed + 1`; a single model mirrors the
    /// dual member trained on the same target.
    pub fn init(kind: RunKind, cfg: &TrainConfig) -> Result<Self> {
        let sgd = |m: &SegModel| Sgd::new(m, cfg.momentum, cfg.weight_decay);
        Ok(match kind {
            RunKind::Dual => {
                let f1 = SegModel::new(cfg.model, cfg.seed)?;
                let f2 = SegModel::new(cfg.model, cfg.seed.wrapping_add(1))?;
                Members::Dual {
                    opt1: sgd(&f1),
                    opt2: sgd(&f2),
                    f1,
                    f2,
                }
            }
            RunKind::Single(target) => {
                let seed = match target {
                    Target::Int => cfg.seed,
                    Target::Uni => cfg.seed.wrapping_add(1),
                };
                let model = SegModel::new(cfg.model, seed)?;
                Members::Single {
                    opt: sgd(&model),
                    model,
                    target,
                }
            }
        })
    }

    pub fn kind(&self) -> RunKind {
        match self {
            Members::Dual { .. } => RunKind::Dual,
            Members::Single { target, .. } => RunKind::Single(*target),
        }
    }

    /// `(file stem, model, optimizer)` of every member.
    pub fn named(&self) -> Vec<(&'static str, &SegModel, &Sgd)> {
        match self {
            Members::Dual { f1, f2, opt1, opt2 } => vec![("f1", f1, opt1), ("f2", f2, opt2)],
            Members::Single { model, opt, .. } => vec![("model", model, opt)],
        }
    }

    pub fn models(&self) -> Vec<&SegModel> {
        self.named().into_iter().map(|(_, m, _)| m).collect()
    }
}

/// One row of the loss CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
    pub val_dsc: Option<f64>,
}

impl LossRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        let val = self.val_dsc.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{val}",
            self.step, self.lr, r.lambda, r.l_sup, r.l_ct_u, r.l_total
        )
    }
}

/// ChaCha stream keyed by the run seed and a purpose tag.
fn stream_rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(purpose.as_bytes());
    h.update(seed.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<TrainingSample>,
    val: Vec<ValSample>,
    members: Members,
    step: usize,
    history: Vec<LossRow>,
    best: Option<(f64, Members)>,
    epoch_order: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        samples: Vec<TrainingSample>,
        val: Vec<ValSample>,
        kind: RunKind,
    ) -> Result<Self> {
        cfg.validate()?;
        let samples: Vec<TrainingSample> = if cfg.drop_empty_int {
            samples.into_iter().filter(|s| s.y_int.contains(&1)).collect()
        } else {
            samples
        };
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.size != cfg.image_size) {
            return Err(Error::validation(format!(
                "sample {} is {}px, config expects {}px",
                bad.id, bad.size, cfg.image_size
            )));
        }
        let members = Members::init(kind, &cfg)?;
        Ok(Trainer {
            cfg,
            samples,
            val,
            members,
            step: 0,
            history: Vec::new(),
            best: None,
            epoch_order: None,
        })
    }

    /// Continues from checkpoints written by [`Trainer::checkpoints`].
    pub fn resume(
        cfg: TrainConfig,
        samples: Vec<TrainingSample>,
        val: Vec<ValSample>,
        kind: RunKind,
        checkpoints: &[ModelCheckpoint],
    ) -> Result<Self> {
        let mut t = Trainer::new(cfg, samples, val, kind)?;
        let step = checkpoints.first().map(|c| c.step).unwrap_or(0);
        let restore = |ck: &ModelCheckpoint, opt: &mut Sgd| -> Result<SegModel> {
            if ck.config != t.cfg.model || ck.step != step {
                return Err(Error::Config("checkpoint does not match the run config".into()));
            }
            let model = ck.to_model()?;
            if let Some(m) = &ck.momentum {
                if !opt.set_velocity(m.clone()) {
                    return Err(Error::Format("momentum buffers do not match the model".into()));
                }
            }
            Ok(model)
        };
        match (&mut t.members, checkpoints) {
            (Members::Dual { f1, f2, opt1, opt2 }, [c1, c2]) => {
                *f1 = restore(c1, opt1)?;
                *f2 = restore(c2, opt2)?;
            }
            (Members::Single { model, opt, .. }, [c]) => *model = restore(c, opt)?,
            _ => return Err(Error::Config("wrong number of checkpoints for this run".into())),
        }
        t.step = step as usize;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn members(&self) -> &Members {
        &self.members
    }

    pub fn history(&self) -> &[LossRow] {
        &self.history
    }

    pub fn best_val_dsc(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.0)
    }

    fn rng_state(&self) -> RngState {
        RngState::capture(&stream_rng(self.cfg.seed, "augment", self.step as u64))
    }

    fn sample_index(&mut self, position: usize) -> usize {
        let n = self.samples.len();
        let epoch = position / n;
        if self.epoch_order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(self.cfg.seed, "epoch", epoch as u64));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().expect("just set").1[position % n]
    }

    /// Augmented samples of the current step.
    pub fn next_batch(&mut self) -> Vec<TrainingSample> {
        let b = self.cfg.batch_size;
        let mut rng = stream_rng(self.cfg.seed, "augment", self.step as u64);
        (0..b)
            .map(|j| {
                let idx = self.sample_index(self.step * b + j);
                let t = Transform::sample(&mut rng, self.cfg.augmentation);
                self.samples[idx].transformed(t)
            })
            .collect()
    }

    /// One optimizer step for every member.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let batch = self.next_batch();
        let s = self.cfg.image_size;
        let x = Tensor::from_vec(
            [batch.len(), 1, s, s],
            batch.iter().flat_map(|b| b.image.iter().copied()).collect(),
        )?;
        let cat = |f: fn(&TrainingSample) -> &Vec<u8>| -> Vec<u8> {
            batch.iter().flat_map(|b| f(b).iter().copied()).collect()
        };
        let lr = self.cfg.poly_lr(self.step);
        let lambda = self.cfg.lambda_at(self.step);
        let ids = || batch.iter().map(|b| b.id.as_str()).collect::<Vec<_>>().join(",");
        let report = match &mut self.members {
            Members::Dual { f1, f2, opt1, opt2 } => {
                let (out1, cache1) = f1.forward(&x)?;
                let (out2, cache2) = f2.forward(&x)?;
                let (report, g1, g2) = dual_objective(
                    &Logits::from_tensor(&out1)?,
                    &Logits::from_tensor(&out2)?,
                    &cat(|b| &b.y_int),
                    &cat(|b| &b.y_uni),
                    &cat(|b| &b.u),
                    lambda,
                )?;
                check_finite(&report, self.step, &ids())?;
                f1.zero_grad();
                f1.backward(&cache1, &g1.to_tensor(s, s)?);
                opt1.step(f1, lr as f32);
                f2.zero_grad();
                f2.backward(&cache2, &g2.to_tensor(s, s)?);
                opt2.step(f2, lr as f32);
                report
            }
            Members::Single { model, opt, target } => {
                let (out, cache) = model.forward(&x)?;
                let labels = match target {
                    Target::Int => cat(|b| &b.y_int),
                    Target::Uni => cat(|b| &b.y_uni),
                };
                let l = ce_dice(&Logits::from_tensor(&out)?, &labels)?;
                let report = LossReport {
                    l_sup: l.value,
                    l_ct_u: 0.0,
                    l_total: l.value,
                    lambda: 0.0,
                };
                check_finite(&report, self.step, &ids())?;
                model.zero_grad();
                model.backward(&cache, &l.grad.to_tensor(s, s)?);
                opt.step(model, lr as f32);
                report
            }
        };
        self.history.push(LossRow {
            step: self.step,
            lr,
            report,
            val_dsc: None,
        });
        self.step += 1;
        Ok(report)
    }

    /// Mean validation DSC of the default prediction (ensemble for dual runs).
    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let s = self.cfg.image_size;
        let images: Vec<&[f32]> = self.val.iter().map(|v| v.image.as_slice()).collect();
        let labels = predict_labels(&self.members.models(), &images, s, InferMode::Ensemble)?;
        let mut total = 0.0;
        for (v, l) in self.val.iter().zip(labels) {
            let pred = BinaryMask::from_vec(Dims::new(s, s), l)?;
            total += dsc(&pred, &v.gt)?;
        }
        Ok(Some(total / self.val.len() as f64))
    }

    /// Runs the remaining steps up to `max_iters`, validating every
    /// `eval_interval` steps and at the end.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.max_iters {
            let report = self.train_step()?;
            let done = self.step == self.cfg.max_iters;
            let due = self.cfg.eval_interval > 0 && self.step.is_multiple_of(self.cfg.eval_interval);
            if due || done {
                if let Some(v) = self.validate()? {
                    self.history.last_mut().expect("row pushed").val_dsc = Some(v);
                    if self.best.as_ref().is_none_or(|(b, _)| v > *b) {
                        self.best = Some((v, self.members.clone()));
                    }
                }
                log::info!(
                    "step {}/{} l_total {:.4} l_ct_u {:.4}",
                    self.step,
                    self.cfg.max_iters,
                    report.l_total,
                    report.l_ct_u
                );
            }
        }
        Ok(())
    }

    /// Checkpoints of the current weights, with optimizer state.
    pub fn checkpoints(&self) -> Vec<(&'static str, ModelCheckpoint)> {
        self.snapshot(&self.members)
    }

    fn snapshot(&self, members: &Members) -> Vec<(&'static str, ModelCheckpoint)> {
        let rng = self.rng_state();
        members
            .named()
            .into_iter()
            .map(|(name, m, opt)| {
                (
                    name,
                    ModelCheckpoint::capture(m, self.step as u64, rng, Some(opt.velocity())),
                )
            })
            .collect()
    }

    /// Writes `loss.csv`, `train_config.txt`, `<member>.ckpt` and
    /// `<member>_best.ckpt` (the last weights when there is no validation set).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let rows: Vec<String> = self.history.iter().map(LossRow::to_csv).collect();
        write_csv(dir.join("loss.csv"), LOSS_HEADER, &rows)?;
        write_file(dir.join("train_config.txt"), self.cfg.to_text().as_bytes())?;
        for (name, ck) in self.checkpoints() {
            ck.save(dir.join(format!("{name}.ckpt")))?;
        }
        let best = self.best.as_ref().map(|b| &b.1).unwrap_or(&self.members);
        for (name, ck) in self.snapshot(best) {
            ck.save(dir.join(format!("{name}_best.ckpt")))?;
        }
        Ok(())
    }
}

fn check_finite(report: &LossReport, step: usize, ids: &str) -> Result<()> {
    if report.l_total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite loss at step {step} ({report:?}); batch ids: {ids}"
        )))
    }
}

/// Cross-teaching training of F₁ (intersection) and F₂ (union).
pub fn train(
    cfg: TrainConfig,
    samples: Vec<TrainingSample>,
    val: Vec<ValSample>,
) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, samples, val, RunKind::Dual)?;
    t.run()?;
    Ok(t)
}

/// One network trained on a single pseudo-label with the same schedule.
pub fn train_single_baseline(
    cfg: TrainConfig,
    samples: Vec<TrainingSample>,
    val: Vec<ValSample>,
    target: Target,
) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, samples, val, RunKind::Single(target))?;
    t.run()?;
    Ok(t)
}
