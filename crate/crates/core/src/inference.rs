//! Prediction with trained checkpoints and test-set evaluation.

use std::path::Path;

use crate::config::TrainConfig;
use crate::dataio::DatasetIndex;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims, Image};
use crate::metrics::{evaluate_pair, EvalResult};
use crate::model::{predictions_from_logits, ModelCheckpoint, SegModel, Tensor};

/// Images per forward pass at inference.
const INFER_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InferMode {
    F1,
    F2,
    /// Mean of the two foreground probabilities; strictly above 0.5 is foreground.
    #[default]
    Ensemble,
}

impl InferMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferMode::F1 => "f1",
            InferMode::F2 => "f2",
            InferMode::Ensemble => "ensemble",
        }
    }
}

impl std::str::FromStr for InferMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(InferMode::F1),
            "f2" => Ok(InferMode::F2),
            "ensemble" => Ok(InferMode::Ensemble),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (f1, f2 or ensemble)"
            ))),
        }
    }
}

/// Hard labels for square `size × size` inputs.
///
/// With one model every mode returns that model's argmax. With two, `F1` and
/// `F2` pick a member and `Ensemble` averages their probabilities.
pub fn predict_labels(
    models: &[&SegModel],
    images: &[&[f32]],
    size: usize,
    mode: InferMode,
) -> Result<Vec<Vec<u8>>> {
    let chosen: Vec<&SegModel> = match (models, mode) {
        ([m], _) => vec![*m],
        ([f1, _], InferMode::F1) => vec![*f1],
        ([_, f2], InferMode::F2) => vec![*f2],
        ([f1, f2], InferMode::Ensemble) => vec![*f1, *f2],
        _ => return Err(Error::Config(format!("expected 1 or 2 models, got {}", models.len()))),
    };
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * size * size);
        for img in chunk {
            if img.len() != size * size {
                return Err(Error::Shape(format!(
                    "input has {} pixels, expected {size}x{size}",
                    img.len()
                )));
            }
            data.extend_from_slice(img);
        }
        let x = Tensor::from_vec([chunk.len(), 1, size, size], data)?;
        let preds: Vec<_> = chosen
            .iter()
            .map(|m| m.logits(&x).map(|l| predictions_from_logits(&l)))
            .collect::<Result<_>>()?;
        match preds.as_slice() {
            [p] => out.extend(p.iter().map(|p| p.label.clone())),
            [p1, p2] => {
                for (a, b) in p1.iter().zip(p2) {
                    out.push(ensemble_labels(&a.prob, &b.prob));
                }
            }
            _ => unreachable!("one or two members"),
        }
    }
    Ok(out)
}

/// Foreground where the mean probability exceeds one half.
pub fn ensemble_labels(p1: &[f32], p2: &[f32]) -> Vec<u8> {
    p1.iter()
        .zip(p2)
        .map(|(&a, &b)| u8::from((a as f64 + b as f64) / 2.0 > 0.5))
        .collect()
}

/// Members of a finished run and the resolution they were trained at.
#[derive(Clone, Debug)]
pub struct InferModels {
    pub models: Vec<SegModel>,
    pub image_size: usize,
}

impl InferModels {
    /// Loads `f1`/`f2` (or `model` for a single-model run) from a `train`
    /// output directory; `best` selects the `_best` checkpoints.
    pub fn load(run_dir: impl AsRef<Path>, best: bool) -> Result<Self> {
        let dir = run_dir.as_ref();
        let cfg_path = dir.join("train_config.txt");
        if !cfg_path.exists() {
            return Err(Error::MissingArtifact {
                path: cfg_path,
                producer: "train".into(),
            });
        }
        let cfg = TrainConfig::load(&cfg_path)?;
        let suffix = if best { "_best" } else { "" };
        let path = |stem: &str| dir.join(format!("{stem}{suffix}.ckpt"));
        let stems: &[&str] = if path("model").exists() {
            &["model"]
        } else {
            &["f1", "f2"]
        };
        let models = stems
            .iter()
            .map(|s| ModelCheckpoint::load(path(s))?.to_model())
            .collect::<Result<Vec<_>>>()?;
        Ok(InferModels {
            models,
            image_size: cfg.image_size,
        })
    }

    pub fn refs(&self) -> Vec<&SegModel> {
        self.models.iter().collect()
    }

    /// Predicted masks at each image's own resolution. Inputs are resized
    /// bilinearly to the training size and labels come back by nearest
    /// neighbour.
    pub fn infer(&self, images: &[Image], mode: InferMode) -> Result<Vec<BinaryMask>> {
        let s = self.image_size;
        let d = Dims::new(s, s);
        let inputs: Vec<Image> = images.iter().map(|im| im.resized(d)).collect();
        let refs: Vec<&[f32]> = inputs.iter().map(|im| im.pixels()).collect();
        let labels = predict_labels(&self.refs(), &refs, s, mode)?;
        images
            .iter()
            .zip(labels)
            .map(|(im, l)| Ok(BinaryMask::from_vec(d, l)?.resized(im.dims())))
            .collect()
    }
}

/// Per-image metrics over `ids`; images without ground truth are skipped with
/// a warning and counted.
pub fn evaluate(
    models: &InferModels,
    index: &DatasetIndex,
    ids: &[String],
    mode: InferMode,
) -> Result<(Vec<EvalResult>, Vec<BinaryMask>, usize)> {
    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut skipped = 0;
    for id in ids {
        let entry = index
            .get(id)
            .ok_or_else(|| Error::validation(format!("unknown image id {id}")))?;
        match entry.load_gt()? {
            Some(gt) => {
                images.push(entry.load_image()?);
                gts.push(gt);
            }
            None => {
                log::warn!("{id}: no ground-truth mask, skipped");
                skipped += 1;
            }
        }
    }
    let preds = models.infer(&images, mode)?;
    let results = images
        .iter()
        .zip(&gts)
        .zip(&preds)
        .map(|((im, gt), p)| evaluate_pair(&im.id, p, gt))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, preds, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn ensemble_mean_threshold() {
        assert_eq!(ensemble_labels(&[0.9, 0.5, 0.75], &[0.2, 0.5, 0.25]), vec![1, 0, 0]);
    }

    #[test]
    fn identical_members_agree_in_every_mode() {
        let cfg = ModelConfig {
            depth: 2,
            base_channels: 4,
        };
        let m = SegModel::new(cfg, 3).unwrap();
        let img: Vec<f32> = (0..64).map(|i| (i % 7) as f32 / 7.0).collect();
        let run = |mode| predict_labels(&[&m, &m], &[&img], 8, mode).unwrap();
        let f1 = run(InferMode::F1);
        assert_eq!(f1, run(InferMode::F2));
        assert_eq!(f1, run(InferMode::Ensemble));
    }

    #[test]
    fn mode_parses() {
        for m in [InferMode::F1, InferMode::F2, InferMode::Ensemble] {
            assert_eq!(m.as_str().parse::<InferMode>().unwrap(), m);
        }
        assert!("mean".parse::<InferMode>().is_err());
    }
}
