//! Promptable segmenter backends.
//!
//! The real foundation model is out of process: users run it offline and drop
//! one PNG per prompt into a directory, read back by [`Segmenter::Recorded`].
//! The two oracle backends need the ground-truth mask of each scene and exist
//! so the pipeline can run end to end on synthetic data.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::dataio::load_mask;
use crate::error::{Error, Result};
use crate::geometry::{BBox, BoxPromptSet};
use crate::mask::{BinaryMask, Image};

/// Default erosion/dilation radius of the noisy oracle, in pixels.
pub const DEFAULT_NOISE_RADIUS: usize = 2;

/// Known nodule mask of a synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub image_id: String,
    pub gt_mask: BinaryMask,
}

impl SceneTruth {
    pub fn new(image_id: impl Into<String>, gt_mask: BinaryMask) -> Result<Self> {
        let image_id = image_id.into();
        if gt_mask.is_empty() {
            return Err(Error::validation(format!("scene {image_id}: empty ground truth")));
        }
        Ok(SceneTruth { image_id, gt_mask })
    }
}

#[derive(Clone, Debug)]
pub enum Segmenter {
    /// Returns `gt ∩ box`.
    Oracle { truth: BTreeMap<String, BinaryMask> },
    /// Erodes or dilates `gt ∩ box` by a disk, chosen by hash parity.
    NoisyOracle {
        truth: BTreeMap<String, BinaryMask>,
        radius: usize,
        seed: u64,
    },
    /// Reads `<dir>/<image_id>__b<k>.png`.
    Recorded { dir: PathBuf },
}

fn truth_map(scenes: Vec<SceneTruth>) -> BTreeMap<String, BinaryMask> {
    scenes.into_iter().map(|s| (s.image_id, s.gt_mask)).collect()
}

impl Segmenter {
    pub fn oracle(scenes: Vec<SceneTruth>) -> Self {
        Segmenter::Oracle {
            truth: truth_map(scenes),
        }
    }

    pub fn noisy_oracle(scenes: Vec<SceneTruth>, radius: usize, seed: u64) -> Self {
        Segmenter::NoisyOracle {
            truth: truth_map(scenes),
            radius,
            seed,
        }
    }

    pub fn recorded(dir: impl Into<PathBuf>) -> Self {
        Segmenter::Recorded { dir: dir.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Segmenter::Oracle { .. } => "oracle",
            Segmenter::NoisyOracle { .. } => "noisy_oracle",
            Segmenter::Recorded { .. } => "recorded",
        }
    }

    fn truth<'a>(truth: &'a BTreeMap<String, BinaryMask>, image: &Image) -> Result<&'a BinaryMask> {
        let gt = truth.get(&image.id).ok_or_else(|| {
            Error::validation(format!("no ground truth for image {}", image.id))
        })?;
        if gt.dims() != image.dims() {
            return Err(Error::validation(format!(
                "ground truth of {} does not match the image size",
                image.id
            )));
        }
        Ok(gt)
    }

    /// Mask for prompt number `slot` (1, 2 or 3) with box `bbox`.
    ///
    /// Every foreground pixel of the result lies inside the rasterized box.
    pub fn segment(&self, image: &Image, slot: usize, bbox: &BBox) -> Result<BinaryMask> {
        let rect = bbox.rasterize(image.dims())?;
        match self {
            Segmenter::Oracle { truth } => Ok(Self::truth(truth, image)?.restrict_to(rect)),
            Segmenter::NoisyOracle {
                truth,
                radius,
                seed,
            } => {
                let clipped = Self::truth(truth, image)?.restrict_to(rect);
                let noisy = if noise_parity(&image.id, bbox, *seed) {
                    clipped.dilate_disk(*radius)
                } else {
                    clipped.erode_disk(*radius)
                };
                Ok(noisy.restrict_to(rect))
            }
            Segmenter::Recorded { dir } => {
                let name = format!("{}__b{slot}.png", image.id);
                let path = dir.join(&name);
                if !path.exists() {
                    return Err(Error::MissingPrediction(name));
                }
                Ok(load_mask(&path, Some(image.dims()))?.restrict_to(rect))
            }
        }
    }

    /// Masks `(m1, m2, m3)` for the three prompts, in prompt order.
    pub fn segment_all(&self, image: &Image, prompts: &BoxPromptSet) -> Result<[BinaryMask; 3]> {
        if prompts.image_id != image.id {
            return Err(Error::validation(format!(
                "prompts for {} applied to image {}",
                prompts.image_id, image.id
            )));
        }
        let [b1, b2, b3] = prompts.boxes();
        Ok([
            self.segment(image, 1, &b1)?,
            self.segment(image, 2, &b2)?,
            self.segment(image, 3, &b3)?,
        ])
    }
}

/// `true` selects dilation. Stable across platforms and runs.
fn noise_parity(image_id: &str, bbox: &BBox, seed: u64) -> bool {
    let mut h = Sha256::new();
    h.update(image_id.as_bytes());
    for v in [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(seed.to_le_bytes());
    h.finalize()[0] & 1 == 1
}
