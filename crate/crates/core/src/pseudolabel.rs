//! Pseudo-label selection and the uncertainty map.
//!
//! The intersection of the three segmenter masks is the conservative target
//! `y_int`, their union the liberal target `y_uni`, and the pixels on which the
//! two disagree form the uncertainty map `u`.

use std::path::Path;

use crate::dataio::{load_mask, save_mask, write_csv};
use crate::error::{Error, Result};
use crate::geometry::BoxPromptSet;
use crate::mask::{BinaryMask, Dims, Image};
use crate::segmenter::Segmenter;

pub const BUNDLE_MANIFEST: &str = "bundles_manifest.csv";
pub const BUNDLE_MANIFEST_HEADER: &str = "image_id,y_int,y_uni,u";

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelBundle {
    pub image_id: String,
    pub m1: BinaryMask,
    pub m2: BinaryMask,
    pub m3: BinaryMask,
    pub y_int: BinaryMask,
    pub y_uni: BinaryMask,
    pub u: BinaryMask,
}

/// The persisted part of a bundle: what stage two trains on.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTargets {
    pub image_id: String,
    pub y_int: BinaryMask,
    pub y_uni: BinaryMask,
    pub u: BinaryMask,
}

impl LabelTargets {
    /// Checks `y_int ⊆ y_uni` and `u = y_uni ⊕ y_int`.
    pub fn validate(&self) -> Result<()> {
        let expected = uncertainty_map(&self.y_int, &self.y_uni)
            .map_err(|e| Error::validation(format!("labels of {}: {e}", self.image_id)))?;
        if expected != self.u {
            return Err(Error::validation(format!(
                "labels of {}: uncertainty map is not y_uni xor y_int",
                self.image_id
            )));
        }
        Ok(())
    }
}

impl PseudoLabelBundle {
    pub fn targets(&self) -> LabelTargets {
        LabelTargets {
            image_id: self.image_id.clone(),
            y_int: self.y_int.clone(),
            y_uni: self.y_uni.clone(),
            u: self.u.clone(),
        }
    }
}

/// `(m1 ∩ m2 ∩ m3, m1 ∪ m2 ∪ m3)`
pub fn select_pseudo_labels(
    m1: &BinaryMask,
    m2: &BinaryMask,
    m3: &BinaryMask,
) -> Result<(BinaryMask, BinaryMask)> {
    let y_int = m1.and(m2)?.and(m3)?;
    let y_uni = m1.or(m2)?.or(m3)?;
    Ok((y_int, y_uni))
}

/// `y_int ⊕ y_uni`; errors unless `y_int ⊆ y_uni`.
pub fn uncertainty_map(y_int: &BinaryMask, y_uni: &BinaryMask) -> Result<BinaryMask> {
    if !y_int.is_subset_of(y_uni)? {
        return Err(Error::validation(
            "intersection mask is not contained in the union mask",
        ));
    }
    y_int.xor(y_uni)
}

pub fn build_bundle(
    image: &Image,
    prompts: &BoxPromptSet,
    segmenter: &Segmenter,
) -> Result<PseudoLabelBundle> {
    let [m1, m2, m3] = segmenter.segment_all(image, prompts)?;
    let (y_int, y_uni) = select_pseudo_labels(&m1, &m2, &m3)?;
    let u = uncertainty_map(&y_int, &y_uni)?;
    Ok(PseudoLabelBundle {
        image_id: image.id.clone(),
        m1,
        m2,
        m3,
        y_int,
        y_uni,
        u,
    })
}

fn bundle_paths(dir: &Path, id: &str) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("{id}__yint.png")),
        dir.join(format!("{id}__yuni.png")),
        dir.join(format!("{id}__unc.png")),
    ]
}

pub fn save_targets(dir: impl AsRef<Path>, t: &LabelTargets) -> Result<()> {
    let [a, b, c] = bundle_paths(dir.as_ref(), &t.image_id);
    save_mask(&t.y_int, a)?;
    save_mask(&t.y_uni, b)?;
    save_mask(&t.u, c)
}

pub fn load_targets(dir: impl AsRef<Path>, id: &str, dims: Dims) -> Result<LabelTargets> {
    let [a, b, c] = bundle_paths(dir.as_ref(), id);
    for p in [&a, &b, &c] {
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p.clone(),
                producer: "gen-pseudolabels".into(),
            });
        }
    }
    let t = LabelTargets {
        image_id: id.to_string(),
        y_int: load_mask(a, Some(dims))?,
        y_uni: load_mask(b, Some(dims))?,
        u: load_mask(c, Some(dims))?,
    };
    t.validate()?;
    Ok(t)
}

/// Writes `bundles_manifest.csv` with per-image foreground counts.
pub fn save_manifest(dir: impl AsRef<Path>, targets: &[LabelTargets]) -> Result<()> {
    let rows: Vec<String> = targets
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{}",
                t.image_id,
                t.y_int.count(),
                t.y_uni.count(),
                t.u.count()
            )
        })
        .collect();
    write_csv(dir.as_ref().join(BUNDLE_MANIFEST), BUNDLE_MANIFEST_HEADER, &rows)
}
