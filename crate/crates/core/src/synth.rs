//! Synthetic ultrasound-like phantoms.
//!
//! Each scene holds one dark star-convex nodule (an ellipse whose radius is
//! modulated by a few low-frequency harmonics) on a smooth speckled
//! background. The aspect-ratio annotation is measured from the mask the way
//! a clinician would: the longest diameter first, then the longest chord
//! perpendicular to it.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataio::{save_annotations, save_image, save_mask, save_split, AspectRatioAnnotation, Point, Split};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims, Image, MIN_SIDE};

/// Share of scenes assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub image_size: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Relative amplitude of the radial perturbation, in `[0, 0.3]`.
    pub perturbation: f64,
    /// Standard deviation of the multiplicative speckle.
    pub speckle: f64,
    /// Intensity gap between background and nodule.
    pub contrast: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults scaled to the image size (radii 10 to 28 px at 128 px).
    pub fn new(count: usize, image_size: usize, seed: u64) -> Self {
        let s = image_size as f64;
        SynthConfig {
            count,
            image_size,
            r_min: 0.08 * s,
            r_max: 0.22 * s,
            perturbation: 0.15,
            speckle: 0.2,
            contrast: 0.35,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let half = self.image_size as f64 / 2.0;
        let fail = |m: String| Err(Error::Config(m));
        if self.count == 0 {
            return fail("count must be at least 1".into());
        }
        if self.image_size < MIN_SIDE {
            return fail(format!("image size must be at least {MIN_SIDE}"));
        }
        if !(self.r_min > 1.0 && self.r_min <= self.r_max && self.r_max < half) {
            return fail(format!(
                "radius range [{}, {}] must satisfy 1 < r_min <= r_max < {half}",
                self.r_min, self.r_max
            ));
        }
        if !(0.0..=0.3).contains(&self.perturbation) {
            return fail(format!("perturbation {} not in [0, 0.3]", self.perturbation));
        }
        if !(self.speckle >= 0.0 && self.contrast > 0.0 && self.contrast < 1.0) {
            return fail("speckle must be >= 0 and contrast in (0, 1)".into());
        }
        Ok(())
    }
}

/// Radial description of a nodule.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
    /// `(amplitude, frequency, phase)` of each harmonic.
    pub harmonics: Vec<(f64, f64, f64)>,
}

impl Blob {
    /// Boundary radius in direction `phi`.
    pub fn radius(&self, phi: f64) -> f64 {
        let t = phi - self.angle;
        let (c, s) = (t.cos(), t.sin());
        let base = 1.0 / ((c / self.semi_major).powi(2) + (s / self.semi_minor).powi(2)).sqrt();
        let wobble: f64 = self
            .harmonics
            .iter()
            .map(|&(a, k, ph)| a * (k * phi + ph).cos())
            .sum();
        base * (1.0 + wobble)
    }

    /// Signed distance proxy: positive inside, in pixels along the ray.
    fn depth(&self, p: Point) -> f64 {
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        self.radius(dy.atan2(dx)) - dx.hypot(dy)
    }

    pub fn mask(&self, dims: Dims) -> BinaryMask {
        BinaryMask::from_fn(dims, |y, x| self.depth(Point::new(x as f64 + 0.5, y as f64 + 0.5)) >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub gt_mask: BinaryMask,
    pub annotation: AspectRatioAnnotation,
    pub blob: Blob,
}

pub fn scene_id(index: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(4);
    format!("img{index:0width$}")
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn sample_blob(cfg: &SynthConfig, rng: &mut impl Rng) -> Blob {
    let size = cfg.image_size as f64;
    let a = rng.random_range(cfg.r_min..=cfg.r_max);
    let b = rng.random_range((0.5 * a).max(cfg.r_min).min(a)..=a);
    let angle = rng.random_range(0.0..PI);
    let mut harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| (rng.random_range(-1.0..1.0), k as f64, rng.random_range(0.0..TAU)))
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.0.abs()).sum();
    for h in &mut harmonics {
        h.0 = if norm > 0.0 { h.0 / norm * cfg.perturbation } else { 0.0 };
    }
    // keep the nodule away from the border
    let reach = (a * (1.0 + cfg.perturbation) + 2.0).min(size / 2.0 - 1.0);
    let cx = rng.random_range(reach..=size - reach);
    let cy = rng.random_range(reach..=size - reach);
    Blob {
        center: Point::new(cx, cy),
        semi_major: a,
        semi_minor: b,
        angle,
        harmonics,
    }
}

fn render(cfg: &SynthConfig, blob: &Blob, id: &str, rng: &mut impl Rng) -> Result<Image> {
    let n = cfg.image_size;
    let s = n as f64;
    let (f1, f2) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    let (p1, p2) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let base = 0.6 + 0.08 * (TAU * f1 * px / s + p1).sin() * (TAU * f2 * py / s + p2).cos();
            // soft edge about one pixel wide
            let inside = 1.0 / (1.0 + (-blob.depth(Point::new(px, py)) / 0.8).exp());
            let clean = base - cfg.contrast * inside;
            let speckled = clean * (1.0 + cfg.speckle * noise.sample(rng));
            pixels.push(speckled.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(id, n, n, pixels)
}

/// Longest diameter over boundary pixel centres, then the longest chord
/// perpendicular to it.
pub fn derive_annotation(id: &str, mask: &BinaryMask) -> Result<AspectRatioAnnotation> {
    let boundary: Vec<Point> = mask
        .boundary()
        .into_iter()
        .map(|(y, x)| Point::new(x as f64 + 0.5, y as f64 + 0.5))
        .collect();
    if boundary.len() < 2 {
        return Err(Error::validation(format!("scene {id}: mask too small to annotate")));
    }
    let (mut best, mut p1, mut p2) = (-1.0, boundary[0], boundary[1]);
    for (i, a) in boundary.iter().enumerate() {
        for b in &boundary[i + 1..] {
            let d = a.dist(b);
            if d > best {
                (best, p1, p2) = (d, *a, *b);
            }
        }
    }
    let (ux, uy) = ((p2.x - p1.x) / best, (p2.y - p1.y) / best);
    let (vx, vy) = (-uy, ux);
    let inside = |p: Point| {
        p.x >= 0.0
            && p.y >= 0.0
            && (p.x as usize) < mask.width()
            && (p.y as usize) < mask.height()
            && mask.get(p.y as usize, p.x as usize)
    };
    let reach = mask.dims().diagonal();
    let step = 0.25;
    let mut chord: Option<(f64, Point, Point)> = None;
    let mut t = 0.0;
    while t <= best {
        let q = Point::new(p1.x + t * ux, p1.y + t * uy);
        let mut first = None;
        let mut last = None;
        let mut s = -reach;
        while s <= reach {
            let p = Point::new(q.x + s * vx, q.y + s * vy);
            if inside(p) {
                first.get_or_insert(p);
                last = Some(p);
            }
            s += step;
        }
        if let (Some(a), Some(b)) = (first, last) {
            let len = a.dist(&b);
            if chord.is_none_or(|c| len > c.0) {
                chord = Some((len, a, b));
            }
        }
        t += 0.5;
    }
    let (len, p3, p4) = chord.ok_or_else(|| Error::validation(format!("scene {id}: no perpendicular chord")))?;
    if len <= 0.0 {
        return Err(Error::validation(format!("scene {id}: degenerate perpendicular chord")));
    }
    Ok(AspectRatioAnnotation {
        image_id: id.to_string(),
        p1,
        p2,
        p3,
        p4,
    })
}

/// Scene number `index` of the dataset; depends only on `(cfg, index)`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    let id = scene_id(index, cfg.count);
    let mut rng = scene_rng(cfg.seed, index);
    let blob = sample_blob(cfg, &mut rng);
    let dims = Dims::new(cfg.image_size, cfg.image_size);
    let gt_mask = blob.mask(dims);
    let image = render(cfg, &blob, &id, &mut rng)?;
    let annotation = derive_annotation(&id, &gt_mask)?;
    Ok(Scene {
        image,
        gt_mask,
        annotation,
        blob,
    })
}

/// Seeded 4:1 train/test assignment.
pub fn assign_split(ids: &[String], seed: u64) -> BTreeMap<String, Split> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_train = (ids.len() as f64 * TRAIN_FRACTION).round() as usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let split = if rank < n_train { Split::Train } else { Split::Test };
            (ids[i].clone(), split)
        })
        .collect()
}

/// Writes `images/`, `gt_masks/`, `annotations.csv` and `split.csv` under `out`.
pub fn generate_dataset(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let out = out.as_ref();
    let scenes: Vec<Scene> = (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_scene(cfg, i))
        .collect::<Result<_>>()?;
    for s in &scenes {
        let id = &s.image.id;
        save_image(&s.image, out.join("images").join(format!("{id}.png")))?;
        save_mask(&s.gt_mask, out.join("gt_masks").join(format!("{id}.png")))?;
    }
    let anns: Vec<AspectRatioAnnotation> = scenes.iter().map(|s| s.annotation.clone()).collect();
    save_annotations(out.join("annotations.csv"), &anns)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.image.id.clone()).collect();
    save_split(out.join("split.csv"), &assign_split(&ids, cfg.seed))?;
    Ok(scenes)
}
