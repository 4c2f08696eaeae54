//! Dice similarity coefficient and 95th-percentile Hausdorff distance.
//!
//! HD95 takes the boundary pixels of each mask (foreground pixels with a
//! background 4-neighbour or on the image edge), computes for every boundary
//! pixel the Euclidean distance to the nearest boundary pixel of the other
//! mask, and returns the larger of the two directed 95th percentiles (linear
//! interpolation between order statistics). When exactly one mask is empty the
//! result is the image diagonal; two empty masks give 0.

use std::path::Path;

use crate::dataio::{write_csv, write_file};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims};

pub const EVAL_HEADER: &str = "image_id,dsc,hd95";
/// Id of the aggregate row appended to `eval.csv`.
pub const MEAN_ROW_ID: &str = "_mean";

/// Dice similarity in percent; two empty masks score 100.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / total as f64)
}

pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same_dims(gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(pred.dims().diagonal()),
        _ => {}
    }
    let bp = pred.boundary();
    let bg = gt.boundary();
    let d_pg = directed_distances(&bp, &bg, pred.dims());
    let d_gp = directed_distances(&bg, &bp, pred.dims());
    Ok(percentile(d_pg, 0.95).max(percentile(d_gp, 0.95)))
}

/// Distance from every pixel of `from` to the nearest pixel of `to`.
pub fn directed_distances(from: &[(usize, usize)], to: &[(usize, usize)], dims: Dims) -> Vec<f64> {
    let field = squared_distance_field(to, dims);
    from.iter()
        .map(|&(y, x)| field[y * dims.width + x].sqrt())
        .collect()
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of a non-empty sample.
pub fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    assert!(!v.is_empty(), "percentile of an empty sample");
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Exact squared Euclidean distance to the nearest seed, separable
/// lower-envelope transform (Felzenszwalb & Huttenlocher).
fn squared_distance_field(seeds: &[(usize, usize)], dims: Dims) -> Vec<f64> {
    let (h, w) = (dims.height, dims.width);
    let mut f = vec![f64::INFINITY; h * w];
    for &(y, x) in seeds {
        f[y * w + x] = 0.0;
    }
    let mut buf = vec![0.0; h.max(w)];
    let mut out = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            buf[y] = f[y * w + x];
        }
        transform_1d(&buf[..h], &mut out[..h]);
        for y in 0..h {
            f[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        buf[..w].copy_from_slice(&f[y * w..(y + 1) * w]);
        transform_1d(&buf[..w], &mut out[..w]);
        f[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    f
}

fn transform_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    // parabola vertices and the boundaries between them
    let mut v = vec![0usize; finite.len()];
    let mut z = vec![0.0f64; finite.len() + 1];
    let mut k = 0;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        let (q2, p2) = ((q * q) as f64, (p * p) as f64);
        ((f[q] + q2) - (f[p] + p2)) / (2.0 * (q as f64 - p as f64))
    };
    for &q in &finite[1..] {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dx = q as f64 - v[k] as f64;
        *dq = dx * dx + f[v[k]];
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub image_id: String,
    pub dsc: f64,
    pub hd95: f64,
}

pub fn evaluate_pair(image_id: &str, pred: &BinaryMask, gt: &BinaryMask) -> Result<EvalResult> {
    Ok(EvalResult {
        image_id: image_id.to_string(),
        dsc: dsc(pred, gt)?,
        hd95: hd95(pred, gt)?,
    })
}

/// Mean and population standard deviation over the evaluated images.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    /// Images without ground truth that were left out.
    pub skipped: usize,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub hd95_mean: f64,
    pub hd95_std: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn summarize(results: &[EvalResult], skipped: usize) -> EvalSummary {
    let (dsc_mean, dsc_std) = mean_std(results.iter().map(|r| r.dsc));
    let (hd95_mean, hd95_std) = mean_std(results.iter().map(|r| r.hd95));
    EvalSummary {
        count: results.len(),
        skipped,
        dsc_mean,
        dsc_std,
        hd95_mean,
        hd95_std,
    }
}

impl EvalSummary {
    pub fn to_text(&self, mode: &str) -> String {
        format!(
            "mode: {mode}\nimages: {}\nskipped_without_gt: {}\ndsc: {:.2} ± {:.2}\nhd95: {:.2} ± {:.2}\n",
            self.count, self.skipped, self.dsc_mean, self.dsc_std, self.hd95_mean, self.hd95_std
        )
    }
}

/// Writes `eval.csv` (per-image rows and a `_mean` row) and `summary.txt`.
pub fn save_eval(dir: impl AsRef<Path>, results: &[EvalResult], summary: &EvalSummary, mode: &str) -> Result<()> {
    let dir = dir.as_ref();
    let mut rows: Vec<String> = results
        .iter()
        .map(|r| format!("{},{:.6},{:.6}", r.image_id, r.dsc, r.hd95))
        .collect();
    rows.push(format!("{MEAN_ROW_ID},{:.6},{:.6}", summary.dsc_mean, summary.hd95_mean));
    write_csv(dir.join("eval.csv"), EVAL_HEADER, &rows)?;
    write_file(dir.join("summary.txt"), summary.to_text(mode).as_bytes())
}

/// Reads the per-image rows of an `eval.csv`.
pub fn load_eval(path: impl AsRef<Path>) -> Result<Vec<EvalResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("malformed eval row {line:?}"),
        };
        if f.len() != 3 {
            return Err(bad());
        }
        if f[0] == MEAN_ROW_ID {
            continue;
        }
        out.push(EvalResult {
            image_id: f[0].to_string(),
            dsc: f[1].parse().map_err(|_| bad())?,
            hd95: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(d: Dims, y0: usize, x0: usize, s: usize) -> BinaryMask {
        BinaryMask::from_fn(d, |y, x| (y0..y0 + s).contains(&y) && (x0..x0 + s).contains(&x))
    }

    #[test]
    fn identical_masks() {
        let m = square(Dims::new(20, 20), 3, 4, 6);
        assert_eq!(dsc(&m, &m).unwrap(), 100.0);
        assert_eq!(hd95(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn empty_conventions() {
        let d = Dims::new(30, 40);
        let e = BinaryMask::zeros(d);
        let m = square(d, 1, 1, 3);
        assert_eq!(dsc(&e, &e).unwrap(), 100.0);
        assert_eq!(dsc(&e, &m).unwrap(), 0.0);
        assert_eq!(hd95(&e, &e).unwrap(), 0.0);
        assert_eq!(hd95(&m, &e).unwrap(), 50.0);
    }

    #[test]
    fn single_pixel_shift() {
        let d = Dims::new(10, 10);
        assert_eq!(hd95(&square(d, 4, 4, 1), &square(d, 4, 5, 1)).unwrap(), 1.0);
    }

    #[test]
    fn half_overlap_dice() {
        let d = Dims::new(8, 8);
        let a = BinaryMask::from_fn(d, |y, _| y < 4);
        let b = BinaryMask::from_fn(d, |y, _| (2..6).contains(&y));
        assert_eq!(dsc(&a, &b).unwrap(), 50.0);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(vec![0.0, 10.0], 0.95), 9.5);
        assert_eq!(percentile(vec![3.0], 0.95), 3.0);
        assert_eq!(percentile(vec![4.0, 1.0, 3.0, 2.0, 0.0], 0.5), 2.0);
    }

    #[test]
    fn summary_uses_population_std() {
        let r = |d| EvalResult {
            image_id: "x".into(),
            dsc: d,
            hd95: 0.0,
        };
        let s = summarize(&[r(80.0), r(100.0)], 1);
        assert_eq!(s.dsc_mean, 90.0);
        assert_eq!(s.dsc_std, 10.0);
        assert_eq!(s.skipped, 1);
    }
}
