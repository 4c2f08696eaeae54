//! Box prompt generation from aspect-ratio annotations.
//!
//! Three axis-aligned prompts are built per annotation:
//!
//! * `b1`: the tight box around the four diameter endpoints,
//! * `b2`: the box around an approximate ellipse made of four quarter-ellipse
//!   arcs, one per pair of adjacent endpoints,
//! * `b3`: the box around the minimum enclosing circle of the endpoints.
//!
//! Boxes stay in real pixel coordinates and are clipped to `[0, W] × [0, H]`
//! as the last step.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use crate::dataio::{write_csv, AspectRatioAnnotation, Point};
use crate::error::{Error, Result};
use crate::mask::{Dims, PixelRect};

pub const PROMPTS_HEADER: &str = "image_id,box,x_min,y_min,x_max,y_max";

/// Parameter samples per quarter arc (endpoints are added on top).
pub const ARC_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Smallest box containing every point.
    pub fn around(points: impl IntoIterator<Item = Point>) -> Option<BBox> {
        points.into_iter().fold(None, |acc, p| {
            Some(match acc {
                None => BBox::new(p.x, p.y, p.x, p.y),
                Some(b) => BBox::new(
                    b.x_min.min(p.x),
                    b.y_min.min(p.y),
                    b.x_max.max(p.x),
                    b.y_max.max(p.y),
                ),
            })
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x_min < self.x_max && self.y_min < self.y_max)
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p.x >= self.x_min - tol
            && p.x <= self.x_max + tol
            && p.y >= self.y_min - tol
            && p.y <= self.y_max + tol
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    /// Intersects with the image frame `[0, W] × [0, H]`; a degenerate result is an error.
    pub fn clip(&self, dims: Dims) -> Result<BBox> {
        let (w, h) = (dims.width as f64, dims.height as f64);
        let b = BBox::new(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        );
        if b.is_degenerate() {
            return Err(Error::validation(format!(
                "box {self:?} is degenerate after clipping to {}x{}",
                dims.width, dims.height
            )));
        }
        Ok(b)
    }

    /// Integer pixel box `(floor(min), ceil(max))` intersected with the grid.
    pub fn rasterize(&self, dims: Dims) -> Result<PixelRect> {
        let clamp = |v: f64, hi: usize| -> usize {
            if v.is_nan() || v <= 0.0 {
                0
            } else {
                (v as usize).min(hi)
            }
        };
        let r = PixelRect {
            x0: clamp(self.x_min.floor(), dims.width),
            y0: clamp(self.y_min.floor(), dims.height),
            x1: clamp(self.x_max.ceil(), dims.width),
            y1: clamp(self.y_max.ceil(), dims.height),
        };
        if r.is_empty() {
            return Err(Error::validation(format!(
                "box {self:?} does not cover any pixel of a {}x{} image",
                dims.width, dims.height
            )));
        }
        Ok(r)
    }
}

/// Tight prompt `b1`: the bounding box of the four endpoints.
pub fn tight_box(ann: &AspectRatioAnnotation, dims: Dims) -> Result<BBox> {
    let b = BBox::around(ann.points()).expect("four points");
    if b.is_degenerate() {
        return Err(Error::validation(format!(
            "annotation {}: endpoints span a zero-area box",
            ann.image_id
        )));
    }
    b.clip(dims)
}

/// One quarter of the approximate ellipse:
/// `center + r_a·cos t·dir_a + r_b·sin t·dir_b` for `t ∈ [0, π/2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuarterArc {
    pub center: Point,
    /// `r_a · dir_a`, reaching the endpoint on diameter A at `t = 0`.
    pub axis_a: Point,
    /// `r_b · dir_b`, reaching the endpoint on diameter B at `t = π/2`.
    pub axis_b: Point,
}

impl QuarterArc {
    pub fn at(&self, t: f64) -> Point {
        let (s, c) = t.sin_cos();
        Point::new(
            self.center.x + c * self.axis_a.x + s * self.axis_b.x,
            self.center.y + c * self.axis_a.y + s * self.axis_b.y,
        )
    }

    /// `samples + 1` points at uniformly spaced parameters, both endpoints included.
    pub fn sample(&self, samples: usize) -> impl Iterator<Item = Point> + '_ {
        let samples = samples.max(1);
        (0..=samples).map(move |k| {
            if k == samples {
                // exact endpoint, avoiding cos(π/2) rounding
                Point::new(self.center.x + self.axis_b.x, self.center.y + self.axis_b.y)
            } else {
                self.at(FRAC_PI_2 * k as f64 / samples as f64)
            }
        })
    }
}

/// Four quarter arcs through the diameter endpoints, in order
/// `(p2,p4)`, `(p1,p4)`, `(p1,p3)`, `(p2,p3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxEllipse {
    pub center: Point,
    /// Set when the diameters do not cross and the centroid was used instead.
    pub centroid_fallback: bool,
    pub arcs: [QuarterArc; 4],
}

pub fn approx_ellipse(ann: &AspectRatioAnnotation) -> Result<ApproxEllipse> {
    ann.validate_shape()?;
    let (center, centroid_fallback) = match ann.crossing() {
        Some(c) => (c, false),
        None => (ann.centroid(), true),
    };
    let to = |p: Point| -> Result<Point> {
        let v = Point::new(p.x - center.x, p.y - center.y);
        if v.x.hypot(v.y) <= 1e-12 {
            return Err(Error::validation(format!(
                "annotation {}: endpoint coincides with the ellipse center",
                ann.image_id
            )));
        }
        Ok(v)
    };
    let (a1, a2, b1, b2) = (to(ann.p1)?, to(ann.p2)?, to(ann.p3)?, to(ann.p4)?);
    let arc = |axis_a, axis_b| QuarterArc {
        center,
        axis_a,
        axis_b,
    };
    Ok(ApproxEllipse {
        center,
        centroid_fallback,
        arcs: [arc(a2, b2), arc(a1, b2), arc(a1, b1), arc(a2, b1)],
    })
}

/// Bounding box of the sampled arcs, before clipping.
pub fn ellipse_extent(ellipse: &ApproxEllipse, samples: usize) -> BBox {
    BBox::around(ellipse.arcs.iter().flat_map(|a| a.sample(samples))).expect("nonempty samples")
}

/// Ellipse prompt `b2`.
pub fn ellipse_box(ann: &AspectRatioAnnotation, dims: Dims) -> Result<BBox> {
    ellipse_box_with(ann, dims, ARC_SAMPLES)
}

pub fn ellipse_box_with(ann: &AspectRatioAnnotation, dims: Dims, samples: usize) -> Result<BBox> {
    let e = approx_ellipse(ann)?;
    ellipse_extent(&e, samples).clip(dims)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    fn contains(&self, p: &Point) -> bool {
        self.center.dist(p) <= self.radius * (1.0 + 1e-14) + 1e-12
    }

    fn from_diameter(a: Point, b: Point) -> Circle {
        let center = Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
        Circle {
            center,
            radius: center.dist(&a).max(center.dist(&b)),
        }
    }

    /// Circle through three points; `None` when they are collinear.
    pub fn circumcircle(a: Point, b: Point, c: Point) -> Option<Circle> {
        // translate to the bounding-box origin for conditioning
        let ox = (a.x.min(b.x).min(c.x) + a.x.max(b.x).max(c.x)) / 2.0;
        let oy = (a.y.min(b.y).min(c.y) + a.y.max(b.y).max(c.y)) / 2.0;
        let (ax, ay) = (a.x - ox, a.y - oy);
        let (bx, by) = (b.x - ox, b.y - oy);
        let (cx, cy) = (c.x - ox, c.y - oy);
        let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        if d == 0.0 {
            return None;
        }
        let (a2, b2, c2) = (ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy);
        let x = ox + (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
        let y = oy + (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
        let center = Point::new(x, y);
        let radius = center.dist(&a).max(center.dist(&b)).max(center.dist(&c));
        Some(Circle { center, radius })
    }
}

fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Smallest circle enclosing all points (Welzl's incremental construction,
/// deterministic input order).
pub fn min_enclosing_circle(points: &[Point]) -> Result<Circle> {
    let mut distinct: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::validation("non-finite point"));
        }
        if !distinct.iter().any(|q| q == p) {
            distinct.push(*p);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::validation(
            "minimum enclosing circle needs at least 2 distinct points",
        ));
    }
    let mut c: Option<Circle> = None;
    for (i, &p) in distinct.iter().enumerate() {
        if c.is_none_or(|c| !c.contains(&p)) {
            c = Some(circle_with_one(&distinct[..i], p));
        }
    }
    Ok(c.expect("at least two points"))
}

fn circle_with_one(points: &[Point], p: Point) -> Circle {
    let mut c = Circle {
        center: p,
        radius: 0.0,
    };
    for (i, &q) in points.iter().enumerate() {
        if !c.contains(&q) {
            c = if c.radius == 0.0 {
                Circle::from_diameter(p, q)
            } else {
                circle_with_two(&points[..i], p, q)
            };
        }
    }
    c
}

fn circle_with_two(points: &[Point], p: Point, q: Point) -> Circle {
    let circ = Circle::from_diameter(p, q);
    let mut left: Option<Circle> = None;
    let mut right: Option<Circle> = None;
    for &r in points {
        if circ.contains(&r) {
            continue;
        }
        let side = cross(p, q, r);
        let Some(c) = Circle::circumcircle(p, q, r) else {
            continue;
        };
        let reach = cross(p, q, c.center);
        if side > 0.0 && left.is_none_or(|l| reach > cross(p, q, l.center)) {
            left = Some(c);
        } else if side < 0.0 && right.is_none_or(|rc| reach < cross(p, q, rc.center)) {
            right = Some(c);
        }
    }
    match (left, right) {
        (None, None) => circ,
        (Some(l), None) => l,
        (None, Some(r)) => r,
        (Some(l), Some(r)) => {
            if l.radius <= r.radius {
                l
            } else {
                r
            }
        }
    }
}

/// Circle prompt `b3`.
pub fn circle_box(circle: &Circle, dims: Dims) -> Result<BBox> {
    if !(circle.radius > 0.0) {
        return Err(Error::validation("circle radius must be positive"));
    }
    let (c, r) = (circle.center, circle.radius);
    BBox::new(c.x - r, c.y - r, c.x + r, c.y + r).clip(dims)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxPromptSet {
    pub image_id: String,
    pub b1: BBox,
    pub b2: BBox,
    pub b3: BBox,
}

impl BoxPromptSet {
    pub fn boxes(&self) -> [BBox; 3] {
        [self.b1, self.b2, self.b3]
    }
}

pub fn generate_prompts(ann: &AspectRatioAnnotation, dims: Dims) -> Result<BoxPromptSet> {
    let b1 = tight_box(ann, dims)?;
    let b2 = ellipse_box(ann, dims)?;
    let circle = min_enclosing_circle(&ann.points())?;
    let b3 = circle_box(&circle, dims)?;
    Ok(BoxPromptSet {
        image_id: ann.image_id.clone(),
        b1,
        b2,
        b3,
    })
}

pub fn save_prompts(path: impl AsRef<Path>, prompts: &[BoxPromptSet]) -> Result<()> {
    let mut rows = Vec::with_capacity(prompts.len() * 3);
    for p in prompts {
        for (k, b) in p.boxes().iter().enumerate() {
            rows.push(format!(
                "{},b{},{},{},{},{}",
                p.image_id,
                k + 1,
                b.x_min,
                b.y_min,
                b.x_max,
                b.y_max
            ));
        }
    }
    write_csv(path, PROMPTS_HEADER, &rows)
}

pub fn parse_prompts(text: &str) -> Result<Vec<BoxPromptSet>> {
    let mut out: Vec<BoxPromptSet> = Vec::new();
    let mut pending: Vec<(String, usize, BBox)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == PROMPTS_HEADER {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, got {}", f.len())));
        }
        let k = match f[1] {
            "b1" => 1,
            "b2" => 2,
            "b3" => 3,
            other => return Err(parse_err(format!("unknown box {other:?}"))),
        };
        let mut v = [0.0; 4];
        for (j, s) in f[2..].iter().enumerate() {
            v[j] = s
                .parse()
                .map_err(|_| parse_err(format!("{s:?} is not a number")))?;
        }
        pending.push((f[0].to_string(), k, BBox::new(v[0], v[1], v[2], v[3])));
    }
    pending.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for chunk in pending.chunk_by(|a, b| a.0 == b.0) {
        let ks: Vec<usize> = chunk.iter().map(|c| c.1).collect();
        if ks != [1, 2, 3] {
            return Err(Error::validation(format!(
                "image {}: expected boxes b1,b2,b3 exactly once",
                chunk[0].0
            )));
        }
        out.push(BoxPromptSet {
            image_id: chunk[0].0.clone(),
            b1: chunk[0].2,
            b2: chunk[1].2,
            b3: chunk[2].2,
        });
    }
    Ok(out)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<BoxPromptSet>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "gen-prompts".into(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompts(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(p: [(f64, f64); 4]) -> AspectRatioAnnotation {
        AspectRatioAnnotation {
            image_id: "t".into(),
            p1: Point::new(p[0].0, p[0].1),
            p2: Point::new(p[1].0, p[1].1),
            p3: Point::new(p[2].0, p[2].1),
            p4: Point::new(p[3].0, p[3].1),
        }
    }

    const BIG: Dims = Dims {
        height: 256,
        width: 256,
    };

    #[test]
    fn tight_box_is_coordinate_extent() {
        let a = ann([(10., 20.), (50., 20.), (30., 5.), (30., 40.)]);
        assert_eq!(tight_box(&a, BIG).unwrap(), BBox::new(10., 5., 50., 40.));
    }

    #[test]
    fn tight_box_clips_to_frame() {
        let a = ann([(10., 20.), (50., 20.), (30., 5.), (30., 40.)]);
        let b = BBox::new(10., 5., 50., 40.).clip(Dims::new(64, 40)).unwrap();
        assert_eq!(b.x_max, 40.0);
        // the points themselves would be out of bounds for W = 40; clipping is still defined
        assert_eq!(tight_box(&a, Dims::new(64, 40)).unwrap().x_max, 40.0);
    }

    #[test]
    fn horizontal_collinear_points_are_degenerate() {
        let a = ann([(10., 20.), (50., 20.), (20., 20.), (40., 20.)]);
        assert!(matches!(tight_box(&a, BIG), Err(Error::Validation(_))));
    }

    #[test]
    fn symmetric_cross_is_a_true_ellipse() {
        let (cx, cy) = (100.0, 100.0);
        let a = ann([(cx - 20., cy), (cx + 20., cy), (cx, cy - 15.), (cx, cy + 15.)]);
        let e = approx_ellipse(&a).unwrap();
        assert_eq!(e.center, Point::new(cx, cy));
        assert!(!e.centroid_fallback);
        for arc in &e.arcs {
            for p in arc.sample(64) {
                let v = ((p.x - cx) / 20.0).powi(2) + ((p.y - cy) / 15.0).powi(2);
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
        let b = ellipse_box(&a, BIG).unwrap();
        for (got, want) in [(b.x_min, 80.), (b.y_min, 85.), (b.x_max, 120.), (b.y_max, 115.)] {
            assert!((got - want).abs() <= 0.5, "{got} vs {want}");
        }
    }

    #[test]
    fn arcs_interpolate_endpoints_and_join_continuously() {
        let a = ann([(30., 52.), (95., 60.), (58., 20.), (66., 90.)]);
        let e = approx_ellipse(&a).unwrap();
        let pts = a.points();
        let close = |p: Point, q: Point| p.dist(&q) < 1e-9;
        let ends = [(pts[1], pts[3]), (pts[0], pts[3]), (pts[0], pts[2]), (pts[1], pts[2])];
        for (arc, (pa, pb)) in e.arcs.iter().zip(ends) {
            assert!(close(arc.at(0.0), pa));
            assert!(close(arc.at(FRAC_PI_2), pb));
        }
        // neighbouring arcs share an endpoint
        assert!(close(e.arcs[0].at(FRAC_PI_2), e.arcs[1].at(FRAC_PI_2)));
        assert!(close(e.arcs[1].at(0.0), e.arcs[2].at(0.0)));
        assert!(close(e.arcs[2].at(FRAC_PI_2), e.arcs[3].at(FRAC_PI_2)));
        assert!(close(e.arcs[3].at(0.0), e.arcs[0].at(0.0)));
    }

    #[test]
    fn rotated_ellipse_extent_matches_closed_form() {
        let (cx, cy, a_len, b_len) = (128.0, 128.0, 20.0, 10.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ann = ann([
            (cx - a_len * s, cy - a_len * s),
            (cx + a_len * s, cy + a_len * s),
            (cx + b_len * s, cy - b_len * s),
            (cx - b_len * s, cy + b_len * s),
        ]);
        let b = ellipse_box(&ann, BIG).unwrap();
        let half = (a_len * a_len * 0.5 + b_len * b_len * 0.5).sqrt();
        assert!((half - 15.81).abs() < 0.01);
        assert!((b.x_max - cx - half).abs() <= 0.5);
        assert!((cx - b.x_min - half).abs() <= 0.5);
        assert!((b.y_max - cy - half).abs() <= 0.5);
    }

    #[test]
    fn non_crossing_annotation_uses_centroid() {
        let a = ann([(10., 10.), (30., 10.), (40., 20.), (40., 40.)]);
        let e = approx_ellipse(&a).unwrap();
        assert!(e.centroid_fallback);
        assert_eq!(e.center, a.centroid());
        let b = ellipse_box(&a, BIG).unwrap();
        for p in a.points() {
            assert!(b.contains(p, 1e-9));
        }
    }

    #[test]
    fn endpoint_at_center_is_rejected() {
        // p1 coincides with the crossing point
        let a = ann([(20., 20.), (40., 20.), (20., 10.), (20., 30.)]);
        assert!(approx_ellipse(&a).is_err());
    }

    #[test]
    fn mec_of_symmetric_points() {
        let pts = [
            Point::new(0., 0.),
            Point::new(10., 0.),
            Point::new(5., 5.),
            Point::new(5., -5.),
        ];
        let c = min_enclosing_circle(&pts).unwrap();
        assert!((c.center.x - 5.0).abs() < 1e-12 && c.center.y.abs() < 1e-12);
        assert!((c.radius - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mec_with_duplicates_uses_distinct_points() {
        let pts = [
            Point::new(1., 1.),
            Point::new(1., 1.),
            Point::new(7., 9.),
            Point::new(7., 9.),
        ];
        let c = min_enclosing_circle(&pts).unwrap();
        assert!((c.center.x - 4.0).abs() < 1e-12 && (c.center.y - 5.0).abs() < 1e-12);
        assert!((c.radius - 5.0).abs() < 1e-12);
        assert!(min_enclosing_circle(&[Point::new(1., 1.); 4]).is_err());
    }

    #[test]
    fn circle_box_clips() {
        let c = Circle {
            center: Point::new(5., 0.),
            radius: 5.,
        };
        assert_eq!(
            circle_box(&c, Dims::new(100, 100)).unwrap(),
            BBox::new(0., 0., 10., 5.)
        );
        let inner = Circle {
            center: Point::new(50., 50.),
            radius: 7.5,
        };
        let b = circle_box(&inner, Dims::new(100, 100)).unwrap();
        assert_eq!((b.width(), b.height()), (15.0, 15.0));
    }

    #[test]
    fn symmetric_cross_prompts_nest() {
        let a = ann([(80., 100.), (120., 100.), (100., 85.), (100., 115.)]);
        let p = generate_prompts(&a, BIG).unwrap();
        assert!(p.b2.contains_box(&p.b1));
        assert!(p.b3.contains_box(&p.b2));
        assert_eq!(generate_prompts(&a, BIG).unwrap(), p);
    }

    #[test]
    fn rasterize_floors_and_ceils() {
        let r = BBox::new(2.3, 4.0, 7.1, 9.9).rasterize(Dims::new(8, 100)).unwrap();
        assert_eq!(r, PixelRect { x0: 2, y0: 4, x1: 8, y1: 8 });
    }

    #[test]
    fn prompts_csv_round_trip() {
        let a = ann([(31.25, 40.5), (77.0, 61.125), (60.0, 25.0), (48.0, 80.0)]);
        let p = generate_prompts(&a, BIG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.csv");
        save_prompts(&path, std::slice::from_ref(&p)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(PROMPTS_HEADER));
        assert_eq!(load_prompts(&path).unwrap(), vec![p]);
    }
}
