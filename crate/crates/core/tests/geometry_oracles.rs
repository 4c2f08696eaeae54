use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsseg::dataio::{AspectRatioAnnotation, Point};
use wsseg::geometry::{
    ellipse_box_with, generate_prompts, min_enclosing_circle, Circle, ARC_SAMPLES,
};
use wsseg::mask::Dims;

/// Smallest feasible circle among all pair-diameter and triple circumcircles.
fn exhaustive_mec(pts: &[Point]) -> f64 {
    let feasible = |c: Point, r: f64| pts.iter().all(|p| c.dist(p) <= r + 1e-9 * r.max(1.0));
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let c = Point::new((pts[i].x + pts[j].x) / 2.0, (pts[i].y + pts[j].y) / 2.0);
            let r = c.dist(&pts[i]);
            if feasible(c, r) {
                best = best.min(r);
            }
            for k in j + 1..pts.len() {
                let (a, b, cc) = (pts[i], pts[j], pts[k]);
                let dd = 2.0 * (a.x * (b.y - cc.y) + b.x * (cc.y - a.y) + cc.x * (a.y - b.y));
                if dd.abs() < 1e-12 {
                    continue;
                }
                let sq = |p: Point| p.x * p.x + p.y * p.y;
                let ux = (sq(a) * (b.y - cc.y) + sq(b) * (cc.y - a.y) + sq(cc) * (a.y - b.y)) / dd;
                let uy = (sq(a) * (cc.x - b.x) + sq(b) * (a.x - cc.x) + sq(cc) * (b.x - a.x)) / dd;
                let c = Point::new(ux, uy);
                let r = c.dist(&a);
                if feasible(c, r) {
                    best = best.min(r);
                }
            }
        }
    }
    best
}

fn assert_encloses(c: &Circle, pts: &[Point]) {
    for p in pts {
        assert!(
            c.center.dist(p) <= c.radius + 1e-9,
            "{p:?} outside {c:?} by {}",
            c.center.dist(p) - c.radius
        );
    }
}

#[test]
fn mec_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let pts: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let c = min_enclosing_circle(&pts).unwrap();
        let oracle = exhaustive_mec(&pts);
        assert!((c.radius - oracle).abs() <= 1e-6, "{pts:?}: {} vs {oracle}", c.radius);
        assert_encloses(&c, &pts);
    }
}

#[test]
fn mec_degenerate_inputs() {
    let line: Vec<Point> = (0..4).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
    let c = min_enclosing_circle(&line).unwrap();
    assert!((c.radius - line[0].dist(&line[3]) / 2.0).abs() < 1e-12);
    let dup = [Point::new(1.0, 1.0), Point::new(1.0, 1.0), Point::new(4.0, 5.0), Point::new(4.0, 5.0)];
    assert!((min_enclosing_circle(&dup).unwrap().radius - 2.5).abs() < 1e-12);
    assert!(min_enclosing_circle(&[Point::new(3.0, 3.0)]).is_err());
    let square = [
        Point::new(0.0, 0.0),
        Point::new(2.0, 0.0),
        Point::new(2.0, 2.0),
        Point::new(0.0, 2.0),
    ];
    let c = min_enclosing_circle(&square).unwrap();
    assert!((c.radius - 2f64.sqrt()).abs() < 1e-12);
}

/// Two perpendicular-ish crossing diameters, resampled until inside a 128×128 frame.
fn random_annotation(rng: &mut impl Rng, id: usize) -> AspectRatioAnnotation {
    loop {
        let a = draw_annotation(rng, id);
        if a.validate_in(Dims::new(128, 128)).is_ok() {
            return a;
        }
    }
}

fn draw_annotation(rng: &mut impl Rng, id: usize) -> AspectRatioAnnotation {
    let cx = rng.random_range(30.0..98.0);
    let cy = rng.random_range(30.0..98.0);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let skew: f64 = rng.random_range(-0.3..0.3);
    let (a, b) = (rng.random_range(4.0..28.0), rng.random_range(2.0..28.0));
    let (ta, tb) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let da = (theta.cos(), theta.sin());
    let phi = theta + std::f64::consts::FRAC_PI_2 + skew;
    let db = (phi.cos(), phi.sin());
    let at = |d: (f64, f64), s: f64| Point::new(cx + d.0 * s, cy + d.1 * s);
    AspectRatioAnnotation {
        image_id: format!("a{id}"),
        p1: at(da, -2.0 * a * ta),
        p2: at(da, 2.0 * a * (1.0 - ta)),
        p3: at(db, -2.0 * b * tb),
        p4: at(db, 2.0 * b * (1.0 - tb)),
    }
}

#[test]
fn every_box_contains_every_endpoint() {
    let dims = Dims::new(128, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10_000 {
        let ann = random_annotation(&mut rng, i);
        let set = generate_prompts(&ann, dims).unwrap();
        for b in set.boxes() {
            for p in ann.points() {
                assert!(
                    b.x_min - 1e-9 <= p.x && p.x <= b.x_max + 1e-9 && b.y_min - 1e-9 <= p.y && p.y <= b.y_max + 1e-9,
                    "{ann:?}: {p:?} outside {b:?}"
                );
            }
        }
    }
}

#[test]
fn ellipse_box_is_stable_under_denser_sampling() {
    let dims = Dims::new(128, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..2_000 {
        let ann = random_annotation(&mut rng, i);
        let a = ellipse_box_with(&ann, dims, ARC_SAMPLES).unwrap();
        let b = ellipse_box_with(&ann, dims, 2 * ARC_SAMPLES).unwrap();
        for (u, v) in [(a.x_min, b.x_min), (a.y_min, b.y_min), (a.x_max, b.x_max), (a.y_max, b.y_max)] {
            worst = worst.max((u - v).abs());
        }
    }
    assert!(worst < 0.25, "largest change {worst}");
}

#[test]
fn axis_aligned_cross_gives_known_boxes() {
    // diameters 20 (horizontal) and 10 (vertical) crossing at (50, 40)
    let ann = AspectRatioAnnotation {
        image_id: "x".into(),
        p1: Point::new(40.0, 40.0),
        p2: Point::new(60.0, 40.0),
        p3: Point::new(50.0, 35.0),
        p4: Point::new(50.0, 45.0),
    };
    let s = generate_prompts(&ann, Dims::new(100, 100)).unwrap();
    assert_eq!((s.b1.x_min, s.b1.y_min, s.b1.x_max, s.b1.y_max), (40.0, 35.0, 60.0, 45.0));
    // the ellipse through the four endpoints has the same extent
    assert!((s.b2.x_min - 40.0).abs() < 1e-9 && (s.b2.y_max - 45.0).abs() < 1e-9);
    // circle of radius 10 around (50, 40)
    assert!((s.b3.y_min - 30.0).abs() < 1e-9 && (s.b3.y_max - 50.0).abs() < 1e-9);
}
