//! Fixtures shared by the benchmarks.

use wsseg::mask::{BinaryMask, Dims};

/// Filled ellipse centred at `(cy, cx)`.
pub fn ellipse(d: Dims, cy: f64, cx: f64, ry: f64, rx: f64) -> BinaryMask {
    BinaryMask::from_fn(d, |y, x| {
        ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2) <= 1.0
    })
}

/// Deterministic pseudo-random values in `[0, 1)`.
pub fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i as u64 * 2_654_435_761) % 1000) as f32 / 1000.0).collect()
}
