//! Joint rotation/flip augmentation of an image and its label maps.

use rand::Rng;

use crate::config::Augmentation;
use crate::mask::Dims;

/// Rotation by `quarter_turns · 90°` counter-clockwise, then an optional
/// horizontal flip, then an optional vertical flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Transform {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        hflip: false,
        vflip: false,
    };

    /// Draws a transform. Always consumes three values so the random stream
    /// does not depend on which transforms are enabled.
    pub fn sample(rng: &mut impl Rng, aug: Augmentation) -> Self {
        let k: u8 = rng.random_range(0..4);
        let h: bool = rng.random_bool(0.5);
        let v: bool = rng.random_bool(0.5);
        Transform {
            quarter_turns: if aug.rot90 { k } else { 0 },
            hflip: aug.hflip && h,
            vflip: aug.vflip && v,
        }
    }

    /// All sixteen combinations.
    pub fn all() -> impl Iterator<Item = Transform> {
        (0..16u8).map(|i| Transform {
            quarter_turns: i & 3,
            hflip: i & 4 != 0,
            vflip: i & 8 != 0,
        })
    }

    pub fn output_dims(&self, dims: Dims) -> Dims {
        if self.quarter_turns % 2 == 1 {
            Dims::new(dims.width, dims.height)
        } else {
            dims
        }
    }

    /// Applies the transform to a row-major grid.
    pub fn apply<T: Copy>(&self, dims: Dims, data: &[T]) -> Vec<T> {
        assert_eq!(data.len(), dims.len(), "grid size mismatch");
        let mut cur = data.to_vec();
        let mut d = dims;
        for _ in 0..self.quarter_turns % 4 {
            cur = rot90(d, &cur);
            d = Dims::new(d.width, d.height);
        }
        if self.hflip {
            cur = flip(d, &cur, true);
        }
        if self.vflip {
            cur = flip(d, &cur, false);
        }
        cur
    }

    /// Undoes [`Transform::apply`]; `dims` are the dimensions of the original grid.
    pub fn invert<T: Copy>(&self, dims: Dims, data: &[T]) -> Vec<T> {
        let mut d = self.output_dims(dims);
        let mut cur = data.to_vec();
        if self.vflip {
            cur = flip(d, &cur, false);
        }
        if self.hflip {
            cur = flip(d, &cur, true);
        }
        for _ in 0..(4 - self.quarter_turns % 4) % 4 {
            cur = rot90(d, &cur);
            d = Dims::new(d.width, d.height);
        }
        cur
    }
}

/// Counter-clockwise quarter turn: `out[i][j] = in[j][W−1−i]`.
fn rot90<T: Copy>(dims: Dims, data: &[T]) -> Vec<T> {
    let (h, w) = (dims.height, dims.width);
    let mut out = Vec::with_capacity(data.len());
    for i in 0..w {
        for j in 0..h {
            out.push(data[j * w + (w - 1 - i)]);
        }
    }
    out
}

fn flip<T: Copy>(dims: Dims, data: &[T], horizontal: bool) -> Vec<T> {
    let (h, w) = (dims.height, dims.width);
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
            out.push(data[sy * w + sx]);
        }
    }
    out
}
