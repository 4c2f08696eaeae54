//! Grayscale images and binary masks.

use crate::error::{Error, Result};

/// Minimum side length accepted for images.
pub const MIN_SIDE: usize = 16;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: String,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::validation(format!(
                "image {id}: {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::validation(format!(
                "image {id}: expected {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "image {id}: intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Image {
            id,
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims {
            height: self.height,
            width: self.width,
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resized(&self, dims: Dims) -> Image {
        if dims == self.dims() {
            return self.clone();
        }
        let sy = self.height as f32 / dims.height as f32;
        let sx = self.width as f32 / dims.width as f32;
        let mut pixels = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..dims.width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(self.width - 1);
                let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
                let bottom = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
                pixels.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
        Image {
            id: self.id.clone(),
            height: dims.height,
            width: dims.width,
            pixels,
        }
    }
}

/// Height and width of an image grid, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize) -> Self {
        Dims { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        (self.height as f64).hypot(self.width as f64)
    }
}

/// Row-major mask with values in `{0, 1}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} fg)", self.height, self.width, self.count())
    }
}

impl BinaryMask {
    pub fn zeros(dims: Dims) -> Self {
        BinaryMask {
            height: dims.height,
            width: dims.width,
            pixels: vec![0; dims.len()],
        }
    }

    pub fn ones(dims: Dims) -> Self {
        BinaryMask {
            height: dims.height,
            width: dims.width,
            pixels: vec![1; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != dims.len() {
            return Err(Error::validation(format!(
                "mask {}x{} needs {} pixels, got {}",
                dims.height,
                dims.width,
                dims.len(),
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::validation("mask values must be 0 or 1"));
        }
        Ok(BinaryMask {
            height: dims.height,
            width: dims.width,
            pixels,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                pixels.push(u8::from(f(y, x)));
            }
        }
        BinaryMask {
            height: dims.height,
            width: dims.width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.pixels[y * self.width + x] = u8::from(v);
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0)
    }

    pub fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::validation(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a ^ b)
    }

    /// `self \ other`
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| (a & b) as usize)
            .sum())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.check_same_dims(other)?;
        Ok(self.pixels.iter().zip(&other.pixels).all(|(&a, &b)| a <= b))
    }

    /// Foreground pixels touching background (4-neighbourhood) or the image edge.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                if edge
                    || !self.get(y - 1, x)
                    || !self.get(y + 1, x)
                    || !self.get(y, x - 1)
                    || !self.get(y, x + 1)
                {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Clears everything outside the half-open pixel rectangle.
    pub fn restrict_to(&self, rect: PixelRect) -> BinaryMask {
        BinaryMask::from_fn(self.dims(), |y, x| self.get(y, x) && rect.contains(y, x))
    }

    /// Morphological dilation by a disk of radius `r` pixels.
    pub fn dilate_disk(&self, r: usize) -> BinaryMask {
        let offsets = disk_offsets(r);
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = BinaryMask::zeros(self.dims());
        for (y, x) in self.foreground() {
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w {
                    out.pixels[(yy * w + xx) as usize] = 1;
                }
            }
        }
        out
    }

    /// Morphological erosion by a disk of radius `r`; pixels outside the frame count as background.
    pub fn erode_disk(&self, r: usize) -> BinaryMask {
        let offsets = disk_offsets(r);
        let (h, w) = (self.height as isize, self.width as isize);
        BinaryMask::from_fn(self.dims(), |y, x| {
            self.get(y, x)
                && offsets.iter().all(|&(dy, dx)| {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    yy >= 0 && yy < h && xx >= 0 && xx < w && self.pixels[(yy * w + xx) as usize] != 0
                })
        })
    }

    /// Nearest-neighbour resampling.
    pub fn resized(&self, dims: Dims) -> BinaryMask {
        if dims == self.dims() {
            return self.clone();
        }
        BinaryMask::from_fn(dims, |y, x| {
            let sy = (2 * y + 1) * self.height / (2 * dims.height);
            let sx = (2 * x + 1) * self.width / (2 * dims.width);
            self.get(sy.min(self.height - 1), sx.min(self.width - 1))
        })
    }
}

/// Integer offsets `(dy, dx)` with `dy² + dx² ≤ r²`.
fn disk_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                v.push((dy, dx));
            }
        }
    }
    v
}

/// Integer half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }
}
