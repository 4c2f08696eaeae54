//! On-disk dataset layout, annotation CSV and PNG mask I/O.
//!
//! A dataset directory looks like
//!
//! ```text
//! images/<id>.png        8-bit grayscale
//! annotations.csv        image_id,x1,y1,x2,y2,x3,y3,x4,y4
//! gt_masks/<id>.png      optional, foreground = 255
//! split.csv              optional, image_id,split
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
pub use crate::mask::{BinaryMask, Dims, Image, PixelRect};

pub const ANNOTATION_HEADER: &str = "image_id,x1,y1,x2,y2,x3,y3,x4,y4";
pub const SPLIT_HEADER: &str = "image_id,split";

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Two crossing diameters of a nodule: `p1–p2` (diameter A) and `p3–p4` (diameter B).
#[derive(Clone, Debug, PartialEq)]
pub struct AspectRatioAnnotation {
    pub image_id: String,
    pub p1: Point,
    pub p2: Point,
    pub p3: Point,
    pub p4: Point,
}

impl AspectRatioAnnotation {
    pub fn points(&self) -> [Point; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }

    /// Intersection of the two diameters when the segments properly cross.
    pub fn crossing(&self) -> Option<Point> {
        segment_intersection(self.p1, self.p2, self.p3, self.p4)
    }

    /// Whether the diameters cross; non-crossing records are accepted but flagged.
    pub fn diameters_cross(&self) -> bool {
        self.crossing().is_some()
    }

    pub fn centroid(&self) -> Point {
        let pts = self.points();
        Point::new(
            pts.iter().map(|p| p.x).sum::<f64>() / 4.0,
            pts.iter().map(|p| p.y).sum::<f64>() / 4.0,
        )
    }

    /// Checks the intrinsic invariants (finite coordinates, non-degenerate diameters).
    pub fn validate_shape(&self) -> Result<()> {
        if self.points().iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::validation(format!(
                "annotation {}: non-finite coordinate",
                self.image_id
            )));
        }
        if self.p1.dist(&self.p2) <= 0.0 || self.p3.dist(&self.p4) <= 0.0 {
            return Err(Error::validation(format!(
                "annotation {}: diameter of zero length",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Checks that every endpoint lies in `[0, W) × [0, H)`.
    pub fn validate_in(&self, dims: Dims) -> Result<()> {
        self.validate_shape()?;
        for (i, p) in self.points().iter().enumerate() {
            let inside = p.x >= 0.0
                && p.y >= 0.0
                && p.x < dims.width as f64
                && p.y < dims.height as f64;
            if !inside {
                return Err(Error::validation(format!(
                    "annotation {}: point p{} = ({}, {}) outside {}x{} image",
                    self.image_id,
                    i + 1,
                    p.x,
                    p.y,
                    dims.width,
                    dims.height
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv_line(&self) -> String {
        let p = self.points();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.image_id, p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y
        )
    }
}

/// Proper or touching intersection point of segments `ab` and `cd`, if any.
pub fn segment_intersection(a: Point, b: Point, c: Point, d: Point) -> Option<Point> {
    let r = (b.x - a.x, b.y - a.y);
    let s = (d.x - c.x, d.y - c.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = (c.x - a.x, c.y - a.y);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(Point::new(a.x + t * r.0, a.y + t * r.1))
    } else {
        None
    }
}

fn parse_annotation_line(line: &str, lineno: usize) -> Result<AspectRatioAnnotation> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 9 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected 9 fields (id + 8 coordinates), got {}", fields.len()),
        });
    }
    if fields[0].is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "empty image_id".into(),
        });
    }
    let mut v = [0.0f64; 8];
    for (i, f) in fields[1..].iter().enumerate() {
        v[i] = f.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("field {} ({f:?}) is not a number", i + 2),
        })?;
    }
    Ok(AspectRatioAnnotation {
        image_id: fields[0].to_string(),
        p1: Point::new(v[0], v[1]),
        p2: Point::new(v[2], v[3]),
        p3: Point::new(v[4], v[5]),
        p4: Point::new(v[6], v[7]),
    })
}

/// Parses annotation CSV text. Records are returned in file order.
pub fn parse_annotations(text: &str) -> Result<Vec<AspectRatioAnnotation>> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            seen_header = true;
            if line.replace(' ', "") == ANNOTATION_HEADER {
                continue;
            }
        }
        let ann = parse_annotation_line(line, i + 1)?;
        ann.validate_shape()?;
        if ann.points().iter().any(|p| p.x < 0.0 || p.y < 0.0) {
            return Err(Error::validation(format!(
                "annotation {}: negative coordinate",
                ann.image_id
            )));
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AspectRatioAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn save_annotations(path: impl AsRef<Path>, anns: &[AspectRatioAnnotation]) -> Result<()> {
    let mut s = String::from(ANNOTATION_HEADER);
    s.push('\n');
    for a in anns {
        s.push_str(&a.to_csv_line());
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit grayscale PNG.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<(Dims, Vec<u8>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit grayscale PNG, found {color:?} {depth:?}",
            path.display()
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(stride).take(h) {
        pixels.extend_from_slice(&row[..w]);
    }
    Ok((Dims::new(h, w), pixels))
}

pub fn write_gray_png(path: impl AsRef<Path>, dims: Dims, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), dims.width as u32, dims.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(pixels).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Loads a mask PNG; values ≥ 128 are foreground. `expected` dims are enforced when given.
pub fn load_mask(path: impl AsRef<Path>, expected: Option<Dims>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (dims, raw) = read_gray_png(path)?;
    if let Some(e) = expected {
        if e != dims {
            return Err(Error::Format(format!(
                "{}: mask is {}x{}, image is {}x{}",
                path.display(),
                dims.height,
                dims.width,
                e.height,
                e.width
            )));
        }
    }
    BinaryMask::from_vec(dims, raw.into_iter().map(|v| u8::from(v >= 128)).collect())
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = mask.pixels().iter().map(|&v| v * 255).collect();
    write_gray_png(path, mask.dims(), &raw)
}

/// Loads an image PNG, scaling intensities to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>, id: &str) -> Result<Image> {
    let (dims, raw) = read_gray_png(path)?;
    Image::new(
        id,
        dims.height,
        dims.width,
        raw.into_iter().map(|v| v as f32 / 255.0).collect(),
    )
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = image
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_gray_png(path, image.dims(), &raw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

pub fn load_split(path: impl AsRef<Path>) -> Result<BTreeMap<String, Split>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == SPLIT_HEADER {
            continue;
        }
        let (id, split) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected image_id,split".into(),
        })?;
        out.insert(id.trim().to_string(), split.trim().parse()?);
    }
    Ok(out)
}

pub fn save_split(path: impl AsRef<Path>, split: &BTreeMap<String, Split>) -> Result<()> {
    let mut s = String::from(SPLIT_HEADER);
    s.push('\n');
    for (id, sp) in split {
        s.push_str(&format!("{id},{}\n", sp.as_str()));
    }
    write_file(path, s.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub image_path: PathBuf,
    pub annotation: AspectRatioAnnotation,
    pub gt_mask_path: Option<PathBuf>,
    pub dims: Dims,
}

impl DatasetEntry {
    pub fn id(&self) -> &str {
        &self.annotation.image_id
    }

    pub fn load_image(&self) -> Result<Image> {
        load_image(&self.image_path, self.id())
    }

    pub fn load_gt(&self) -> Result<Option<BinaryMask>> {
        self.gt_mask_path
            .as_ref()
            .map(|p| load_mask(p, Some(self.dims)))
            .transpose()
    }
}

/// Annotated images of a dataset directory, sorted by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    /// Ids whose diameters do not cross (accepted, centroid fallback downstream).
    pub flagged: Vec<String>,
}

impl DatasetIndex {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let ann_path = root.join("annotations.csv");
        if !ann_path.exists() {
            return Err(Error::MissingArtifact {
                path: ann_path,
                producer: "synth-data".into(),
            });
        }
        let mut anns = load_annotations(&ann_path)?;
        anns.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(anns.len());
        let mut flagged = Vec::new();
        for ann in anns {
            if !seen.insert(ann.image_id.clone()) {
                return Err(Error::validation(format!(
                    "duplicate image id {}",
                    ann.image_id
                )));
            }
            let image_path = root.join("images").join(format!("{}.png", ann.image_id));
            if !image_path.exists() {
                return Err(Error::validation(format!(
                    "annotation {} references missing image {}",
                    ann.image_id,
                    image_path.display()
                )));
            }
            let (dims, _) = read_gray_png(&image_path)?;
            ann.validate_in(dims)?;
            if !ann.diameters_cross() {
                log::warn!("annotation {}: diameters do not cross", ann.image_id);
                flagged.push(ann.image_id.clone());
            }
            let gt = root.join("gt_masks").join(format!("{}.png", ann.image_id));
            entries.push(DatasetEntry {
                image_path,
                gt_mask_path: gt.exists().then_some(gt),
                annotation: ann,
                dims,
            });
        }
        Ok(DatasetIndex {
            root,
            entries,
            flagged,
        })
    }

    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.entries
            .binary_search_by(|e| e.id().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// `split.csv` of the dataset, or every image in `Train` when absent.
    pub fn split(&self) -> Result<BTreeMap<String, Split>> {
        let path = self.root.join("split.csv");
        if path.exists() {
            load_split(path)
        } else {
            Ok(self
                .entries
                .iter()
                .map(|e| (e.id().to_string(), Split::Train))
                .collect())
        }
    }

    pub fn ids_in(&self, split: Split) -> Result<Vec<String>> {
        let s = self.split()?;
        Ok(self
            .entries
            .iter()
            .filter(|e| s.get(e.id()) == Some(&split))
            .map(|e| e.id().to_string())
            .collect())
    }
}

/// Writes a small CSV table; `rows` are already formatted.
pub fn write_csv(path: impl AsRef<Path>, header: &str, rows: &[String]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}
