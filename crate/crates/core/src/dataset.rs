//! Ground-truth glyph bitmaps on disk and in memory.
//!
//! Layout: `<root>/manifest.json` plus one binary PGM per bitmap at
//! `<root>/<font_id>/<weight_id>/<glyph-hex>/<bitmap_size>.pgm`, where
//! `glyph-hex` is the lowercase hex codepoint padded to four digits.
//! Intensities are `byte / 255` with 0 as background and 1 as full ink.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensornet::Tensor2;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One rasterized glyph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphBitmap {
    pub font_id: String,
    pub weight_id: String,
    pub glyph: char,
    pub bitmap_size: usize,
    pub point_size: u32,
    pub pixels: Tensor2,
}

impl GlyphBitmap {
    pub fn key(&self) -> GlyphKey {
        GlyphKey {
            font_id: self.font_id.clone(),
            weight_id: self.weight_id.clone(),
            glyph: self.glyph,
            bitmap_size: self.bitmap_size,
        }
    }

    /// Mean intensity (ink coverage).
    pub fn coverage(&self) -> f64 {
        self.pixels.mean()
    }
}

/// Index key; the derived ordering is the dataset's iteration order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GlyphKey {
    pub font_id: String,
    pub weight_id: String,
    pub glyph: char,
    pub bitmap_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSizeEntry {
    pub font: String,
    pub weight: String,
    pub size: usize,
    pub point_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fonts: Vec<String>,
    pub weights: Vec<String>,
    pub glyphs: Vec<char>,
    pub size_min: usize,
    pub size_max: usize,
    #[serde(default)]
    pub point_sizes: Vec<PointSizeEntry>,
    /// Numeric weight class per weight id (e.g. 500, 700).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_classes: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub generator: String,
}

impl Manifest {
    pub fn point_size(&self, font: &str, weight: &str, size: usize) -> Option<u32> {
        self.point_sizes
            .iter()
            .find(|e| e.font == font && e.weight == weight && e.size == size)
            .map(|e| e.point_size)
    }

    pub fn sizes(&self) -> std::ops::RangeInclusive<usize> {
        self.size_min..=self.size_max
    }

    /// Weight id mapped onto `[0, 1]`: min-max scaling of the weight classes
    /// when every weight has one, otherwise of the position in `weights`.
    pub fn weight_value(&self, weight: &str) -> Option<f64> {
        let pos = self.weights.iter().position(|w| w == weight)?;
        let classes: Option<Vec<f64>> = self
            .weight_classes
            .as_ref()
            .and_then(|c| self.weights.iter().map(|w| c.get(w).copied()).collect());
        let values = classes.unwrap_or_else(|| (0..self.weights.len()).map(|i| i as f64).collect());
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            Some((values[pos] - lo) / (hi - lo))
        } else {
            Some(0.0)
        }
    }
}

/// A loaded, indexed, immutable set of glyph bitmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    entries: Vec<GlyphBitmap>,
    index: BTreeMap<GlyphKey, usize>,
    manifest: Manifest,
}

impl Dataset {
    /// Indexes `entries`, sorting them by key. Duplicate keys are an error.
    pub fn new(manifest: Manifest, mut entries: Vec<GlyphBitmap>) -> Result<Self> {
        entries.sort_by_key(GlyphBitmap::key);
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.key(), i).is_some() {
                return Err(Error::InvalidManifest(format!("duplicate bitmap {:?}", e.key())));
            }
        }
        Ok(Self {
            entries,
            index,
            manifest,
        })
    }

    pub fn entries(&self) -> &[GlyphBitmap] {
        &self.entries
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, font: &str, weight: &str, glyph: char, size: usize) -> Option<&GlyphBitmap> {
        let key = GlyphKey {
            font_id: font.to_string(),
            weight_id: weight.to_string(),
            glyph,
            bitmap_size: size,
        };
        self.index.get(&key).map(|&i| &self.entries[i])
    }

    /// Bitmaps for one glyph over `weights × sizes`, in (weight order, size)
    /// order. Fails on the first missing bitmap.
    pub fn select(
        &self,
        font: &str,
        weights: &[String],
        glyph: char,
        sizes: std::ops::RangeInclusive<usize>,
    ) -> Result<Vec<&GlyphBitmap>> {
        let mut out = Vec::new();
        for w in weights {
            for s in sizes.clone() {
                let bm = self
                    .get(font, w, glyph, s)
                    .ok_or_else(|| Error::MissingBitmap(bitmap_path(Path::new("<dataset>"), font, w, glyph, s)))?;
                out.push(bm);
            }
        }
        Ok(out)
    }
}

pub fn glyph_dir_name(glyph: char) -> String {
    format!("{:04x}", glyph as u32)
}

pub fn bitmap_path(root: &Path, font: &str, weight: &str, glyph: char, size: usize) -> PathBuf {
    root.join(font)
        .join(weight)
        .join(glyph_dir_name(glyph))
        .join(format!("{size}.pgm"))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingManifest(path)),
        Err(e) => return Err(e.into()),
    };
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
    if m.size_min == 0 || m.size_min > m.size_max {
        return Err(Error::InvalidManifest(format!(
            "size range {}..{} is empty",
            m.size_min, m.size_max
        )));
    }
    Ok(m)
}

/// Loads every bitmap the manifest declares.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let mut entries = Vec::new();
    for font in &manifest.fonts {
        for weight in &manifest.weights {
            for &glyph in &manifest.glyphs {
                for size in manifest.sizes() {
                    let path = bitmap_path(root, font, weight, glyph, size);
                    if !path.is_file() {
                        return Err(Error::MissingBitmap(path));
                    }
                    let pixels = read_pgm(&path)?;
                    if pixels.shape() != (size, size) {
                        return Err(Error::DimensionMismatch(format!(
                            "{} is {}x{} but declared size {size}",
                            path.display(),
                            pixels.cols(),
                            pixels.rows()
                        )));
                    }
                    entries.push(GlyphBitmap {
                        font_id: font.clone(),
                        weight_id: weight.clone(),
                        glyph,
                        bitmap_size: size,
                        point_size: manifest.point_size(font, weight, size).unwrap_or(0),
                        pixels,
                    });
                }
            }
        }
    }
    Dataset::new(manifest, entries)
}

/// Writes a dataset in the on-disk layout.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(ds.manifest())?)?;
    for e in ds.entries() {
        let path = bitmap_path(root, &e.font_id, &e.weight_id, e.glyph, e.bitmap_size);
        fs::create_dir_all(path.parent().expect("bitmap path has a parent"))?;
        write_pgm(&e.pixels, &path)?;
    }
    Ok(())
}

/// A problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Gap {
        font: String,
        weight: String,
        glyph: char,
        size: usize,
    },
    IntensityOutOfRange {
        key: GlyphKey,
        row: usize,
        col: usize,
        value: f64,
    },
    Shape {
        key: GlyphKey,
        rows: usize,
        cols: usize,
    },
    Monotonicity {
        font: String,
        weight: String,
        size: usize,
        point_size: u32,
        previous_size: usize,
        previous_point_size: u32,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Gap {
                font,
                weight,
                glyph,
                size,
            } => {
                write!(f, "gap: {font}/{weight} '{glyph}' missing size {size}")
            }
            Violation::IntensityOutOfRange { key, row, col, value } => write!(
                f,
                "intensity: {}/{} '{}' size {} pixel ({row}, {col}) = {value}",
                key.font_id, key.weight_id, key.glyph, key.bitmap_size
            ),
            Violation::Shape { key, rows, cols } => write!(
                f,
                "shape: {}/{} '{}' size {} stored as {rows}x{cols}",
                key.font_id, key.weight_id, key.glyph, key.bitmap_size
            ),
            Violation::Monotonicity {
                font,
                weight,
                size,
                point_size,
                previous_size,
                previous_point_size,
            } => write!(
                f,
                "monotonicity: {font}/{weight} point size {point_size} at size {size} \
                 < {previous_point_size} at size {previous_size}"
            ),
        }
    }
}

/// Checks density, intensity range, shapes and point-size monotonicity.
/// An empty result means the dataset is valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let m = ds.manifest();
    let mut out = Vec::new();

    let mut groups: BTreeMap<(String, String, char), Vec<usize>> = BTreeMap::new();
    for e in ds.entries() {
        groups
            .entry((e.font_id.clone(), e.weight_id.clone(), e.glyph))
            .or_default()
            .push(e.bitmap_size);
    }
    for ((font, weight, glyph), sizes) in &groups {
        for size in m.sizes() {
            if !sizes.contains(&size) {
                out.push(Violation::Gap {
                    font: font.clone(),
                    weight: weight.clone(),
                    glyph: *glyph,
                    size,
                });
            }
        }
    }

    for e in ds.entries() {
        if e.pixels.shape() != (e.bitmap_size, e.bitmap_size) {
            out.push(Violation::Shape {
                key: e.key(),
                rows: e.pixels.rows(),
                cols: e.pixels.cols(),
            });
        }
        let cols = e.pixels.cols().max(1);
        if let Some((i, &v)) = e
            .pixels
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            out.push(Violation::IntensityOutOfRange {
                key: e.key(),
                row: i / cols,
                col: i % cols,
                value: v,
            });
        }
    }

    // point size per (font, weight, size), from the first glyph seen
    let mut table: BTreeMap<(String, String), BTreeMap<usize, u32>> = BTreeMap::new();
    for e in ds.entries() {
        table
            .entry((e.font_id.clone(), e.weight_id.clone()))
            .or_default()
            .entry(e.bitmap_size)
            .or_insert(e.point_size);
    }
    for ((font, weight), by_size) in &table {
        let pairs: Vec<(usize, u32)> = by_size.iter().map(|(&s, &p)| (s, p)).collect();
        for w in pairs.windows(2) {
            let ((ps, pp), (s, p)) = (w[0], w[1]);
            if p < pp {
                out.push(Violation::Monotonicity {
                    font: font.clone(),
                    weight: weight.clone(),
                    size: s,
                    point_size: p,
                    previous_size: ps,
                    previous_point_size: pp,
                });
            }
        }
    }
    out
}

/// Encodes an intensity matrix as binary 8-bit PGM (`byte = round(v·255)`).
pub fn encode_pgm(pixels: &Tensor2) -> Result<Vec<u8>> {
    if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("intensity {v} outside [0, 1]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", pixels.cols(), pixels.rows()).into_bytes();
    out.extend(pixels.data().iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

/// Decodes binary 8-bit PGM into intensities `byte / 255`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Tensor2, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("wrong magic, expected P5".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header")?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval}, expected 255"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    pos += 1;
    let n = width * height;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(format!("truncated payload: {} of {n} bytes", payload.len()));
    }
    let data = payload[..n].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor2::from_vec(height, width, data).map_err(|e| e.to_string())
}

pub fn read_pgm(path: &Path) -> Result<Tensor2> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes).map_err(|reason| Error::CorruptImage {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_pgm(pixels: &Tensor2, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(pixels)?)?;
    Ok(())
}
