//! Error measurement and aggregation over rendered bitmaps.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GlyphBitmap};
use crate::models::{Decoding, GlyphModel, Model};
use crate::renderer::{render_implicit, render_masked};
use crate::tensornet::Tensor2;
use crate::{Error, Result};

pub const HIST_BINS: usize = 30;
pub const HIST_LO: f64 = 1e-6;
pub const HIST_HI: f64 = 1.0;
/// Floor applied to errors before taking log ratios.
pub const RATIO_FLOOR: f64 = 1e-6;

/// Mean absolute difference between two equally sized bitmaps.
pub fn mean_pixel_error(pred: &Tensor2, gt: &Tensor2) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64)
}

/// Anything that can produce a bitmap for a ground-truth key.
pub trait Rasterizer: Sync {
    fn rasterize(&self, like: &GlyphBitmap) -> Result<Tensor2>;
}

/// A trained model with a fixed decoding.
pub struct ModelRasterizer<'a> {
    pub model: &'a GlyphModel,
    pub decoding: Decoding,
}

impl Rasterizer for ModelRasterizer<'_> {
    fn rasterize(&self, like: &GlyphBitmap) -> Result<Tensor2> {
        let bm = match self.model.model {
            Model::Masked(_) => render_masked(self.model, like.bitmap_size)?,
            Model::Implicit(_) => render_implicit(self.model, like.bitmap_size, Some(&like.weight_id), self.decoding)?,
        };
        Ok(bm.pixels)
    }
}

impl Rasterizer for GlyphModel {
    fn rasterize(&self, like: &GlyphBitmap) -> Result<Tensor2> {
        ModelRasterizer {
            model: self,
            decoding: Decoding::default(),
        }
        .rasterize(like)
    }
}

/// Returns the dataset's own bitmaps; every error against it is zero.
pub struct GroundTruth<'a>(pub &'a Dataset);

impl Rasterizer for GroundTruth<'_> {
    fn rasterize(&self, like: &GlyphBitmap) -> Result<Tensor2> {
        self.0
            .get(&like.font_id, &like.weight_id, like.glyph, like.bitmap_size)
            .map(|b| b.pixels.clone())
            .ok_or_else(|| {
                Error::MissingBitmap(crate::dataset::bitmap_path(
                    Path::new("<dataset>"),
                    &like.font_id,
                    &like.weight_id,
                    like.glyph,
                    like.bitmap_size,
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub font: String,
    pub weight: String,
    pub glyph: char,
    pub size: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn log_spaced(bins: usize, lo: f64, hi: f64) -> Self {
        let (a, b) = (lo.log10(), hi.log10());
        let edges = (0..=bins)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == bins {
                    hi
                } else {
                    10f64.powf(a + (b - a) * i as f64 / bins as f64)
                }
            })
            .collect();
        Self {
            edges,
            counts: vec![0; bins],
        }
    }

    pub fn standard() -> Self {
        Self::log_spaced(HIST_BINS, HIST_LO, HIST_HI)
    }

    /// Bin index for `v`; values below the range land in the first bin and
    /// values above it in the last, so every value is counted.
    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let i = self.edges.partition_point(|&e| e <= v);
        i.saturating_sub(1).min(n - 1)
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::standard();
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Population mean and standard deviation.
pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate {
            mean: 0.0,
            std: 0.0,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Aggregate {
        mean,
        std: var.sqrt(),
        count: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub records: Vec<ErrorRecord>,
    pub histogram: Histogram,
    pub by_size: BTreeMap<usize, Aggregate>,
    pub by_glyph: BTreeMap<char, Aggregate>,
}

impl ErrorReport {
    /// Builds histogram and aggregates from records.
    pub fn from_records(records: Vec<ErrorRecord>) -> Self {
        let histogram = Histogram::from_values(records.iter().map(|r| r.error));
        let mut sizes: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut glyphs: BTreeMap<char, Vec<f64>> = BTreeMap::new();
        for r in &records {
            sizes.entry(r.size).or_default().push(r.error);
            glyphs.entry(r.glyph).or_default().push(r.error);
        }
        Self {
            histogram,
            by_size: sizes.iter().map(|(k, v)| (*k, aggregate(v))).collect(),
            by_glyph: glyphs.iter().map(|(k, v)| (*k, aggregate(v))).collect(),
            records,
        }
    }

    pub fn mean_error(&self) -> f64 {
        aggregate(&self.records.iter().map(|r| r.error).collect::<Vec<_>>()).mean
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("by_size.csv"))?;
        w.write_record(["size", "mean", "std"])?;
        for (s, a) in &self.by_size {
            w.write_record([s.to_string(), a.mean.to_string(), a.std.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("by_glyph.csv"))?;
        w.write_record(["glyph", "mean", "std"])?;
        for (g, a) in &self.by_glyph {
            w.write_record([g.to_string(), a.mean.to_string(), a.std.to_string()])?;
        }
        w.flush()?;

        write_histogram_csv(&dir.join("hist.csv"), &self.histogram, None)
    }

    /// Reads `records.csv` and rebuilds everything else from it.
    pub fn read_csv(dir: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(dir.join("records.csv"))?;
        let records = r.deserialize().collect::<std::result::Result<Vec<ErrorRecord>, _>>()?;
        Ok(Self::from_records(records))
    }
}

pub fn write_histogram_csv(path: &Path, a: &Histogram, b: Option<&Histogram>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if b.is_some() {
        w.write_record(["bin_lo", "bin_hi", "count_a", "count_b"])?;
    } else {
        w.write_record(["bin_lo", "bin_hi", "count_a"])?;
    }
    for i in 0..a.counts.len() {
        let mut row = vec![
            a.edges[i].to_string(),
            a.edges[i + 1].to_string(),
            a.counts[i].to_string(),
        ];
        if let Some(b) = b {
            row.push(b.counts[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Errors of every selected ground-truth bitmap against `r`, in parallel.
pub fn evaluate(r: &dyn Rasterizer, truth: &[&GlyphBitmap]) -> Result<ErrorReport> {
    let records = truth
        .par_iter()
        .map(|gt| {
            let pred = r.rasterize(gt)?;
            Ok(ErrorRecord {
                font: gt.font_id.clone(),
                weight: gt.weight_id.clone(),
                glyph: gt.glyph,
                size: gt.bitmap_size,
                error: mean_pixel_error(&pred, &gt.pixels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::from_records(records))
}

/// Histogram of individual pixel errors instead of per-bitmap means.
pub fn pixel_error_histogram(r: &dyn Rasterizer, truth: &[&GlyphBitmap]) -> Result<Histogram> {
    let mut h = Histogram::standard();
    for gt in truth {
        let pred = r.rasterize(gt)?;
        if pred.shape() != gt.pixels.shape() {
            return Err(Error::DimensionMismatch("rendered bitmap has the wrong shape".into()));
        }
        for (a, b) in pred.data().iter().zip(gt.pixels.data()) {
            h.add((a - b).abs());
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub font: String,
    pub weight: String,
    pub glyph: char,
    pub size: usize,
    pub error_a: f64,
    pub error_b: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub pairs: Vec<PairedRecord>,
    /// Geometric mean of `a / b` over pairs.
    pub geometric_mean_ratio: f64,
    pub hist_a: Histogram,
    pub hist_b: Histogram,
}

impl Comparison {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("pairs.csv"))?;
        for p in &self.pairs {
            w.serialize(p)?;
        }
        w.flush()?;
        write_histogram_csv(&dir.join("hist.csv"), &self.hist_a, Some(&self.hist_b))
    }
}

type RecordKey = (String, String, char, usize);

fn key_of(r: &ErrorRecord) -> RecordKey {
    (r.font.clone(), r.weight.clone(), r.glyph, r.size)
}

/// Pairs two reports over the same selection.
pub fn compare_reports(a: &ErrorReport, b: &ErrorReport) -> Result<Comparison> {
    let index: BTreeMap<RecordKey, f64> = b.records.iter().map(|r| (key_of(r), r.error)).collect();
    if index.len() != a.records.len() || b.records.len() != a.records.len() {
        return Err(Error::InvalidArgument("reports cover different selections".into()));
    }
    let mut pairs = Vec::with_capacity(a.records.len());
    let mut log_sum = 0.0;
    for r in &a.records {
        let eb = *index
            .get(&key_of(r))
            .ok_or_else(|| Error::InvalidArgument(format!("record {:?} missing from second report", key_of(r))))?;
        let ratio = r.error.max(RATIO_FLOOR) / eb.max(RATIO_FLOOR);
        log_sum += ratio.ln();
        pairs.push(PairedRecord {
            font: r.font.clone(),
            weight: r.weight.clone(),
            glyph: r.glyph,
            size: r.size,
            error_a: r.error,
            error_b: eb,
            ratio,
        });
    }
    let geometric_mean_ratio = if pairs.is_empty() {
        1.0
    } else {
        (log_sum / pairs.len() as f64).exp()
    };
    Ok(Comparison {
        pairs,
        geometric_mean_ratio,
        hist_a: a.histogram.clone(),
        hist_b: b.histogram.clone(),
    })
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation as the Pearson correlation of average ranks.
/// Returns 0 when either side has no variation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Rank correlation between bitmap size and mean error per size.
pub fn trend_by_size(report: &ErrorReport) -> Result<f64> {
    if report.by_size.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "trend needs at least 5 sizes, report has {}",
            report.by_size.len()
        )));
    }
    let sizes: Vec<f64> = report.by_size.keys().map(|&s| s as f64).collect();
    let means: Vec<f64> = report.by_size.values().map(|a| a.mean).collect();
    Ok(spearman(&sizes, &means))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(glyph: char, size: usize, error: f64) -> ErrorRecord {
        ErrorRecord {
            font: "f".into(),
            weight: "w".into(),
            glyph,
            size,
            error,
        }
    }

    #[test]
    fn pixel_error_examples() {
        let z = Tensor2::zeros(10, 10);
        let o = Tensor2::filled(10, 10, 1.0);
        assert_eq!(mean_pixel_error(&z, &z).unwrap(), 0.0);
        assert_eq!(mean_pixel_error(&z, &o).unwrap(), 1.0);
        let mut one = z.clone();
        one.set(3, 4, 1.0);
        assert!((mean_pixel_error(&one, &z).unwrap() - 0.01).abs() < 1e-15);
        assert!(mean_pixel_error(&z, &Tensor2::zeros(10, 9)).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::standard();
        assert_eq!(h.edges.len(), 31);
        assert_eq!(h.edges[0], 1e-6);
        assert_eq!(h.edges[30], 1.0);
        assert!((h.edges[5] - 1e-5).abs() < 1e-18);
        let h = Histogram::from_values([0.0, 1e-7, 1e-6, 0.5, 1.0, 2.0]);
        assert_eq!(h.total(), 6);
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts[29], 2);
    }

    #[test]
    fn spearman_conventions() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[0.1; 5]), 0.0);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        let decreasing = ErrorReport::from_records((20..25).map(|s| rec('l', s, 1.0 / s as f64)).collect());
        assert!((trend_by_size(&decreasing).unwrap() + 1.0).abs() < 1e-12);
        let short = ErrorReport::from_records((20..24).map(|s| rec('l', s, 0.1)).collect());
        assert!(trend_by_size(&short).is_err());
    }

    #[test]
    fn comparisons() {
        let a = ErrorReport::from_records((20..30).map(|s| rec('a', s, 0.001 * s as f64)).collect());
        let same = compare_reports(&a, &a).unwrap();
        assert!(same.pairs.iter().all(|p| p.ratio == 1.0));
        assert_eq!(same.geometric_mean_ratio, 1.0);
        let ten = ErrorReport::from_records(
            a.records
                .iter()
                .map(|r| ErrorRecord {
                    error: r.error * 10.0,
                    ..r.clone()
                })
                .collect(),
        );
        assert!((compare_reports(&ten, &a).unwrap().geometric_mean_ratio - 10.0).abs() < 1e-9);
        let fewer = ErrorReport::from_records(a.records[1..].to_vec());
        assert!(compare_reports(&a, &fewer).is_err());
    }

    #[test]
    fn aggregates_match_records() {
        let r = ErrorReport::from_records(vec![rec('a', 20, 0.1), rec('a', 21, 0.3), rec('b', 20, 0.2)]);
        assert!((r.by_size[&20].mean - 0.15).abs() < 1e-12);
        assert!((r.by_size[&20].std - 0.05).abs() < 1e-12);
        assert_eq!(r.by_glyph[&'b'].count, 1);
        assert_eq!(r.histogram.total(), 3);
    }
}
