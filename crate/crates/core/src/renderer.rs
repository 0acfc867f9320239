//! Bitmap synthesis from trained models.

use std::path::{Path, PathBuf};

use crate::dataset::{write_pgm, GlyphBitmap};
use crate::models::{Decoding, GlyphModel, Model};
use crate::sampling::{build_mask, subsample};
use crate::tensornet::Tensor2;
use crate::{Error, Result};

/// Blend between two weights in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub weight_a: String,
    pub weight_b: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub size: usize,
    pub weight: Option<String>,
    pub interpolation: Option<Interpolation>,
    pub decoding: Decoding,
}

impl RenderRequest {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            weight: None,
            interpolation: None,
            decoding: Decoding::default(),
        }
    }
}

fn bitmap(model: &GlyphModel, weight: &str, size: usize, pixels: Tensor2) -> GlyphBitmap {
    GlyphBitmap {
        font_id: model.meta.font.clone(),
        weight_id: weight.to_string(),
        glyph: model.meta.glyph,
        bitmap_size: size,
        point_size: 0,
        pixels,
    }
}

fn decode_probabilities(probs: &Tensor2, size: usize, decoding: Decoding) -> Result<Tensor2> {
    let data = (0..probs.rows()).map(|r| decoding.decode(probs.row(r))).collect();
    Tensor2::from_vec(size, size, data)
}

fn weight_label(model: &GlyphModel, weight: Option<&str>) -> String {
    match weight {
        Some(w) => w.to_string(),
        None => model.meta.weights.first().map(|e| e.id.clone()).unwrap_or_default(),
    }
}

/// Renders an implicit model: one latent, then every pixel as one batch.
pub fn render_implicit(
    model: &GlyphModel,
    size: usize,
    weight: Option<&str>,
    decoding: Decoding,
) -> Result<GlyphBitmap> {
    if !matches!(model.model, Model::Implicit(_)) {
        return Err(Error::InvalidArgument("not an implicit checkpoint".into()));
    }
    model.check_size(size)?;
    let w = model.conditioning(weight)?;
    let probs = model.inference_probabilities(size, w)?;
    let pixels = decode_probabilities(&probs, size, decoding)?;
    Ok(bitmap(model, &weight_label(model, weight), size, pixels))
}

/// Renders a masked model by subsampling its full-size output.
pub fn render_masked(model: &GlyphModel, size: usize) -> Result<GlyphBitmap> {
    let Model::Masked(m) = &model.model else {
        return Err(Error::InvalidArgument("not a masked checkpoint".into()));
    };
    model.check_size(size)?;
    let (full, _) = m.forward(&model.store, size)?;
    let mask = build_mask(size, m.config().output_side())?;
    let pixels = subsample(&full, &mask)?;
    Ok(bitmap(model, &weight_label(model, None), size, pixels))
}

/// Dispatches on the checkpoint kind.
pub fn render(model: &GlyphModel, req: &RenderRequest) -> Result<GlyphBitmap> {
    match (&model.model, &req.interpolation) {
        (Model::Masked(_), Some(_)) => Err(Error::InvalidArgument(
            "interpolation needs an implicit checkpoint".into(),
        )),
        (Model::Masked(_), None) => render_masked(model, req.size),
        (Model::Implicit(_), Some(i)) => {
            interpolate_weights(model, req.size, &i.weight_a, &i.weight_b, i.alpha, req.decoding)
        }
        (Model::Implicit(_), None) => render_implicit(model, req.size, req.weight.as_deref(), req.decoding),
    }
}

/// Renders with the latent `(1−α)·z_a + α·z_b`. The endpoints reuse the
/// unblended latents, so α = 0 and α = 1 match direct renders bit for bit.
pub fn interpolate_weights(
    model: &GlyphModel,
    size: usize,
    weight_a: &str,
    weight_b: &str,
    alpha: f64,
    decoding: Decoding,
) -> Result<GlyphBitmap> {
    let Model::Implicit(m) = &model.model else {
        return Err(Error::InvalidArgument(
            "interpolation needs an implicit checkpoint".into(),
        ));
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("alpha {alpha} outside [0, 1]")));
    }
    if !model.is_weight_conditioned() {
        return Err(Error::InvalidArgument(
            "checkpoint was trained on a single weight".into(),
        ));
    }
    model.check_size(size)?;
    let za = m.latent(&model.store, size, model.conditioning(Some(weight_a))?)?;
    let zb = m.latent(&model.store, size, model.conditioning(Some(weight_b))?)?;
    let z = if alpha == 0.0 {
        za
    } else if alpha == 1.0 {
        zb
    } else {
        za.iter().zip(&zb).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect()
    };
    let mut rs = model.meta.running_stats.clone();
    let probs = m.probabilities_from_latent(&model.store, &z, size, model.inference_mode(), &mut rs)?;
    let pixels = decode_probabilities(&probs, size, decoding)?;
    Ok(bitmap(model, &format!("{weight_a}~{weight_b}@{alpha}"), size, pixels))
}

/// Rows of background between cascade entries.
pub const CASCADE_PADDING: usize = 2;

/// Stacks bitmaps top to bottom, left-aligned, on a background of 0.
pub fn compose_sheet(bitmaps: &[Tensor2], padding: usize) -> Tensor2 {
    let width = bitmaps.iter().map(Tensor2::cols).max().unwrap_or(0);
    let height = bitmaps.iter().map(Tensor2::rows).sum::<usize>() + padding * bitmaps.len().saturating_sub(1);
    let mut sheet = Tensor2::zeros(height, width);
    let mut top = 0;
    for b in bitmaps {
        for r in 0..b.rows() {
            sheet.row_mut(top + r)[..b.cols()].copy_from_slice(b.row(r));
        }
        top += b.rows() + padding;
    }
    sheet
}

#[derive(Debug, Clone)]
pub struct Cascade {
    pub bitmaps: Vec<GlyphBitmap>,
    pub sheet: Tensor2,
}

/// Renders every size with `render_one` and stacks the results.
pub fn cascade_with(sizes: &[usize], mut render_one: impl FnMut(usize) -> Result<GlyphBitmap>) -> Result<Cascade> {
    let bitmaps = sizes.iter().map(|&s| render_one(s)).collect::<Result<Vec<_>>>()?;
    let pixels: Vec<Tensor2> = bitmaps.iter().map(|b| b.pixels.clone()).collect();
    Ok(Cascade {
        sheet: compose_sheet(&pixels, CASCADE_PADDING),
        bitmaps,
    })
}

pub fn render_cascade(
    model: &GlyphModel,
    sizes: &[usize],
    weight: Option<&str>,
    decoding: Decoding,
) -> Result<Cascade> {
    cascade_with(sizes, |s| {
        render(
            model,
            &RenderRequest {
                size: s,
                weight: weight.map(str::to_string),
                interpolation: None,
                decoding,
            },
        )
    })
}

/// `<glyph>_<size>[_w<α>].pgm`, with non-alphanumeric glyphs as hex.
pub fn output_name(glyph: char, size: usize, alpha: Option<f64>) -> String {
    let g = if glyph.is_ascii_alphanumeric() {
        glyph.to_string()
    } else {
        crate::dataset::glyph_dir_name(glyph)
    };
    match alpha {
        Some(a) => format!("{g}_{size}_w{a}.pgm"),
        None => format!("{g}_{size}.pgm"),
    }
}

/// Writes a bitmap into `dir` under its conventional name.
pub fn write_bitmap(bm: &GlyphBitmap, dir: &Path, alpha: Option<f64>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(output_name(bm.glyph, bm.bitmap_size, alpha));
    write_pgm(&bm.pixels, &path)?;
    Ok(path)
}
