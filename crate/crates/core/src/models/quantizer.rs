use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of intensity categories.
pub const CATEGORIES: usize = 20;

/// Category of an intensity: `min(floor(20·v), 19)`.
pub fn quantize_intensity(v: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange(format!("intensity {v} outside [0, 1]")));
    }
    Ok(((v * CATEGORIES as f64).floor() as usize).min(CATEGORIES - 1))
}

/// Bin center `(c + 0.5) / 20`.
pub fn decode_category(c: usize) -> Result<f64> {
    if c >= CATEGORIES {
        return Err(Error::OutOfRange(format!("category {c} outside 0..{CATEGORIES}")));
    }
    Ok((c as f64 + 0.5) / CATEGORIES as f64)
}

/// How a category distribution becomes a pixel intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Argmax category, decoded as its bin center.
    BinCenter,
    /// Argmax category; the outermost categories decode to exactly 0 and 1,
    /// all others to their bin center.
    #[default]
    Snapped,
    /// Probability-weighted mean of the bin centers.
    Expectation,
}

impl std::str::FromStr for Decoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin-center" | "bin_center" => Ok(Decoding::BinCenter),
            "snapped" => Ok(Decoding::Snapped),
            "expectation" => Ok(Decoding::Expectation),
            other => Err(Error::InvalidArgument(format!("unknown decoding {other:?}"))),
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

impl Decoding {
    pub fn decode(self, probs: &[f64]) -> f64 {
        let n = probs.len();
        match self {
            Decoding::BinCenter => (argmax(probs) as f64 + 0.5) / n as f64,
            Decoding::Snapped => match argmax(probs) {
                0 => 0.0,
                c if c == n - 1 => 1.0,
                c => (c as f64 + 0.5) / n as f64,
            },
            Decoding::Expectation => probs
                .iter()
                .enumerate()
                .map(|(c, p)| p * (c as f64 + 0.5) / n as f64)
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }
}
