//! Sinusoidal frequency encoding of scalar inputs.
//!
//! `γ(v)` interleaves `sin(2^L_i·π·v)` and `cos(2^L_i·π·v)` for each power
//! `L_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensornet::seeded_rng;
use crate::{Error, Result, SIZE_MAX, SIZE_MIN};

pub const DEFAULT_PAIRS: usize = 32;
pub const DEFAULT_POWER_LO: f64 = 0.0;
pub const DEFAULT_POWER_HI: f64 = 12.0;

/// `D` evenly spaced powers from `lo` to `hi` inclusive.
pub fn make_powers(d: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    check(d, lo, hi)?;
    if d == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (d - 1) as f64;
    Ok((0..d)
        .map(|i| if i == d - 1 { hi } else { lo + i as f64 * step })
        .collect())
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check(d: usize, lo: f64, hi: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("encoder needs at least one power".into()));
    }
    // also rejects NaN bounds
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("power range [{lo}, {hi}] is empty")));
    }
    Ok(())
}

/// The list of powers `L` defining `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEncoder {
    powers: Vec<f64>,
}

impl Default for FrequencyEncoder {
    fn default() -> Self {
        Self::grid(DEFAULT_PAIRS, DEFAULT_POWER_LO, DEFAULT_POWER_HI).expect("valid defaults")
    }
}

impl FrequencyEncoder {
    /// Deterministic uniform grid of powers.
    pub fn grid(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Ok(Self {
            powers: make_powers(d, lo, hi)?,
        })
    }

    /// Powers drawn uniformly at random from `[lo, hi]` with a seeded
    /// generator, then sorted.
    pub fn seeded_random(d: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        check(d, lo, hi)?;
        let mut rng = seeded_rng(seed);
        let mut powers: Vec<f64> = (0..d).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
        powers.sort_by(f64::total_cmp);
        Ok(Self { powers })
    }

    pub fn from_powers(mut powers: Vec<f64>) -> Result<Self> {
        if powers.is_empty() || powers.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("powers must be finite and non-empty".into()));
        }
        powers.sort_by(f64::total_cmp);
        Ok(Self { powers })
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn pairs(&self) -> usize {
        self.powers.len()
    }

    /// Output length `2·D`.
    pub fn dim(&self) -> usize {
        2 * self.powers.len()
    }

    pub fn encode_scalar(&self, v: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.encode_into(v, &mut out);
        out
    }

    pub fn encode_into(&self, v: f64, out: &mut Vec<f64>) {
        for &l in &self.powers {
            let arg = l.exp2() * std::f64::consts::PI * v;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }

    /// `[v, γ(v)]`, or just `[v]` when `frequency` is off.
    pub fn feature_into(&self, v: f64, frequency: bool, out: &mut Vec<f64>) {
        out.push(v);
        if frequency {
            self.encode_into(v, out);
        }
    }

    pub fn feature_width(&self, frequency: bool) -> usize {
        if frequency {
            1 + self.dim()
        } else {
            1
        }
    }
}

/// Maps a bitmap size onto `[0, 1]` over the 20..=63 range.
pub fn normalize_size(bitmap_size: usize) -> f64 {
    (bitmap_size as f64 - SIZE_MIN as f64) / (SIZE_MAX - SIZE_MIN) as f64
}

/// Maps a pixel coordinate onto `[0, 1]` across the bitmap.
pub fn normalize_coord(c: usize, bitmap_size: usize) -> f64 {
    if bitmap_size <= 1 {
        0.0
    } else {
        c as f64 / (bitmap_size - 1) as f64
    }
}

/// Full model input for one pixel:
/// `[size, γ(size), x, γ(x), y, γ(y)]` followed by `[weight, γ(weight)]`
/// when a weight is given.
pub fn encode_inputs(
    x: usize,
    y: usize,
    bitmap_size: usize,
    weight: Option<f64>,
    enc: &FrequencyEncoder,
) -> Result<Vec<f64>> {
    if !(SIZE_MIN..=SIZE_MAX).contains(&bitmap_size) {
        return Err(Error::OutOfRange(format!(
            "size out of range {SIZE_MIN}..{SIZE_MAX}: {bitmap_size}"
        )));
    }
    if x >= bitmap_size || y >= bitmap_size {
        return Err(Error::OutOfRange(format!(
            "pixel ({x}, {y}) outside a {bitmap_size}x{bitmap_size} bitmap"
        )));
    }
    let mut out = Vec::with_capacity(4 * enc.feature_width(true));
    enc.feature_into(normalize_size(bitmap_size), true, &mut out);
    enc.feature_into(normalize_coord(x, bitmap_size), true, &mut out);
    enc.feature_into(normalize_coord(y, bitmap_size), true, &mut out);
    if let Some(w) = weight {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::OutOfRange(format!("weight {w} outside [0, 1]")));
        }
        enc.feature_into(w, true, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_grids() {
        assert_eq!(make_powers(2, 0.0, 12.0).unwrap(), vec![0.0, 12.0]);
        assert_eq!(make_powers(1, 0.0, 12.0).unwrap(), vec![0.0]);
        let p = make_powers(32, 0.0, 12.0).unwrap();
        assert_eq!(p.len(), 32);
        assert!((p[1] - 12.0 / 31.0).abs() < 1e-15);
        assert!((p[1] - 0.3871).abs() < 1e-4);
        assert_eq!(p[31], 12.0);
        assert!(make_powers(0, 0.0, 1.0).is_err());
        assert!(make_powers(3, 2.0, 1.0).is_err());
    }

    #[test]
    fn seeded_powers_are_sorted_and_bounded() {
        let e = FrequencyEncoder::seeded_random(32, 0.0, 12.0, 4).unwrap();
        assert!(e.powers().windows(2).all(|w| w[0] <= w[1]));
        assert!(e.powers().iter().all(|p| (0.0..=12.0).contains(p)));
        assert_eq!(e, FrequencyEncoder::seeded_random(32, 0.0, 12.0, 4).unwrap());
    }

    #[test]
    fn gamma_known_values() {
        let e = FrequencyEncoder::default();
        let zero = e.encode_scalar(0.0);
        assert_eq!(zero.len(), 64);
        for pair in zero.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let one = FrequencyEncoder::from_powers(vec![0.0]).unwrap().encode_scalar(1.0);
        assert!(one[0].abs() < 1e-15);
        assert_eq!(one[1], -1.0);
        let q = FrequencyEncoder::from_powers(vec![1.0]).unwrap().encode_scalar(0.25);
        assert_eq!(q[0], 1.0);
        assert!(q[1].abs() < 1e-15);
    }

    #[test]
    fn input_layout() {
        let e = FrequencyEncoder::default();
        let w = e.feature_width(true);
        let v = encode_inputs(0, 0, 20, None, &e).unwrap();
        assert_eq!(v.len(), 3 * (1 + 64));
        assert_eq!([v[0], v[w], v[2 * w]], [0.0, 0.0, 0.0]);

        let v = encode_inputs(62, 62, 63, Some(1.0), &e).unwrap();
        assert_eq!(v.len(), 4 * (1 + 64));
        assert_eq!([v[0], v[w], v[2 * w], v[3 * w]], [1.0, 1.0, 1.0, 1.0]);

        let v = encode_inputs(20, 10, 41, None, &e).unwrap();
        assert_eq!(v[0], 21.0 / 43.0);
        assert_eq!(v[w], 0.5);
        assert_eq!(v[2 * w], 0.25);

        assert!(encode_inputs(20, 0, 20, None, &e).is_err());
        assert!(encode_inputs(0, 0, 64, None, &e).is_err());
    }
}
