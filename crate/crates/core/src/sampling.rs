//! Pixel-duplication upsampling and the masks that invert it.
//!
//! A size-`s` bitmap is embedded in a `T×T` grid by duplicating every row
//! (and column) `floor(T/s)` times and giving one extra copy to
//! `T mod s` evenly spaced indices. The first target index of every block is
//! that source pixel's representative; the mask marks those positions.

use crate::tensornet::Tensor2;
use crate::{Error, Result};

fn check_sizes(s: usize, t: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidArgument("source size must be at least 1".into()));
    }
    if s > t {
        return Err(Error::InvalidArgument(format!(
            "source size {s} exceeds target size {t}"
        )));
    }
    Ok(())
}

/// How many times each of the `s` source indices is repeated to fill `t`.
pub fn duplication_counts(s: usize, t: usize) -> Result<Vec<usize>> {
    check_sizes(s, t)?;
    let k = t / s;
    let r = t - k * s;
    let mut counts = vec![k; s];
    // floor((j + 0.5)·s / r), kept in integers
    for j in 0..r {
        counts[(2 * j + 1) * s / (2 * r)] += 1;
    }
    Ok(counts)
}

/// For every target index, the source index whose block covers it.
fn source_of(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect()
}

/// Block-replicates a square `s×s` bitmap to `t×t`.
pub fn upsample(bitmap: &Tensor2, t: usize) -> Result<Tensor2> {
    let s = bitmap.rows();
    if bitmap.cols() != s {
        return Err(Error::DimensionMismatch(format!(
            "upsample expects a square bitmap, got {:?}",
            bitmap.shape()
        )));
    }
    let src = source_of(&duplication_counts(s, t)?);
    Ok(Tensor2::from_fn(t, t, |a, b| bitmap.get(src[a], src[b])))
}

/// Inverse of [`upsample`] for one `(s, T)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    source_size: usize,
    target_size: usize,
    row_map: Vec<usize>,
    col_map: Vec<usize>,
    mask: Vec<bool>,
}

impl SamplingMask {
    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Representative target row of each source row (strictly increasing).
    pub fn row_map(&self) -> &[usize] {
        &self.row_map
    }

    pub fn col_map(&self) -> &[usize] {
        &self.col_map
    }

    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.target_size + j]
    }

    pub fn ones(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The mask as a 0/1 matrix.
    pub fn to_tensor(&self) -> Tensor2 {
        let t = self.target_size;
        Tensor2::from_fn(t, t, |i, j| if self.is_set(i, j) { 1.0 } else { 0.0 })
    }
}

pub fn build_mask(s: usize, t: usize) -> Result<SamplingMask> {
    let counts = duplication_counts(s, t)?;
    let row_map: Vec<usize> = counts
        .iter()
        .scan(0, |start, &c| {
            let first = *start;
            *start += c;
            Some(first)
        })
        .collect();
    let mut rows = vec![false; t];
    for &r in &row_map {
        rows[r] = true;
    }
    let mut mask = vec![false; t * t];
    for i in 0..t {
        for j in 0..t {
            mask[i * t + j] = rows[i] && rows[j];
        }
    }
    Ok(SamplingMask {
        source_size: s,
        target_size: t,
        col_map: row_map.clone(),
        row_map,
        mask,
    })
}

/// Picks the representative pixels of a `T×T` grid back out.
pub fn subsample(big: &Tensor2, m: &SamplingMask) -> Result<Tensor2> {
    let t = m.target_size;
    if big.shape() != (t, t) {
        return Err(Error::DimensionMismatch(format!(
            "subsample expects {t}x{t}, got {:?}",
            big.shape()
        )));
    }
    let s = m.source_size;
    Ok(Tensor2::from_fn(s, s, |i, j| big.get(m.row_map[i], m.col_map[j])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_examples() {
        assert_eq!(duplication_counts(20, 40).unwrap(), vec![2; 20]);
        assert_eq!(duplication_counts(3, 7).unwrap(), vec![2, 3, 2]);
        assert_eq!(duplication_counts(17, 17).unwrap(), vec![1; 17]);
        assert!(duplication_counts(0, 5).is_err());
        assert!(duplication_counts(6, 5).is_err());
    }

    #[test]
    fn upsample_examples() {
        let b = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let up = upsample(&b, 4).unwrap();
        let want = Tensor2::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(up, want);
        assert_eq!(
            upsample(&Tensor2::filled(1, 1, 0.3), 5).unwrap(),
            Tensor2::filled(5, 5, 0.3)
        );
        assert_eq!(upsample(&want, 4).unwrap(), want);
    }

    #[test]
    fn mask_examples() {
        let full = build_mask(40, 40).unwrap();
        assert_eq!(full.ones(), 1600);
        assert_eq!(full.to_tensor(), Tensor2::filled(40, 40, 1.0));

        let m = build_mask(3, 7).unwrap();
        assert_eq!(m.row_map(), &[0, 2, 5]);
        assert_eq!(build_mask(27, 40).unwrap().ones(), 729);

        let big = Tensor2::from_fn(7, 7, |i, j| (10 * i + j) as f64);
        let small = subsample(&big, &m).unwrap();
        let want = Tensor2::from_rows(&[vec![0.0, 2.0, 5.0], vec![20.0, 22.0, 25.0], vec![50.0, 52.0, 55.0]]).unwrap();
        assert_eq!(small, want);
        assert_eq!(subsample(&big, &build_mask(7, 7).unwrap()).unwrap(), big);
        assert!(subsample(&Tensor2::zeros(6, 6), &m).is_err());
    }

    proptest! {
        #[test]
        fn upsample_subsample_round_trip(
            (s, t) in (1usize..=63).prop_flat_map(|s| (Just(s), s..=63usize)),
            seed in any::<u64>(),
        ) {
            let mut x = seed;
            let b = Tensor2::from_fn(s, s, |_, _| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64
            });
            let m = build_mask(s, t).unwrap();
            prop_assert_eq!(subsample(&upsample(&b, t).unwrap(), &m).unwrap(), b);
            prop_assert_eq!(m.ones(), s * s);
            prop_assert!(m.row_map().windows(2).all(|w| w[0] < w[1]));
            for i in 0..t {
                for j in 0..t {
                    let expect = m.row_map().contains(&i) && m.col_map().contains(&j);
                    prop_assert_eq!(m.is_set(i, j), expect);
                }
            }
        }
    }
}
