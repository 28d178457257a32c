//! Otsu's threshold on the histogram of a 1-D distance sample.
//!
//! Values are binned into `B` equal-width bins over `[min, max]`; bin `b`
//! covers `(e_b, e_{b+1}]` (bin 0 also takes `min`), so the lower class of
//! edge `e_t` is exactly `{x <= e_t}`. The between-class variance
//! `w0 * w1 * (mu1 - mu0)^2` is maximized over the interior edges using bin
//! midpoints for the class means. Scores are compared in exact integer
//! arithmetic, so the argmax (ties to the smaller edge) is deterministic.

use serde::{Deserialize, Serialize};

use crate::dataset::SampleIndexSet;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtsuResult {
    /// Cut-off in sample units; the clean side is `<= threshold`.
    pub threshold: f64,
    /// Index of the chosen edge in `bin_edges`.
    pub edge_index: usize,
    /// Between-class variance of the raw samples split at `threshold`.
    pub sigma_b: f64,
    pub histogram: Vec<u64>,
    pub bin_edges: Vec<f64>,
}

/// Equal-width histogram with right-closed bins.
pub fn histogram(samples: &[f64], bins: usize) -> (Vec<u64>, Vec<f64>) {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..=bins).map(|t| lo + width * t as f64 / bins as f64).collect();
    edges[bins] = hi;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        counts[bin_of(x, &edges)] += 1;
    }
    (counts, edges)
}

fn bin_of(x: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let pos = ((x - lo) / (hi - lo) * bins as f64).ceil() as isize - 1;
    let mut b = pos.clamp(0, bins as isize - 1) as usize;
    // settle rounding at the edges so that bin b is exactly (e_b, e_{b+1}]
    while b > 0 && x <= edges[b] {
        b -= 1;
    }
    while b + 1 < bins && x > edges[b + 1] {
        b += 1;
    }
    b
}

/// 128 x 128 -> 256-bit product as (high, low).
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & mask);
    let (b_hi, b_lo) = (b >> 64, b & mask);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & mask) + (hl & mask);
    let low = (ll & mask) | (mid << 64);
    let high = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (high, low)
}

/// Between-class score for one split, as the fraction `num / den` in
/// bin-index units (scaled by a constant that is the same for every edge).
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(c0: u64, j0: u128, c1: u64, j1: u128) -> Result<Score> {
        let overflow = || Error::InvalidParameter("sample too large for exact Otsu scoring".into());
        let a = j1.checked_mul(c0 as u128).ok_or_else(overflow)?;
        let b = j0.checked_mul(c1 as u128).ok_or_else(overflow)?;
        let x = a.abs_diff(b);
        Ok(Score {
            num: x.checked_mul(x).ok_or_else(overflow)?,
            den: c0 as u128 * c1 as u128,
        })
    }

    fn gt(&self, other: &Score) -> bool {
        mul_wide(self.num, other.den) > mul_wide(other.num, self.den)
    }
}

pub fn otsu_threshold(samples: &[f64], bins: usize) -> Result<OtsuResult> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need >= 2 bins, got {bins}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("otsu sample is not finite".into()));
    }
    let first = *samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("otsu of an empty sample".into()))?;
    if samples.iter().all(|&x| x == first) {
        return Err(Error::InvalidParameter(
            "all samples identical; no threshold exists".into(),
        ));
    }

    let (histogram, bin_edges) = histogram(samples, bins);
    let total: u64 = histogram.iter().sum();
    // bin b has midpoint proportional to 2b + 1
    let j_total: u128 = histogram
        .iter()
        .enumerate()
        .map(|(b, &c)| c as u128 * (2 * b as u128 + 1))
        .sum();

    let mut c0 = 0u64;
    let mut j0 = 0u128;
    let mut best: Option<(usize, Score)> = None;
    for t in 1..bins {
        c0 += histogram[t - 1];
        j0 += histogram[t - 1] as u128 * (2 * (t - 1) as u128 + 1);
        let c1 = total - c0;
        if c0 == 0 || c1 == 0 {
            continue;
        }
        let s = Score::new(c0, j0, c1, j_total - j0)?;
        if best.as_ref().is_none_or(|(_, b)| s.gt(b)) {
            best = Some((t, s));
        }
    }
    let (edge_index, _) = best.expect("two distinct values leave every interior edge non-degenerate");
    let threshold = bin_edges[edge_index];

    let (mut n0, mut s0, mut n1, mut s1) = (0usize, 0f64, 0usize, 0f64);
    for &x in samples {
        if x <= threshold {
            n0 += 1;
            s0 += x;
        } else {
            n1 += 1;
            s1 += x;
        }
    }
    let n = samples.len() as f64;
    let (w0, w1) = (n0 as f64 / n, n1 as f64 / n);
    let sigma_b = if n0 == 0 || n1 == 0 {
        0.0
    } else {
        w0 * w1 * (s1 / n1 as f64 - s0 / n0 as f64).powi(2)
    };

    Ok(OtsuResult {
        threshold,
        edge_index,
        sigma_b,
        histogram,
        bin_edges,
    })
}

/// Positions with value `<= threshold` (clean side) and `> threshold`.
pub fn split_by_threshold(samples: &[f64], threshold: f64) -> (SampleIndexSet, SampleIndexSet) {
    let (below, above): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| samples[i] <= threshold);
    (
        SampleIndexSet::from_sorted(below).expect("ascending"),
        SampleIndexSet::from_sorted(above).expect("ascending"),
    )
}
