//! Gaussian kernel density estimates of 1-D distance samples and the
//! peak-count modality test.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 0.3;
pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_MIN_REL_HEIGHT: f64 = 0.01;
pub const MIN_GRID_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.pdf.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Two-column `grid,pdf` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,pdf\n");
        for (x, y) in self.grid.iter().zip(&self.pdf) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// `(1 / (n h)) * sum_i phi((x - d_i) / h)` at each grid point.
pub fn kde_eval(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    grid.iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&d| {
                    let u = (x - d) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// KDE on `grid_size` evenly spaced points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde(samples: &[f64], bandwidth: f64, grid_size: usize) -> Result<KdeCurve> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("kde of an empty sample".into()));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::InvalidParameter(format!(
            "grid size must be >= {MIN_GRID_SIZE}, got {grid_size}"
        )));
    }
    if samples.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("kde sample is not finite".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|t| lo + step * t as f64).collect();
    let pdf = kde_eval(samples, bandwidth, &grid);
    Ok(KdeCurve {
        grid,
        pdf,
        bandwidth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Unimodal,
    Multimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityVerdict {
    pub peak_count: usize,
    pub peak_locations: Vec<f64>,
    pub verdict: Modality,
}

/// Local maxima of the curve: interior points where the discrete gradient
/// turns from positive to negative, at least `min_rel_height` of the global
/// maximum. A flat top counts once, at its leftmost point.
pub fn count_peaks(curve: &KdeCurve, min_rel_height: f64) -> ModalityVerdict {
    let pdf = &curve.pdf;
    let g = pdf.len();
    let max = pdf.iter().copied().fold(0.0, f64::max);
    let floor = min_rel_height * max;
    let mut peaks = Vec::new();
    let mut t = 1;
    while t + 1 < g {
        if pdf[t] > pdf[t - 1] {
            let mut u = t;
            while u + 1 < g && pdf[u + 1] == pdf[t] {
                u += 1;
            }
            if u + 1 < g && pdf[u + 1] < pdf[t] && pdf[t] >= floor {
                peaks.push(t);
            }
            t = u + 1;
        } else {
            t += 1;
        }
    }
    if peaks.is_empty() {
        // degenerate (e.g. monotone over the grid): the global maximum
        let arg = pdf
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > pdf[best] { i } else { best });
        peaks.push(arg);
    }
    let verdict = if peaks.len() == 1 {
        Modality::Unimodal
    } else {
        Modality::Multimodal
    };
    ModalityVerdict {
        peak_count: peaks.len(),
        peak_locations: peaks.iter().map(|&t| curve.grid[t]).collect(),
        verdict,
    }
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn normal_draws(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kde(&[], 0.3, 512).is_err());
        assert!(kde(&[1.0], 0.0, 512).is_err());
        assert!(kde(&[1.0], -1.0, 512).is_err());
        assert!(kde(&[1.0], 0.3, 8).is_err());
    }

    #[test]
    fn single_sample_bump() {
        // odd grid puts a point at the sample itself
        let c = kde(&[5.0], 0.3, 511).unwrap();
        let arg = c.pdf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let nearest = c.grid.iter().enumerate().min_by(|a, b| (a.1 - 5.0).abs().total_cmp(&(b.1 - 5.0).abs())).unwrap().0;
        assert_eq!(arg, nearest);
        assert!((c.grid[0] - 4.1).abs() < 1e-12);
        assert!((c.grid[510] - 5.9).abs() < 1e-12);
        assert!((c.grid[arg] - 5.0).abs() < 1e-12);
        assert_eq!(count_peaks(&c, 0.01).verdict, Modality::Unimodal);
        // repeated samples give the identical curve
        let same = kde(&[5.0; 7], 0.3, 511).unwrap();
        for (a, b) in c.pdf.iter().zip(&same.pdf) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn mass_and_positivity() {
        let s = normal_draws(3.0, 0.7, 400, 1);
        let c = kde(&s, 0.3, 512).unwrap();
        assert!(c.pdf.iter().all(|&p| p >= 0.0));
        assert!(c.grid.windows(2).all(|w| w[1] > w[0]));
        let m = c.mass();
        assert!((0.95..=1.0).contains(&m), "mass {m}");
    }

    #[test]
    fn narrow_normal_max_near_zero() {
        let s = normal_draws(0.0, 0.1, 1000, 2);
        let c = kde(&s, 0.3, 512).unwrap();
        // dense-grid oracle: direct evaluation on a 20k-point grid
        let dense: Vec<f64> = (0..20_000).map(|i| -1.5 + 3.0 * i as f64 / 19_999.0).collect();
        let pdf = kde_eval(&s, 0.3, &dense);
        let arg_dense = dense[pdf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        let arg = c.grid[c.pdf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        assert!(arg_dense.abs() < 0.05);
        assert!(arg.abs() < 0.05);
    }

    #[test]
    fn two_mode_mixture() {
        let mut s = normal_draws(0.0, 0.1, 300, 3);
        s.extend(normal_draws(5.0, 0.1, 300, 4));
        let v = count_peaks(&kde(&s, 0.3, 512).unwrap(), 0.01);
        assert_eq!(v.peak_count, 2);
        assert_eq!(v.verdict, Modality::Multimodal);
        assert!(v.peak_locations[0] < v.peak_locations[1]);
        assert!((v.peak_locations[0]).abs() < 0.1 && (v.peak_locations[1] - 5.0).abs() < 0.1);
        // oversmoothed past half the mode separation: one peak
        assert_eq!(count_peaks(&kde(&s, 3.0, 512).unwrap(), 0.01).peak_count, 1);
    }

    #[test]
    fn plateau_counts_once() {
        let curve = KdeCurve {
            grid: (0..20).map(f64::from).collect(),
            pdf: vec![0., 1., 2., 3., 3., 3., 2., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
            bandwidth: 1.0,
        };
        let v = count_peaks(&curve, 0.01);
        assert_eq!(v.peak_count, 1);
        assert_eq!(v.peak_locations, vec![3.0]);
    }

    #[test]
    fn relative_height_floor_filters_ripples() {
        let mut pdf = vec![0.0; 20];
        pdf[5] = 1.0;
        pdf[15] = 0.005;
        let curve = KdeCurve { grid: (0..20).map(f64::from).collect(), pdf, bandwidth: 1.0 };
        assert_eq!(count_peaks(&curve, 0.01).peak_count, 1);
        assert_eq!(count_peaks(&curve, 0.0).peak_count, 2);
    }

    #[test]
    fn csv_export() {
        let c = kde(&[1.0, 2.0], 0.3, 16).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("grid,pdf\n"));
        assert_eq!(csv.lines().count(), 17);
    }

    proptest! {
        #[test]
        fn kde_is_linear_in_the_sample(seed in 0u64..10_000, na in 1usize..40, nb in 1usize..40) {
            let a = normal_draws(1.0, 1.0, na, seed);
            let b = normal_draws(4.0, 0.5, nb, seed + 1);
            let grid: Vec<f64> = (0..64).map(|i| -3.0 + 0.15 * i as f64).collect();
            let mut ab = a.clone();
            ab.extend(&b);
            let whole = kde_eval(&ab, 0.3, &grid);
            let pa = kde_eval(&a, 0.3, &grid);
            let pb = kde_eval(&b, 0.3, &grid);
            let (wa, wb) = (na as f64 / (na + nb) as f64, nb as f64 / (na + nb) as f64);
            for t in 0..grid.len() {
                prop_assert!((whole[t] - (wa * pa[t] + wb * pb[t])).abs() < 1e-9);
            }
        }

        #[test]
        fn peak_count_translation_invariant(seed in 0u64..10_000, shift in -50i32..50) {
            let mut s = normal_draws(0.0, 0.2, 100, seed);
            s.extend(normal_draws(3.0, 0.2, 60, seed + 7));
            // power-of-two grid keeps translated samples exactly representable
            let s: Vec<f64> = s.iter().map(|x| (x * 1024.0).round() / 1024.0).collect();
            let moved: Vec<f64> = s.iter().map(|x| x + shift as f64).collect();
            let a = count_peaks(&kde(&s, 0.3, 512).unwrap(), 0.01);
            let b = count_peaks(&kde(&moved, 0.3, 512).unwrap(), 0.01);
            prop_assert_eq!(a.peak_count, b.peak_count);
        }
    }
}
