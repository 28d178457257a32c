//! Synthetic embeddings with planted label noise, and a nearest-centroid
//! classifier for scoring a (denoised) training set.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::DbscanParams;
use crate::dataset::{EmbeddingDataset, SampleIndexSet, UNLABELED};
use crate::denoise::DenoiseConfig;
use crate::error::{Error, Result};
use crate::geometry::{euclidean, median_centroid};

const STREAM_GEOMETRY: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_TRAIN_OOD: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_TEST_OOD: u64 = 5;

/// Range of the per-coordinate scale multipliers in anisotropic mode.
const ANISO_RANGE: (f64, f64) = (0.4, 2.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Corrupted labels are redrawn over all k classes, the true one included.
    #[default]
    Uniform,
    /// Corrupted labels are redrawn over the k - 1 wrong classes.
    AlwaysWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub k: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Pairwise center distance, in units of `within_std`.
    pub class_sep: f64,
    pub within_std: f64,
    pub noise_frac: f64,
    #[serde(default)]
    pub ood_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default)]
    pub anisotropic: bool,
}

impl SynthConfig {
    /// Ten well-separated classes in 32 dimensions, no noise.
    pub fn benchmark(seed: u64) -> Self {
        SynthConfig {
            k: 10,
            per_class: 500,
            dim: 32,
            class_sep: 20.0,
            within_std: 0.3,
            noise_frac: 0.0,
            ood_count: 0,
            seed,
            noise_mode: NoiseMode::Uniform,
            anisotropic: false,
        }
    }

    pub fn center_distance(&self) -> f64 {
        self.class_sep * self.within_std
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.per_class == 0 {
            return bad("per_class must be >= 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.dim + 1 < self.k {
            return bad(format!(
                "{} classes need at least {} dimensions for equidistant centers, got {}",
                self.k,
                self.k - 1,
                self.dim
            ));
        }
        if !(self.class_sep.is_finite() && self.class_sep > 0.0) {
            return bad(format!("class_sep must be > 0, got {}", self.class_sep));
        }
        if !(self.within_std.is_finite() && self.within_std > 0.0) {
            return bad(format!("within_std must be > 0, got {}", self.within_std));
        }
        if !(0.0..1.0).contains(&self.noise_frac) {
            return bad(format!("noise_frac must lie in [0, 1), got {}", self.noise_frac));
        }
        if self.noise_mode == NoiseMode::AlwaysWrong && self.k < 2 && self.noise_frac > 0.0 {
            return bad("always-wrong noise needs k >= 2".into());
        }
        Ok(())
    }
}

/// DBSCAN and KDE settings matched to [`SynthConfig::benchmark`].
pub fn benchmark_denoise_config() -> DenoiseConfig {
    DenoiseConfig::new(DbscanParams {
        eps: 3.0,
        min_pts: 30,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True class per row; -1 for far-field rows.
    pub true_labels: Vec<i32>,
    /// `true` where the observed label differs from the true label.
    pub noise_mask: Vec<bool>,
    pub ood_indices: SampleIndexSet,
}

impl GroundTruth {
    pub fn noisy(&self) -> SampleIndexSet {
        self.noise_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n(&self) -> usize {
        self.true_labels.len()
    }
}

struct World {
    centers: Vec<Vec<f64>>,
    scales: Vec<Vec<f64>>,
}

fn stream(cfg: &SynthConfig, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(s);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_frame(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        for _ in 0..2 {
            for u in &frame {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            frame.push(v);
        }
    }
    frame
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    random_frame(rng, 1, dim).pop().unwrap()
}

fn world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let k = cfg.k;
    let mut rng = stream(cfg, STREAM_GEOMETRY);
    let frame = random_frame(&mut rng, k.saturating_sub(1), cfg.dim);

    // Helmert coordinates put k points at mutual distance sqrt(2).
    let scale = cfg.center_distance() / std::f64::consts::SQRT_2;
    let mut centers = vec![vec![0.0; cfg.dim]; k];
    for (j, center) in centers.iter_mut().enumerate() {
        for (r, axis) in frame.iter().enumerate() {
            let r1 = r + 1;
            let norm = ((r1 * (r1 + 1)) as f64).sqrt();
            let coord = match j.cmp(&r1) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -(r1 as f64) / norm,
                std::cmp::Ordering::Greater => 0.0,
            };
            if coord != 0.0 {
                center
                    .iter_mut()
                    .zip(axis)
                    .for_each(|(c, a)| *c += scale * coord * a);
            }
        }
    }

    let scales = if cfg.anisotropic {
        let (lo, hi) = (ANISO_RANGE.0.ln(), ANISO_RANGE.1.ln());
        (0..k)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| cfg.within_std * rng.random_range(lo..hi).exp())
                    .collect()
            })
            .collect()
    } else {
        vec![vec![cfg.within_std; cfg.dim]; k]
    };
    Ok(World { centers, scales })
}

/// The class centers `generate` would use for this config.
pub fn centers(cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    Ok(world(cfg)?.centers)
}

fn draw_classes(w: &World, per_class: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    for (center, scale) in w.centers.iter().zip(&w.scales) {
        for _ in 0..per_class {
            out.extend(
                center
                    .iter()
                    .zip(scale)
                    .map(|(c, s)| (c + s * gauss(rng)) as f32),
            );
        }
    }
}

fn draw_far_field(cfg: &SynthConfig, w: &World, count: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    let d = cfg.center_distance();
    let max_scale = w
        .scales
        .iter()
        .flatten()
        .fold(0.0_f64, |m, &s| m.max(s));
    let center_radius = w
        .centers
        .iter()
        .map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt())
        .fold(0.0_f64, f64::max);
    // Clears every center by 3 separations plus the reach of any class cloud.
    let base = 3.0 * d + center_radius + max_scale * ((cfg.dim as f64).sqrt() + 8.0);
    for _ in 0..count {
        let u = unit_vector(rng, cfg.dim);
        let r = base + d * rng.random::<f64>();
        out.extend(u.iter().map(|a| (a * r) as f32));
    }
}

fn corrupt(cfg: &SynthConfig, true_label: i32, rng: &mut ChaCha8Rng) -> i32 {
    if rng.random::<f64>() >= cfg.noise_frac {
        return true_label;
    }
    let k = cfg.k as i32;
    match cfg.noise_mode {
        NoiseMode::Uniform => rng.random_range(0..k),
        NoiseMode::AlwaysWrong => (true_label + rng.random_range(1..k)) % k,
    }
}

fn assemble(cfg: &SynthConfig, values: Vec<f32>, labels: Vec<i32>, truth: Vec<i32>) -> Result<(EmbeddingDataset, GroundTruth)> {
    let n = labels.len();
    let features = Array2::from_shape_vec((n, cfg.dim), values)
        .map_err(|e| Error::Pipeline(e.to_string()))?;
    let noise_mask = labels.iter().zip(&truth).map(|(a, b)| a != b).collect();
    let ood_indices = truth
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == UNLABELED)
        .map(|(i, _)| i)
        .collect();
    let ds = EmbeddingDataset::new(features, Some(crate::dataset::Labels::new(labels, cfg.k)?))?;
    Ok((
        ds,
        GroundTruth {
            true_labels: truth,
            noise_mask,
            ood_indices,
        },
    ))
}

/// Training set: `per_class` rows per class in class order, labels corrupted
/// per `noise_frac`, then `ood_count` far-field rows labeled -1.
pub fn generate(cfg: &SynthConfig) -> Result<(EmbeddingDataset, GroundTruth)> {
    let w = world(cfg)?;
    let n_in = cfg.k * cfg.per_class;
    let mut values = Vec::with_capacity((n_in + cfg.ood_count) * cfg.dim);
    draw_classes(&w, cfg.per_class, &mut stream(cfg, STREAM_TRAIN), &mut values);
    draw_far_field(cfg, &w, cfg.ood_count, &mut stream(cfg, STREAM_TRAIN_OOD), &mut values);

    let mut truth: Vec<i32> = (0..n_in).map(|i| (i / cfg.per_class) as i32).collect();
    let mut rng = stream(cfg, STREAM_LABELS);
    let mut labels: Vec<i32> = truth.iter().map(|&t| corrupt(cfg, t, &mut rng)).collect();
    truth.resize(n_in + cfg.ood_count, UNLABELED);
    labels.resize(n_in + cfg.ood_count, UNLABELED);
    assemble(cfg, values, labels, truth)
}

/// Held-out set from the same class geometry: `per_class` clean rows per
/// class followed by `cfg.ood_count` far-field rows.
pub fn generate_test(cfg: &SynthConfig, per_class: usize) -> Result<(EmbeddingDataset, GroundTruth)> {
    let w = world(cfg)?;
    let n_in = cfg.k * per_class;
    let mut values = Vec::with_capacity((n_in + cfg.ood_count) * cfg.dim);
    draw_classes(&w, per_class, &mut stream(cfg, STREAM_TEST), &mut values);
    draw_far_field(cfg, &w, cfg.ood_count, &mut stream(cfg, STREAM_TEST_OOD), &mut values);
    let mut truth: Vec<i32> = (0..n_in).map(|i| (i / per_class) as i32).collect();
    truth.resize(n_in + cfg.ood_count, UNLABELED);
    assemble(cfg, values, truth.clone(), truth)
}

/// Median centroids fitted on the labeled rows of `train`.
pub fn fit_centroids(train: &EmbeddingDataset) -> Result<Vec<Vec<f64>>> {
    let labels = train.require_labels("nearest-centroid fit")?;
    labels
        .members()
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            if rows.is_empty() {
                return Err(Error::EmptyClass(j));
            }
            median_centroid(train.features().select(ndarray::Axis(0), rows).view())
        })
        .collect()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(v: ndarray::ArrayView1<'_, f32>, centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = euclidean(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Fraction of labeled test rows whose nearest training centroid matches
/// their label. Rows labeled -1 are skipped.
pub fn nearest_centroid_accuracy(train_kept: &EmbeddingDataset, test: &EmbeddingDataset) -> Result<f64> {
    let centroids = fit_centroids(train_kept)?;
    if test.dim() != train_kept.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_kept.dim(),
            found: test.dim(),
        });
    }
    let labels = test.require_labels("accuracy")?;
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in 0..test.n() {
        if let Some(c) = labels.class_of(i) {
            total += 1;
            if nearest(test.row(i), &centroids).0 == c {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidDataset("test set has no labeled rows".into()));
    }
    Ok(hit as f64 / total as f64)
}
