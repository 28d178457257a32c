//! Training-set denoising.
//!
//! For every class: DBSCAN on the class's rows, median centroid of the
//! largest cluster, distances from *all* class members to that centroid, a
//! KDE peak count on those distances, and, when more than one peak shows up,
//! an Otsu cut whose far side is removed.

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{core_cluster, dbscan, DbscanParams};
use crate::dataset::{EmbeddingDataset, SampleIndexSet};
use crate::density::{self, count_peaks, kde, KdeCurve, Modality, ModalityVerdict};
use crate::error::{Error, Result};
use crate::geometry::{euclidean, median_centroid};
use crate::threshold::{self, otsu_threshold, split_by_threshold, OtsuResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub dbscan: DbscanParams,
    #[serde(default = "default_bandwidth")]
    pub kde_bandwidth: f64,
    #[serde(default = "default_grid")]
    pub kde_grid_size: usize,
    #[serde(default = "default_min_rel_height")]
    pub min_rel_height: f64,
    #[serde(default = "default_bins")]
    pub otsu_bins: usize,
    /// Classes smaller than this are passed through unfiltered. Defaults to
    /// `2 * min_pts`.
    #[serde(default)]
    pub min_class_size: Option<usize>,
    #[serde(default)]
    pub l2_normalize: bool,
}

fn default_bandwidth() -> f64 {
    density::DEFAULT_BANDWIDTH
}
fn default_grid() -> usize {
    density::DEFAULT_GRID_SIZE
}
fn default_min_rel_height() -> f64 {
    density::DEFAULT_MIN_REL_HEIGHT
}
fn default_bins() -> usize {
    threshold::DEFAULT_BINS
}

impl DenoiseConfig {
    pub fn new(dbscan: DbscanParams) -> Self {
        DenoiseConfig {
            dbscan,
            kde_bandwidth: default_bandwidth(),
            kde_grid_size: default_grid(),
            min_rel_height: default_min_rel_height(),
            otsu_bins: default_bins(),
            min_class_size: None,
            l2_normalize: false,
        }
    }

    pub fn effective_min_class_size(&self) -> usize {
        self.min_class_size
            .unwrap_or(2 * self.dbscan.min_pts)
            .max(2)
    }

    pub fn validate(&self) -> Result<()> {
        self.dbscan.validate()?;
        if !(self.kde_bandwidth.is_finite() && self.kde_bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kde bandwidth must be > 0, got {}",
                self.kde_bandwidth
            )));
        }
        if self.kde_grid_size < density::MIN_GRID_SIZE {
            return Err(Error::InvalidParameter(format!(
                "kde grid size must be >= {}",
                density::MIN_GRID_SIZE
            )));
        }
        if !(0.0..1.0).contains(&self.min_rel_height) {
            return Err(Error::InvalidParameter(
                "min_rel_height must lie in [0, 1)".into(),
            ));
        }
        if self.otsu_bins < 2 {
            return Err(Error::InvalidParameter("otsu bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// Everything computed for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_id: usize,
    /// Global row indices labeled with this class.
    pub members: SampleIndexSet,
    /// Global row indices of the largest DBSCAN cluster (or all members on
    /// fallback).
    pub core_set: SampleIndexSet,
    pub cluster_sizes: Vec<usize>,
    pub dbscan_noise: usize,
    pub core_fallback: bool,
    pub passed_through: bool,
    pub centroid: Vec<f64>,
    /// Distance of each member (in `members` order) to `centroid`.
    pub own_distances: Vec<f64>,
    pub kde: KdeCurve,
    pub modality: ModalityVerdict,
    pub otsu: Option<OtsuResult>,
    pub removed: SampleIndexSet,
    /// Largest own distance over kept members; set by calibration.
    pub tau: Option<f64>,
    pub warnings: Vec<String>,
}

impl ClassProfile {
    pub fn kept(&self) -> SampleIndexSet {
        self.members.difference(&self.removed)
    }

    /// Own distances of members that were not removed.
    pub fn kept_distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.members
            .iter()
            .zip(&self.own_distances)
            .filter(|(i, _)| !self.removed.contains(*i))
            .map(|(_, &d)| d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseOutcome {
    pub kept: SampleIndexSet,
    pub removed: SampleIndexSet,
    pub profiles: Vec<ClassProfile>,
    pub config: DenoiseConfig,
}

impl DenoiseOutcome {
    pub fn warnings(&self) -> impl Iterator<Item = (usize, &str)> {
        self.profiles
            .iter()
            .flat_map(|p| p.warnings.iter().map(move |w| (p.class_id, w.as_str())))
    }
}

pub fn denoise(ds: &EmbeddingDataset, config: &DenoiseConfig) -> Result<DenoiseOutcome> {
    config.validate()?;
    let labels = ds.require_labels("denoise")?;
    let normalized;
    let ds = if config.l2_normalize {
        normalized = ds.l2_normalized();
        &normalized
    } else {
        ds
    };

    let members = labels.members();
    for (class, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                size: m.len(),
                minimum: 2,
            });
        }
    }

    let profiles: Vec<ClassProfile> = members
        .into_par_iter()
        .enumerate()
        .map(|(class, rows)| profile_class(ds, class, rows, config))
        .collect::<Result<_>>()?;

    let mut removed = SampleIndexSet::new();
    for p in &profiles {
        if p.removed.len() == p.members.len() {
            return Err(Error::EmptyClass(p.class_id));
        }
        removed = removed.union(&p.removed);
    }
    let kept = labels.labeled().difference(&removed);
    Ok(DenoiseOutcome {
        kept,
        removed,
        profiles,
        config: config.clone(),
    })
}

fn profile_class(
    ds: &EmbeddingDataset,
    class_id: usize,
    rows: Vec<usize>,
    config: &DenoiseConfig,
) -> Result<ClassProfile> {
    let members = SampleIndexSet::from_sorted(rows)?;
    let points = ds.features().select(Axis(0), members.as_slice());
    let mut warnings = Vec::new();

    let passed_through = members.len() < config.effective_min_class_size();
    let (core_set, cluster_sizes, dbscan_noise, core_fallback) = if passed_through {
        warnings.push(format!(
            "class has {} samples, below the minimum of {}; passed through unfiltered",
            members.len(),
            config.effective_min_class_size()
        ));
        (members.clone(), Vec::new(), 0, true)
    } else {
        let assign = dbscan(points.view(), &config.dbscan);
        let core = core_cluster(&assign);
        let fallback = core.is_empty();
        if fallback {
            warnings.push(
                "DBSCAN marked every sample as noise; using the whole class as core cluster"
                    .to_string(),
            );
        }
        let core = if fallback {
            members.clone()
        } else {
            members.compose(&core)?
        };
        (core, assign.cluster_sizes().to_vec(), assign.n_noise(), fallback)
    };

    let core_rows = ds.features().select(Axis(0), core_set.as_slice());
    let centroid = median_centroid(core_rows.view())?;
    let own_distances: Vec<f64> = members
        .iter()
        .map(|i| euclidean(ds.row(i), &centroid))
        .collect();

    let curve = kde(&own_distances, config.kde_bandwidth, config.kde_grid_size)?;
    let modality = count_peaks(&curve, config.min_rel_height);

    let mut otsu = None;
    let mut removed = SampleIndexSet::new();
    if modality.verdict == Modality::Multimodal && !passed_through {
        if modality.peak_count > 2 {
            warnings.push(format!(
                "{} density peaks; applied a single two-class cut",
                modality.peak_count
            ));
        }
        match otsu_threshold(&own_distances, config.otsu_bins) {
            Ok(r) => {
                let (_, above) = split_by_threshold(&own_distances, r.threshold);
                removed = members.compose(&above)?;
                otsu = Some(r);
            }
            Err(e) => warnings.push(format!("no threshold applied: {e}")),
        }
    }

    Ok(ClassProfile {
        class_id,
        members,
        core_set,
        cluster_sizes,
        dbscan_noise,
        core_fallback,
        passed_through,
        centroid,
        own_distances,
        kde: curve,
        modality,
        otsu,
        removed,
        tau: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn two_blobs(noise_rows: &[(f32, f32, i32)]) -> EmbeddingDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let base = if c == 0 { 0.0 } else { 20.0 };
            for i in 0..40 {
                let a = i as f32 * 0.157;
                rows.push(vec![base + 0.3 * a.cos() * (1.0 + (i % 5) as f32 * 0.1), 0.3 * a.sin()]);
                labels.push(c);
            }
        }
        for &(x, y, l) in noise_rows {
            rows.push(vec![x, y]);
            labels.push(l);
        }
        EmbeddingDataset::from_rows(rows, Some((labels, 2))).unwrap()
    }

    fn cfg() -> DenoiseConfig {
        let mut c = DenoiseConfig::new(DbscanParams::new(0.5, 5).unwrap());
        c.kde_bandwidth = 0.3;
        c
    }

    #[test]
    fn clean_blobs_remove_nothing() {
        let ds = two_blobs(&[]);
        let out = denoise(&ds, &cfg()).unwrap();
        assert!(out.removed.is_empty());
        assert_eq!(out.kept.len(), 80);
        for p in &out.profiles {
            assert_eq!(p.modality.verdict, Modality::Unimodal);
            assert!(p.otsu.is_none());
            assert!(!p.core_fallback);
        }
    }

    #[test]
    fn mislabeled_rows_are_removed() {
        let noise: Vec<(f32, f32, i32)> = (0..8).map(|i| (20.0 + 0.05 * i as f32, 0.0, 0)).collect();
        let ds = two_blobs(&noise);
        let out = denoise(&ds, &cfg()).unwrap();
        assert_eq!(out.removed.as_slice(), &(80..88).collect::<Vec<_>>()[..]);
        let p0 = &out.profiles[0];
        assert_eq!(p0.modality.verdict, Modality::Multimodal);
        assert!(p0.otsu.is_some());
        // partition is exact
        assert_eq!(out.kept.union(&out.removed), SampleIndexSet::all(88));
        assert!(out.kept.intersection(&out.removed).is_empty());
    }

    #[test]
    fn all_noise_dbscan_falls_back_to_whole_class() {
        let ds = two_blobs(&[]);
        let mut c = cfg();
        c.dbscan = DbscanParams::new(1e-6, 5).unwrap();
        let out = denoise(&ds, &c).unwrap();
        for p in &out.profiles {
            assert!(p.core_fallback);
            assert_eq!(p.core_set, p.members);
            assert!(!p.warnings.is_empty());
        }
    }

    #[test]
    fn small_classes() {
        let ds = EmbeddingDataset::from_rows(
            vec![vec![0.0], vec![1.0], vec![5.0]],
            Some((vec![0, 0, 1], 2)),
        )
        .unwrap();
        assert!(matches!(
            denoise(&ds, &cfg()),
            Err(Error::ClassTooSmall { class: 1, size: 1, .. })
        ));

        let ds = EmbeddingDataset::from_rows(
            vec![vec![0.0], vec![1.0], vec![5.0], vec![5.5]],
            Some((vec![0, 0, 1, 1], 2)),
        )
        .unwrap();
        let out = denoise(&ds, &cfg()).unwrap();
        assert!(out.profiles.iter().all(|p| p.passed_through && p.removed.is_empty()));
    }

    #[test]
    fn unlabeled_rows_are_ignored() {
        let mut rows: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32 * 0.01]).collect();
        rows.push(vec![100.0]);
        let mut labels = vec![0; 12];
        labels.push(-1);
        let ds = EmbeddingDataset::from_rows(rows, Some((labels, 1))).unwrap();
        let out = denoise(&ds, &DenoiseConfig::new(DbscanParams::new(0.5, 3).unwrap())).unwrap();
        assert_eq!(out.kept.len() + out.removed.len(), 12);
        assert!(!out.kept.contains(12) && !out.removed.contains(12));
    }

    #[test]
    fn requires_labels() {
        let ds = EmbeddingDataset::from_rows(vec![vec![0.0], vec![1.0]], None).unwrap();
        assert!(denoise(&ds, &cfg()).is_err());
    }

    #[test]
    fn synthetic_clean_and_noisy() {
        let mut sc = SynthConfig::benchmark(1);
        sc.per_class = 300;
        let c = crate::synth::benchmark_denoise_config();
        let (clean, _) = generate(&sc).unwrap();
        let out = denoise(&clean, &c).unwrap();
        assert!(out.removed.is_empty());
        assert!(out.profiles.iter().all(|p| p.modality.verdict == Modality::Unimodal));

        sc.noise_frac = 0.2;
        let (noisy, truth) = generate(&sc).unwrap();
        let out = denoise(&noisy, &c).unwrap();
        let noisy_set: SampleIndexSet = truth.noise_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let hit = out.removed.intersection(&noisy_set).len();
        assert!(hit as f64 >= 0.85 * noisy_set.len() as f64);
        assert!(out.removed.len() as f64 <= 1.5 * noisy_set.len() as f64);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let mut sc = SynthConfig::benchmark(4);
        sc.per_class = 120;
        sc.noise_frac = 0.3;
        let (ds, _) = generate(&sc).unwrap();
        let mut c = crate::synth::benchmark_denoise_config();
        c.dbscan.min_pts = 8;
        let par = denoise(&ds, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ser = pool.install(|| denoise(&ds, &c)).unwrap();
        assert_eq!(par, ser);
    }
}
