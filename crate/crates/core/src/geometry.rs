//! Median centroids, Euclidean distance tables and per-class distance limits.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, Labels, SampleIndexSet};
use crate::error::{Error, Result};

/// Coordinate-wise median of the rows. Even counts average the two middle
/// order statistics.
pub fn median_centroid(vectors: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    let m = vectors.nrows();
    if m == 0 {
        return Err(Error::InvalidParameter("median of zero vectors".into()));
    }
    let mut column = Vec::with_capacity(m);
    Ok(vectors
        .axis_iter(Axis(1))
        .map(|col| {
            column.clear();
            column.extend(col.iter().map(|&v| v as f64));
            median_in_place(&mut column)
        })
        .collect())
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    let mid = m / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if m % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// One centroid per class plus how many rows produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    centroids: Vec<Vec<f64>>,
    source_counts: Vec<usize>,
}

impl CentroidSet {
    pub fn new(centroids: Vec<Vec<f64>>, source_counts: Vec<usize>) -> Result<Self> {
        let set = CentroidSet {
            centroids,
            source_counts,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.is_empty() {
            return Err(Error::InvalidParameter("centroid set needs k >= 1".into()));
        }
        if self.centroids.len() != self.source_counts.len() {
            return Err(Error::InvalidParameter(
                "centroid and source count lengths differ".into(),
            ));
        }
        let dim = self.centroids[0].len();
        for (j, c) in self.centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("centroid {j} is not finite")));
            }
            if self.source_counts[j] == 0 {
                return Err(Error::EmptyClass(j));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j]
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn source_counts(&self) -> &[usize] {
        &self.source_counts
    }

    /// Every centroid multiplied by `a`.
    pub fn scaled(&self, a: f64) -> CentroidSet {
        CentroidSet {
            centroids: self
                .centroids
                .iter()
                .map(|c| c.iter().map(|v| v * a).collect())
                .collect(),
            source_counts: self.source_counts.clone(),
        }
    }
}

/// Median centroid of each class over its rows in `core_sets[j]`.
pub fn class_centroids(ds: &EmbeddingDataset, core_sets: &[SampleIndexSet]) -> Result<CentroidSet> {
    let k = ds.require_labels("class_centroids")?.k();
    if core_sets.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{} core sets for {k} classes",
            core_sets.len()
        )));
    }
    let mut centroids = Vec::with_capacity(k);
    for (j, set) in core_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::EmptyClass(j));
        }
        set.check_bound(ds.n())?;
        let rows = ds.features().select(Axis(0), set.as_slice());
        centroids.push(median_centroid(rows.view())?);
    }
    CentroidSet::new(centroids, core_sets.iter().map(SampleIndexSet::len).collect())
}

pub fn euclidean(v: ArrayView1<'_, f32>, c: &[f64]) -> f64 {
    v.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Distances from one vector to every centroid.
pub fn distances_to(v: ArrayView1<'_, f32>, cents: &CentroidSet) -> Result<Vec<f64>> {
    if v.len() != cents.dim() {
        return Err(Error::DimensionMismatch {
            expected: cents.dim(),
            found: v.len(),
        });
    }
    Ok(cents.centroids.iter().map(|c| euclidean(v, c)).collect())
}

/// `n x k` table of sample-to-centroid distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    values: Array2<f64>,
}

impl DistanceTable {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

pub fn distance_table(ds: &EmbeddingDataset, cents: &CentroidSet) -> Result<DistanceTable> {
    if ds.dim() != cents.dim() {
        return Err(Error::DimensionMismatch {
            expected: cents.dim(),
            found: ds.dim(),
        });
    }
    let k = cents.k();
    let rows: Vec<f64> = (0..ds.n())
        .into_par_iter()
        .flat_map_iter(|i| {
            let v = ds.row(i);
            cents.centroids.iter().map(move |c| euclidean(v, c))
        })
        .collect();
    let values = Array2::from_shape_vec((ds.n(), k), rows).expect("n*k entries");
    Ok(DistanceTable { values })
}

/// Per-class limit tau_j: the largest own-class distance among kept samples.
pub fn max_distance_thresholds(
    dists: &DistanceTable,
    labels: &Labels,
    kept: &SampleIndexSet,
) -> Result<Vec<f64>> {
    kept.check_bound(dists.n())?;
    let mut tau: Vec<Option<f64>> = vec![None; labels.k()];
    for i in kept.iter() {
        if let Some(j) = labels.class_of(i) {
            let d = dists.get(i, j);
            tau[j] = Some(tau[j].map_or(d, |t: f64| t.max(d)));
        }
    }
    tau.into_iter()
        .enumerate()
        .map(|(j, t)| t.ok_or(Error::EmptyClass(j)))
        .collect()
}

/// Thresholds for the abstention rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub tau: Vec<f64>,
    pub eta: f64,
}

impl ThresholdSet {
    pub fn validate(&self) -> Result<()> {
        if let Some(j) = self.tau.iter().position(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::InvalidParameter(format!("tau[{j}] must be >= 0")));
        }
        if self.eta.is_nan() || self.eta < 0.0 {
            return Err(Error::InvalidParameter(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }
}
