//! Core dataset types: a feature matrix with optional class labels, and
//! sorted sets of row indices into it.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for rows that carry no class (e.g. in-the-wild test rows).
pub const UNLABELED: i32 = -1;

/// Per-row class ids plus the size of the class universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    values: Vec<i32>,
    k: usize,
}

impl Labels {
    /// Validates that every value is `UNLABELED` or in `[0, k)` and that each
    /// class id in `[0, k)` occurs at least once.
    pub fn new(values: Vec<i32>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDataset("class count k must be >= 1".into()));
        }
        if k > i32::MAX as usize {
            return Err(Error::InvalidDataset(format!("class count {k} too large")));
        }
        let mut seen = vec![false; k];
        for (row, &l) in values.iter().enumerate() {
            if l == UNLABELED {
                continue;
            }
            if l < 0 || l as usize >= k {
                return Err(Error::InvalidDataset(format!(
                    "label {l} at row {row} outside [0, {k})"
                )));
            }
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Labels { values, k })
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Class of row `i`, or `None` for unlabeled rows.
    pub fn class_of(&self, i: usize) -> Option<usize> {
        let l = self.values[i];
        (l >= 0).then_some(l as usize)
    }

    /// Row indices of each class, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.values.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }

    /// All labeled row indices.
    pub fn labeled(&self) -> SampleIndexSet {
        SampleIndexSet(
            self.values
                .iter()
                .enumerate()
                .filter(|(_, &l)| l >= 0)
                .map(|(i, _)| i)
                .collect(),
        )
    }
}

/// An `n x dim` matrix of finite `f32` features with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    features: Array2<f32>,
    labels: Option<Labels>,
}

impl EmbeddingDataset {
    pub fn new(features: Array2<f32>, labels: Option<Labels>) -> Result<Self> {
        let (n, dim) = features.dim();
        if n == 0 || dim == 0 {
            return Err(Error::InvalidDataset(format!(
                "empty feature matrix ({n} x {dim})"
            )));
        }
        if let Some((idx, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column {}",
                idx.0, idx.1
            )));
        }
        if let Some(l) = &labels {
            if l.values.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {n} rows",
                    l.values.len()
                )));
            }
        }
        Ok(EmbeddingDataset {
            features: features.as_standard_layout().into_owned(),
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>, labels: Option<(Vec<i32>, usize)>) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: rows[bad].len(),
            });
        }
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((n, dim), flat)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let labels = labels.map(|(v, k)| Labels::new(v, k)).transpose()?;
        Self::new(features, labels)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Labels, or an error naming `what` needed them.
    pub fn require_labels(&self, what: &str) -> Result<&Labels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::InvalidDataset(format!("{what} requires a labeled dataset")))
    }

    pub fn k(&self) -> Option<usize> {
        self.labels.as_ref().map(Labels::k)
    }

    /// Copy of the dataset with every row scaled to unit Euclidean norm.
    /// Zero rows are left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut features = self.features.clone();
        for row in features.axis_iter_mut(Axis(0)) {
            normalize_row(row);
        }
        EmbeddingDataset {
            features,
            labels: self.labels.clone(),
        }
    }
}

/// Scales `row` to unit Euclidean norm; zero rows are left untouched.
pub fn normalize_row(mut row: ArrayViewMut1<'_, f32>) {
    let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.mapv_inplace(|v| (v as f64 / norm) as f32);
    }
}

/// Rows of `ds` selected by `keep`, in index order. The class universe is
/// preserved; a class that would lose every sample is an error.
pub fn subset(ds: &EmbeddingDataset, keep: &SampleIndexSet) -> Result<EmbeddingDataset> {
    if keep.is_empty() {
        return Err(Error::InvalidIndexSet("keep set is empty".into()));
    }
    keep.check_bound(ds.n())?;
    let features = ds.features.select(Axis(0), keep.as_slice());
    let labels = match &ds.labels {
        None => None,
        Some(l) => {
            let values: Vec<i32> = keep.iter().map(|i| l.values[i]).collect();
            let mut seen = vec![false; l.k];
            for &v in &values {
                if v >= 0 {
                    seen[v as usize] = true;
                }
            }
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::EmptyClass(c));
            }
            Some(Labels { values, k: l.k })
        }
    };
    Ok(EmbeddingDataset { features, labels })
}

/// Strictly increasing list of row positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SampleIndexSet(Vec<usize>);

impl SampleIndexSet {
    pub fn new() -> Self {
        SampleIndexSet(Vec::new())
    }

    /// Accepts an already strictly increasing list.
    pub fn from_sorted(indices: Vec<usize>) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidIndexSet(format!(
                "indices not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(SampleIndexSet(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        SampleIndexSet(indices)
    }

    /// `0..n`.
    pub fn all(n: usize) -> Self {
        SampleIndexSet((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn check_bound(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(Error::InvalidIndexSet(format!(
                "index {last} out of range for {n} samples"
            ))),
            _ => Ok(()),
        }
    }

    pub fn union(&self, other: &SampleIndexSet) -> SampleIndexSet {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => {
                    if x <= y {
                        a.next();
                        if x == y {
                            b.next();
                        }
                        out.push(x);
                    } else {
                        b.next();
                        out.push(y);
                    }
                }
                (Some(&&x), None) => {
                    a.next();
                    out.push(x);
                }
                (None, Some(&&y)) => {
                    b.next();
                    out.push(y);
                }
                (None, None) => break,
            }
        }
        SampleIndexSet(out)
    }

    pub fn difference(&self, other: &SampleIndexSet) -> SampleIndexSet {
        SampleIndexSet(self.iter().filter(|&i| !other.contains(i)).collect())
    }

    pub fn intersection(&self, other: &SampleIndexSet) -> SampleIndexSet {
        SampleIndexSet(self.iter().filter(|&i| other.contains(i)).collect())
    }

    /// Maps positions of `inner` (relative to the rows selected by `self`)
    /// back to positions in the original dataset.
    pub fn compose(&self, inner: &SampleIndexSet) -> Result<SampleIndexSet> {
        inner.check_bound(self.len())?;
        Ok(SampleIndexSet(inner.iter().map(|i| self.0[i]).collect()))
    }
}

impl TryFrom<Vec<usize>> for SampleIndexSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        SampleIndexSet::from_sorted(v)
    }
}

impl From<SampleIndexSet> for Vec<usize> {
    fn from(s: SampleIndexSet) -> Self {
        s.0
    }
}

impl FromIterator<usize> for SampleIndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SampleIndexSet::from_unsorted(iter.into_iter().collect())
    }
}
