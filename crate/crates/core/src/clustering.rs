//! DBSCAN over the rows of a feature matrix, and core-cluster selection.
//!
//! A point is *core* when at least `min_pts` points (itself included) lie
//! within `eps` of it. Clusters grow from core points in ascending index
//! order; a border point reachable from several clusters joins the one
//! created first. Neighborhoods are found by exact pairwise search.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleIndexSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        let p = DbscanParams { eps, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::InvalidParameter("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-point cluster membership. `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    cluster_of: Vec<Option<usize>>,
    cluster_sizes: Vec<usize>,
    is_core: Vec<bool>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self) -> &[Option<usize>] {
        &self.cluster_of
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn is_core(&self) -> &[bool] {
        &self.is_core
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn n_noise(&self) -> usize {
        self.cluster_of.iter().filter(|c| c.is_none()).count()
    }

    pub fn members(&self, cluster: usize) -> SampleIndexSet {
        self.cluster_of
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Some(cluster))
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Neighbor lists (including the point itself), ascending.
fn neighborhoods(points: ArrayView2<'_, f32>, eps: f64) -> Vec<Vec<usize>> {
    let points = points.as_standard_layout();
    let n = points.nrows();
    let dim = points.ncols();
    let flat = points.as_slice().expect("standard layout");
    let eps2 = eps * eps;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &flat[i * dim..(i + 1) * dim];
            (0..n)
                .filter(|&j| sq_dist(a, &flat[j * dim..(j + 1) * dim]) <= eps2)
                .collect()
        })
        .collect()
}

pub fn dbscan(points: ArrayView2<'_, f32>, params: &DbscanParams) -> ClusterAssignment {
    let n = points.nrows();
    let neighbors = neighborhoods(points, params.eps);
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut cluster_of: Vec<Option<usize>> = vec![None; n];
    let mut cluster_sizes = Vec::new();
    let mut queue = Vec::new();
    for seed in 0..n {
        if !is_core[seed] || cluster_of[seed].is_some() {
            continue;
        }
        let id = cluster_sizes.len();
        let mut size = 1;
        cluster_of[seed] = Some(id);
        queue.clear();
        queue.push(seed);
        let mut head = 0;
        while head < queue.len() {
            let p = queue[head];
            head += 1;
            for &q in &neighbors[p] {
                if cluster_of[q].is_none() {
                    cluster_of[q] = Some(id);
                    size += 1;
                    if is_core[q] {
                        queue.push(q);
                    }
                }
            }
        }
        cluster_sizes.push(size);
    }

    ClusterAssignment {
        cluster_of,
        cluster_sizes,
        is_core,
    }
}

/// Members of the largest cluster (lowest id on ties); empty when every
/// point is noise.
pub fn core_cluster(assign: &ClusterAssignment) -> SampleIndexSet {
    let best = assign
        .cluster_sizes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (id, &size)| match best {
            Some((_, s)) if s >= size => best,
            _ => Some((id, size)),
        });
    match best {
        Some((id, _)) => assign.members(id),
        None => SampleIndexSet::new(),
    }
}
