//! Test-time abstention.
//!
//! A calibration holds one centroid and one distance limit `tau` per class,
//! plus a global gap tolerance `eta`. A test vector is rejected as
//! out-of-distribution when it is farther than `tau` from its nearest
//! centroid, rejected as ambiguous when its two nearest centroids are almost
//! equally close, and otherwise assigned to the nearest class.

use ndarray::{Array1, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{core_cluster, dbscan, DbscanParams};
use crate::dataset::{normalize_row, EmbeddingDataset, SampleIndexSet};
use crate::denoise::DenoiseOutcome;
use crate::error::{Error, Result};
use crate::geometry::{euclidean, median_centroid, CentroidSet, ThresholdSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstainCalibration {
    pub centroids: CentroidSet,
    pub tau: Vec<f64>,
    pub eta: f64,
    /// Test vectors are scaled to unit norm before measuring distances.
    #[serde(default)]
    pub l2_normalize: bool,
}

impl AbstainCalibration {
    pub fn new(centroids: CentroidSet, tau: Vec<f64>, eta: f64) -> Result<Self> {
        let cal = AbstainCalibration {
            centroids,
            tau,
            eta,
            l2_normalize: false,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        self.centroids.validate()?;
        if self.tau.len() != self.centroids.k() {
            return Err(Error::InvalidParameter(format!(
                "{} tau values for {} centroids",
                self.tau.len(),
                self.centroids.k()
            )));
        }
        ThresholdSet {
            tau: self.tau.clone(),
            eta: self.eta,
        }
        .validate()
    }

    pub fn k(&self) -> usize {
        self.centroids.k()
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        AbstainCalibration {
            eta,
            ..self.clone()
        }
    }

    /// Replaces every tau with `tau`; `f64::INFINITY` disables the
    /// out-of-distribution rule.
    pub fn with_tau_override(&self, tau: f64) -> Self {
        AbstainCalibration {
            tau: vec![tau; self.k()],
            ..self.clone()
        }
    }
}

/// Which side of `eta` counts as ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityRule {
    /// Abstain when the two nearest centroids are closer together than eta.
    #[default]
    GapBelowEta,
    /// Abstain when the gap exceeds eta.
    GapAboveEta,
}

impl AmbiguityRule {
    fn is_ambiguous(self, gap: f64, eta: f64) -> bool {
        match self {
            AmbiguityRule::GapBelowEta => gap < eta,
            AmbiguityRule::GapAboveEta => gap > eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Predict,
    AbstainOod,
    AbstainAmbiguous,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Predict => "predict",
            Verdict::AbstainOod => "abstain_ood",
            Verdict::AbstainAmbiguous => "abstain_ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub sample_index: usize,
    pub verdict: Verdict,
    pub predicted_class: Option<usize>,
    pub d_min: f64,
    /// Distance to the second-nearest centroid; absent when k = 1.
    pub second_d: Option<f64>,
    /// The nearest and second-nearest class.
    pub nearest_two: (usize, Option<usize>),
}

impl FilterDecision {
    pub fn nearest_class(&self) -> usize {
        self.nearest_two.0
    }

    /// `second_d - d_min`, or infinity when there is no second class.
    pub fn gap(&self) -> f64 {
        self.second_d.map_or(f64::INFINITY, |s| s - self.d_min)
    }
}

/// Per-class limits from a denoising run: each class keeps the centroid of
/// its profile and takes `tau` as the largest distance among its kept rows.
pub fn calibrate(
    train: &EmbeddingDataset,
    outcome: &DenoiseOutcome,
    eta: f64,
) -> Result<AbstainCalibration> {
    let labels = train.require_labels("calibration")?;
    if outcome.profiles.len() != labels.k() {
        return Err(Error::InvalidParameter(format!(
            "denoise outcome has {} classes, training set has {}",
            outcome.profiles.len(),
            labels.k()
        )));
    }
    outcome.kept.check_bound(train.n())?;
    let mut tau = Vec::with_capacity(labels.k());
    for p in &outcome.profiles {
        let t = p
            .kept_distances()
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))))
            .ok_or(Error::EmptyClass(p.class_id))?;
        tau.push(t);
    }
    let centroids = CentroidSet::new(
        outcome.profiles.iter().map(|p| p.centroid.clone()).collect(),
        outcome.profiles.iter().map(|p| p.core_set.len()).collect(),
    )?;
    let mut cal = AbstainCalibration::new(centroids, tau, eta)?;
    cal.l2_normalize = outcome.config.l2_normalize;
    Ok(cal)
}

/// Calibration from a plain kept-row list. For each class the centroid is
/// the median of the largest DBSCAN cluster among its kept rows (all kept
/// rows if DBSCAN finds none) and `tau` is the largest kept distance.
pub fn calibrate_from_kept(
    train: &EmbeddingDataset,
    kept: &SampleIndexSet,
    dbscan_params: &DbscanParams,
    l2_normalize: bool,
    eta: f64,
) -> Result<AbstainCalibration> {
    dbscan_params.validate()?;
    let labels = train.require_labels("calibration")?;
    kept.check_bound(train.n())?;
    let normalized;
    let train = if l2_normalize {
        normalized = train.l2_normalized();
        &normalized
    } else {
        train
    };

    let mut rows = vec![Vec::new(); labels.k()];
    for i in kept.iter() {
        if let Some(j) = labels.class_of(i) {
            rows[j].push(i);
        }
    }
    let fitted: Vec<(Vec<f64>, usize, f64)> = rows
        .into_par_iter()
        .enumerate()
        .map(|(j, rows)| {
            if rows.is_empty() {
                return Err(Error::EmptyClass(j));
            }
            let points = train.features().select(Axis(0), &rows);
            let core = core_cluster(&dbscan(points.view(), dbscan_params));
            let centroid = if core.is_empty() {
                median_centroid(points.view())?
            } else {
                median_centroid(points.select(Axis(0), core.as_slice()).view())?
            };
            let tau = rows
                .iter()
                .map(|&i| euclidean(train.row(i), &centroid))
                .fold(0.0, f64::max);
            let count = if core.is_empty() { rows.len() } else { core.len() };
            Ok((centroid, count, tau))
        })
        .collect::<Result<_>>()?;

    let (centroids, rest): (Vec<_>, Vec<_>) = fitted.into_iter().map(|(c, n, t)| (c, (n, t))).unzip();
    let (counts, tau): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
    let mut cal = AbstainCalibration::new(CentroidSet::new(centroids, counts)?, tau, eta)?;
    cal.l2_normalize = l2_normalize;
    Ok(cal)
}

fn check_input(sample: ArrayView1<'_, f32>, cal: &AbstainCalibration) -> Result<()> {
    if sample.len() != cal.centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: cal.centroids.dim(),
            found: sample.len(),
        });
    }
    if let Some(t) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset(format!(
            "non-finite value at coordinate {t}"
        )));
    }
    Ok(())
}

/// Verdict for one vector. Distances ties go to the lower class id.
pub fn decide(
    sample: ArrayView1<'_, f32>,
    cal: &AbstainCalibration,
    rule: AmbiguityRule,
) -> Result<FilterDecision> {
    check_input(sample, cal)?;
    Ok(decide_unchecked(0, sample, cal, rule))
}

fn decide_unchecked(
    index: usize,
    sample: ArrayView1<'_, f32>,
    cal: &AbstainCalibration,
    rule: AmbiguityRule,
) -> FilterDecision {
    let normalized;
    let sample = if cal.l2_normalize {
        let mut owned: Array1<f32> = sample.to_owned();
        normalize_row(owned.view_mut());
        normalized = owned;
        normalized.view()
    } else {
        sample
    };

    let mut first = (usize::MAX, f64::INFINITY);
    let mut second: Option<(usize, f64)> = None;
    for (j, c) in cal.centroids.centroids().iter().enumerate() {
        let d = euclidean(sample, c);
        if first.0 == usize::MAX || d < first.1 {
            if first.0 != usize::MAX {
                second = Some(first);
            }
            first = (j, d);
        } else if second.is_none_or(|(_, s)| d < s) {
            second = Some((j, d));
        }
    }

    let (c_min, d_min) = first;
    let verdict = if d_min > cal.tau[c_min] {
        Verdict::AbstainOod
    } else if second.is_some_and(|(_, s)| rule.is_ambiguous(s - d_min, cal.eta)) {
        Verdict::AbstainAmbiguous
    } else {
        Verdict::Predict
    };
    FilterDecision {
        sample_index: index,
        verdict,
        predicted_class: (verdict == Verdict::Predict).then_some(c_min),
        d_min,
        second_d: second.map(|s| s.1),
        nearest_two: (c_min, second.map(|s| s.0)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub samples: usize,
    pub predicted: usize,
    pub abstained_ood: usize,
    pub abstained_ambiguous: usize,
    /// Fraction of samples that received a prediction.
    pub coverage: f64,
    /// Predicted samples that carry a label.
    pub labeled_predicted: Option<usize>,
    pub correct: Option<usize>,
    /// Accuracy over labeled predicted samples.
    pub selective_accuracy: Option<f64>,
}

/// Decisions for every row of `test`, in row order.
pub fn filter_testset(
    test: &EmbeddingDataset,
    cal: &AbstainCalibration,
    rule: AmbiguityRule,
) -> Result<(Vec<FilterDecision>, CoverageSummary)> {
    cal.validate()?;
    if test.dim() != cal.centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: cal.centroids.dim(),
            found: test.dim(),
        });
    }
    let decisions: Vec<FilterDecision> = (0..test.n())
        .into_par_iter()
        .map(|i| decide_unchecked(i, test.row(i), cal, rule))
        .collect();
    let summary = summarize(test, &decisions);
    Ok((decisions, summary))
}

pub fn summarize(test: &EmbeddingDataset, decisions: &[FilterDecision]) -> CoverageSummary {
    let count = |v: Verdict| decisions.iter().filter(|d| d.verdict == v).count();
    let predicted = count(Verdict::Predict);
    let (labeled_predicted, correct) = match test.labels() {
        Some(labels) => {
            let mut lp = 0;
            let mut ok = 0;
            for d in decisions {
                if let (Some(p), Some(c)) = (d.predicted_class, labels.class_of(d.sample_index)) {
                    lp += 1;
                    ok += usize::from(p == c);
                }
            }
            (Some(lp), Some(ok))
        }
        None => (None, None),
    };
    let selective_accuracy = match (labeled_predicted, correct) {
        (Some(lp), Some(ok)) if lp > 0 => Some(ok as f64 / lp as f64),
        _ => None,
    };
    CoverageSummary {
        samples: decisions.len(),
        predicted,
        abstained_ood: count(Verdict::AbstainOod),
        abstained_ambiguous: count(Verdict::AbstainAmbiguous),
        coverage: if decisions.is_empty() {
            0.0
        } else {
            predicted as f64 / decisions.len() as f64
        },
        labeled_predicted,
        correct,
        selective_accuracy,
    }
}

/// Decisions as CSV with header `index,verdict,predicted_class,d_min,second_d,gap`.
/// Absent values are empty fields.
pub fn decisions_csv(decisions: &[FilterDecision]) -> String {
    let mut out = String::from("index,verdict,predicted_class,d_min,second_d,gap\n");
    for d in decisions {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.sample_index,
            d.verdict.as_str(),
            d.predicted_class.map(|c| c.to_string()).unwrap_or_default(),
            d.d_min,
            opt(d.second_d),
            opt(d.second_d.map(|s| s - d.d_min)),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaChoice {
    pub eta: f64,
    pub coverage: f64,
    pub predicted: usize,
    /// Coverage with eta = 0, where only the distance limit can reject.
    pub max_coverage: f64,
}

/// Smallest eta whose coverage under [`AmbiguityRule::GapBelowEta`] is at
/// most `target`.
///
/// Coverage can only fall as eta grows, starting from the coverage left by
/// the distance-limit rejections at eta = 0. Targets above that starting
/// point, or below the coverage that no finite eta can reduce, are errors.
pub fn eta_for_coverage(
    test: &EmbeddingDataset,
    cal: &AbstainCalibration,
    target: f64,
) -> Result<EtaChoice> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target coverage must lie in (0, 1], got {target}"
        )));
    }
    let (base, _) = filter_testset(test, &cal.with_eta(0.0), AmbiguityRule::GapBelowEta)?;
    let n = base.len();
    let coverage_of = |c: usize| c as f64 / n as f64;

    let mut gaps: Vec<f64> = base
        .iter()
        .filter(|d| d.verdict == Verdict::Predict)
        .map(FilterDecision::gap)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let max_coverage = coverage_of(gaps.len());
    if target > max_coverage {
        return Err(Error::InvalidParameter(format!(
            "target coverage {target} exceeds the coverage {max_coverage} left after distance-limit rejections"
        )));
    }
    let unremovable = gaps.iter().filter(|g| g.is_infinite()).count();
    if target < coverage_of(unremovable) {
        return Err(Error::InvalidParameter(format!(
            "target coverage {target} is below {}, the coverage no eta can reduce",
            coverage_of(unremovable)
        )));
    }

    // Largest prediction count whose coverage stays within the target.
    let allowed = (0..=gaps.len())
        .rev()
        .find(|&c| coverage_of(c) <= target)
        .unwrap_or(0);
    let drop = gaps.len() - allowed;
    let eta = if drop == 0 { 0.0 } else { gaps[drop - 1].next_up() };
    let predicted = gaps.iter().filter(|&&g| g >= eta).count();
    Ok(EtaChoice {
        eta,
        coverage: coverage_of(predicted),
        predicted,
        max_coverage,
    })
}
