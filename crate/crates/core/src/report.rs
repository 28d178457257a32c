//! JSON run reports and their plain-text and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::denoise::{ClassProfile, DenoiseOutcome};
use crate::density::{sample_std, KdeCurve, Modality};
use crate::error::{Error, Result};
use crate::synth::GroundTruth;
use crate::threshold::histogram;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub samples: usize,
    pub labeled: usize,
    pub kept: usize,
    pub removed: usize,
    pub classes: usize,
    pub multimodal_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub members: usize,
    pub core_size: usize,
    pub cluster_sizes: Vec<usize>,
    pub dbscan_noise: usize,
    pub core_fallback: bool,
    pub passed_through: bool,
    pub kept: usize,
    pub removed: usize,
    pub centroid: Vec<f64>,
    pub distances: DistanceSummary,
    pub modality: Modality,
    pub peak_count: usize,
    pub peak_locations: Vec<f64>,
    pub threshold: Option<f64>,
    pub sigma_b: Option<f64>,
    /// Largest own distance among kept members.
    pub tau: f64,
    pub histogram: Histogram,
    pub kde: KdeCurve,
    pub warnings: Vec<String>,
}

/// Noise-detection quality against planted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScores {
    pub noisy: usize,
    pub removed_noisy: usize,
    /// Share of removed rows that were mislabeled; absent when nothing was removed.
    pub precision: Option<f64>,
    /// Share of mislabeled rows that were removed; absent when none were mislabeled.
    pub recall: Option<f64>,
    /// Share of kept rows that are mislabeled.
    pub residual_noise: f64,
    /// Recall among mislabeled rows carrying each observed label.
    pub class_recall: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub totals: Totals,
    pub classes: Vec<ClassReport>,
    pub ground_truth: Option<NoiseScores>,
    /// Wall-clock milliseconds per stage. Only filled on request, since it
    /// makes otherwise identical reports differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn score_noise(outcome: &DenoiseOutcome, truth: &GroundTruth) -> Result<NoiseScores> {
    let n_rows = outcome
        .kept
        .as_slice()
        .last()
        .into_iter()
        .chain(outcome.removed.as_slice().last())
        .max()
        .map_or(0, |&m| m + 1);
    if truth.n() < n_rows || truth.noise_mask.len() != truth.n() {
        return Err(Error::InvalidParameter(format!(
            "ground truth covers {} rows, outcome refers to row {}",
            truth.n(),
            n_rows.saturating_sub(1)
        )));
    }
    let noisy = truth.noisy();
    let removed_noisy = outcome.removed.intersection(&noisy).len();
    let kept_noisy = outcome.kept.intersection(&noisy).len();
    let class_recall = outcome
        .profiles
        .iter()
        .map(|p| {
            let class_noisy = p.members.intersection(&noisy);
            ratio(p.removed.intersection(&class_noisy).len(), class_noisy.len())
        })
        .collect();
    Ok(NoiseScores {
        noisy: noisy.len(),
        removed_noisy,
        precision: ratio(removed_noisy, outcome.removed.len()),
        recall: ratio(removed_noisy, noisy.len()),
        residual_noise: ratio(kept_noisy, outcome.kept.len()).unwrap_or(0.0),
        class_recall,
    })
}

fn class_report(p: &ClassProfile, bins: usize) -> ClassReport {
    let d = &p.own_distances;
    let n = d.len() as f64;
    let (counts, edges) = histogram(d, bins);
    ClassReport {
        class_id: p.class_id,
        members: p.members.len(),
        core_size: p.core_set.len(),
        cluster_sizes: p.cluster_sizes.clone(),
        dbscan_noise: p.dbscan_noise,
        core_fallback: p.core_fallback,
        passed_through: p.passed_through,
        kept: p.members.len() - p.removed.len(),
        removed: p.removed.len(),
        centroid: p.centroid.clone(),
        distances: DistanceSummary {
            min: d.iter().copied().fold(f64::INFINITY, f64::min),
            max: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: d.iter().sum::<f64>() / n,
            std: sample_std(d),
        },
        modality: p.modality.verdict,
        peak_count: p.modality.peak_count,
        peak_locations: p.modality.peak_locations.clone(),
        threshold: p.otsu.as_ref().map(|o| o.threshold),
        sigma_b: p.otsu.as_ref().map(|o| o.sigma_b),
        tau: p.kept_distances().fold(0.0, f64::max),
        histogram: Histogram { edges, counts },
        kde: p.kde.clone(),
        warnings: p.warnings.clone(),
    }
}

/// Report for a denoising run. `config` holds the outcome's own settings;
/// callers with a wider run configuration may replace it.
pub fn denoise_report(outcome: &DenoiseOutcome, truth: Option<&GroundTruth>) -> Result<PipelineReport> {
    let classes: Vec<ClassReport> = outcome
        .profiles
        .iter()
        .map(|p| class_report(p, outcome.config.otsu_bins))
        .collect();
    let labeled = outcome.kept.len() + outcome.removed.len();
    let samples = truth.map_or(labeled, GroundTruth::n);
    Ok(PipelineReport {
        schema_version: SCHEMA_VERSION,
        config: serde_json::to_value(&outcome.config)?,
        totals: Totals {
            samples,
            labeled,
            kept: outcome.kept.len(),
            removed: outcome.removed.len(),
            classes: classes.len(),
            multimodal_classes: classes
                .iter()
                .filter(|c| c.modality == Modality::Multimodal)
                .count(),
        },
        classes,
        ground_truth: truth.map(|t| score_noise(outcome, t)).transpose()?,
        timings_ms: None,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Fixed-width per-class summary for terminals.
pub fn render_table(report: &PipelineReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>7} {:>6} {:>7} {:>7} {:>10} {:>5} {:>10} {:>10} {:>8}",
        "class", "members", "core", "kept", "removed", "modality", "peaks", "threshold", "tau", "recall"
    );
    let recall = report.ground_truth.as_ref().map(|g| &g.class_recall);
    for c in &report.classes {
        let modality = match c.modality {
            Modality::Unimodal => "unimodal",
            Modality::Multimodal => "multimodal",
        };
        let r = recall.and_then(|r| r.get(c.class_id).copied().flatten());
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>6} {:>7} {:>7} {:>10} {:>5} {:>10} {:>10.4} {:>8}",
            c.class_id,
            c.members,
            c.core_size,
            c.kept,
            c.removed,
            modality,
            c.peak_count,
            opt(c.threshold, 4),
            c.tau,
            opt(r, 3),
        );
    }
    let t = &report.totals;
    let _ = writeln!(
        out,
        "total: {} samples, {} labeled, {} kept, {} removed, {} of {} classes multimodal",
        t.samples, t.labeled, t.kept, t.removed, t.multimodal_classes, t.classes
    );
    if let Some(g) = &report.ground_truth {
        let _ = writeln!(
            out,
            "noise: {} mislabeled, {} removed; precision {}, recall {}, residual {:.4}",
            g.noisy,
            g.removed_noisy,
            opt(g.precision, 4),
            opt(g.recall, 4),
            g.residual_noise
        );
    }
    for c in &report.classes {
        for w in &c.warnings {
            let _ = writeln!(out, "warning: class {}: {w}", c.class_id);
        }
    }
    out
}

/// Histogram rows `class_id,bin,lower,upper,count`.
pub fn histogram_csv(report: &PipelineReport) -> String {
    let mut out = String::from("class_id,bin,lower,upper,count\n");
    for c in &report.classes {
        let h = &c.histogram;
        for (b, count) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", c.class_id, b, h.edges[b], h.edges[b + 1], count);
        }
    }
    out
}

/// Density curves as rows `class_id,x,density`.
pub fn kde_csv(report: &PipelineReport) -> String {
    let mut out = String::from("class_id,x,density\n");
    for c in &report.classes {
        for (x, y) in c.kde.grid.iter().zip(&c.kde.pdf) {
            let _ = writeln!(out, "{},{},{}", c.class_id, x, y);
        }
    }
    out
}
