//! Density-based filtering of feature embeddings.
//!
//! Two pipelines share one set of primitives:
//!
//! * [`denoise`] flags likely mislabeled training samples. Each class is
//!   clustered with DBSCAN, the largest cluster supplies a coordinate-wise
//!   median centroid, and the distribution of member-to-centroid distances is
//!   tested for multimodality with a Gaussian KDE. Multimodal classes are cut
//!   with Otsu's threshold and the far side is removed.
//! * [`abstain`] calibrates per-class distance limits on the cleaned training
//!   set and, at inference, refuses to predict on samples that are either
//!   outside every class (farther than that class's largest training distance)
//!   or nearly equidistant from their two closest centroids.
//!
//! [`synth`] provides a seeded Gaussian-mixture generator with controlled
//! label noise and a nearest-centroid evaluator used for desk-scale checks.

pub mod abstain;
pub mod clustering;
pub mod dataset;
pub mod denoise;
pub mod density;
mod error;
pub mod geometry;
pub mod io;
pub mod report;
pub mod synth;
pub mod threshold;

pub use crate::dataset::{EmbeddingDataset, Labels, SampleIndexSet, UNLABELED};
pub use crate::error::{Error, ErrorKind, Result};
