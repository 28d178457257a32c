//! Resolved run configurations.
//!
//! Each subcommand starts from its defaults, applies an optional JSON config
//! file, then applies command-line flags. The resolved struct is what gets
//! embedded in every JSON artifact, so feeding an artifact back through
//! `--config` repeats the run. Output locations are left out of the
//! embedded copy; a rerun names its own.

use std::path::{Path, PathBuf};

use densefilter_core::abstain::AmbiguityRule;
use densefilter_core::clustering::DbscanParams;
use densefilter_core::denoise::DenoiseConfig;
use densefilter_core::synth::{NoiseMode, SynthConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseRun {
    pub input: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub eps: f64,
    pub min_pts: usize,
    pub kde_h: f64,
    pub kde_grid: usize,
    pub min_rel_height: f64,
    pub otsu_bins: usize,
    pub min_class_size: Option<usize>,
    pub l2_normalize: bool,
    pub timings: bool,
}

impl Default for DenoiseRun {
    fn default() -> Self {
        let d = DenoiseConfig::new(DbscanParams {
            eps: 0.8,
            min_pts: 300,
        });
        DenoiseRun {
            input: None,
            out_dir: None,
            ground_truth: None,
            eps: d.dbscan.eps,
            min_pts: d.dbscan.min_pts,
            kde_h: d.kde_bandwidth,
            kde_grid: d.kde_grid_size,
            min_rel_height: d.min_rel_height,
            otsu_bins: d.otsu_bins,
            min_class_size: None,
            l2_normalize: false,
            timings: false,
        }
    }
}

impl DenoiseRun {
    pub fn denoise_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            dbscan: DbscanParams {
                eps: self.eps,
                min_pts: self.min_pts,
            },
            kde_bandwidth: self.kde_h,
            kde_grid_size: self.kde_grid,
            min_rel_height: self.min_rel_height,
            otsu_bins: self.otsu_bins,
            min_class_size: self.min_class_size,
            l2_normalize: self.l2_normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateRun {
    pub train: Option<PathBuf>,
    pub kept: Option<PathBuf>,
    pub no_denoise: bool,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub eps: f64,
    pub min_pts: usize,
    pub l2_normalize: bool,
    pub eta: f64,
}

impl Default for CalibrateRun {
    fn default() -> Self {
        let d = DenoiseRun::default();
        CalibrateRun {
            train: None,
            kept: None,
            no_denoise: false,
            out: None,
            eps: d.eps,
            min_pts: d.min_pts,
            l2_normalize: false,
            eta: 0.0,
        }
    }
}

/// Side of the gap tolerance that counts as ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguitySign {
    /// Abstain when the gap is below eta.
    #[default]
    Below,
    /// Abstain when the gap is above eta.
    Above,
}

impl From<AmbiguitySign> for AmbiguityRule {
    fn from(s: AmbiguitySign) -> Self {
        match s {
            AmbiguitySign::Below => AmbiguityRule::GapBelowEta,
            AmbiguitySign::Above => AmbiguityRule::GapAboveEta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstainRun {
    pub calibration: Option<PathBuf>,
    pub test: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    /// Replaces the calibrated eta.
    pub eta: Option<f64>,
    pub target_coverage: Option<f64>,
    /// Replaces every calibrated tau; may be `"inf"`.
    #[serde(with = "float_or_text")]
    pub tau_override: Option<f64>,
    pub ambiguity_sign: AmbiguitySign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub k: usize,
    pub per_class: usize,
    pub dim: usize,
    pub class_sep: f64,
    pub within_std: f64,
    pub noise_frac: f64,
    pub ood_count: usize,
    pub seed: u64,
    pub noise_mode: NoiseMode,
    pub anisotropic: bool,
    /// Rows per class in the held-out set; 0 skips it.
    pub test_per_class: usize,
}

impl Default for SynthRun {
    fn default() -> Self {
        let b = SynthConfig::benchmark(1);
        SynthRun {
            out_dir: None,
            k: b.k,
            per_class: b.per_class,
            dim: b.dim,
            class_sep: b.class_sep,
            within_std: b.within_std,
            noise_frac: b.noise_frac,
            ood_count: b.ood_count,
            seed: b.seed,
            noise_mode: b.noise_mode,
            anisotropic: b.anisotropic,
            test_per_class: 0,
        }
    }
}

impl SynthRun {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            k: self.k,
            per_class: self.per_class,
            dim: self.dim,
            class_sep: self.class_sep,
            within_std: self.within_std,
            noise_frac: self.noise_frac,
            ood_count: self.ood_count,
            seed: self.seed,
            noise_mode: self.noise_mode,
            anisotropic: self.anisotropic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportRun {
    pub input: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub csv_dir: Option<PathBuf>,
}

/// Reads a config file. Accepts either a bare config object or any artifact
/// with an embedded `config` object.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| {
        let e = std::io::Error::new(e.kind(), format!("{}: {e}", path.display()));
        CliError::Core(densefilter_core::Error::Io(e))
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config").filter(|v| v.is_object()) {
        value = inner.take();
    }
    if let Some(obj) = value.as_object_mut() {
        if let Some(found) = obj.remove("command") {
            if found != command {
                return Err(CliError::Usage(format!(
                    "config {} is for command {found}, not \"{command}\"",
                    path.display()
                )));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// The resolved config with a `command` tag, as embedded in artifacts.
pub fn snapshot<T: Serialize>(command: &str, cfg: &T) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.insert("command".into(), Value::String(command.into()));
    }
    v
}

pub fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (flag or config file)")))
}

mod float_or_text {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => Repr::Number(*x).serialize(s),
            Some(x) => Repr::Text(x.to_string()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(D::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_override_survives_json() {
        let run = AbstainRun {
            tau_override: Some(f64::INFINITY),
            ..Default::default()
        };
        let text = serde_json::to_string(&run).unwrap();
        assert!(text.contains("\"tau_override\":\"inf\""));
        let back: AbstainRun = serde_json::from_str(&text).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn snapshot_round_trips_through_load() {
        let dir = tempfile::tempdir().unwrap();
        let run = DenoiseRun {
            eps: 1.5,
            min_class_size: Some(7),
            ..Default::default()
        };
        let path = dir.path().join("r.json");
        let artifact = serde_json::json!({"schema_version": 1, "config": snapshot("denoise", &run)});
        std::fs::write(&path, artifact.to_string()).unwrap();
        let back: DenoiseRun = load(Some(&path), "denoise").unwrap();
        assert_eq!(back, run);
        assert!(matches!(load::<SynthRun>(Some(&path), "synth"), Err(CliError::Usage(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epss": 1.0}"#).unwrap();
        assert!(matches!(load::<DenoiseRun>(Some(&path), "denoise"), Err(CliError::Usage(_))));
    }
}
