use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use densefilter_core::abstain::{
    calibrate_from_kept, decisions_csv, eta_for_coverage, filter_testset, AbstainCalibration,
    AmbiguityRule, CoverageSummary, EtaChoice,
};
use densefilter_core::clustering::DbscanParams;
use densefilter_core::denoise::denoise;
use densefilter_core::io::{load_dataset, read_indices, read_json, save_dataset, write_indices, write_json, Format};
use densefilter_core::report::{denoise_report, histogram_csv, kde_csv, render_table, PipelineReport, SCHEMA_VERSION};
use densefilter_core::synth::{generate, generate_test, GroundTruth};
use densefilter_core::{EmbeddingDataset, Error};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{self, require, AbstainRun, CalibrateRun, DenoiseRun, ReportRun, SynthRun};
use crate::{AbstainArgs, CalibrateArgs, CliError, Command, DenoiseArgs, ReportArgs, SynthArgs};

/// Copies every flag that was given onto the config.
macro_rules! overlay {
    ($cfg:ident, $args:ident; $($f:ident),*; opt $($o:ident),*) => {
        $( if let Some(v) = $args.$f.clone() { $cfg.$f = v; } )*
        $( if let Some(v) = $args.$o.clone() { $cfg.$o = Some(v); } )*
    };
}

/// Ground-truth sidecar written next to synthetic datasets.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub config: Value,
    #[serde(flatten)]
    pub truth: GroundTruth,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub config: Value,
    pub calibration: AbstainCalibration,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub config: Value,
    pub eta: f64,
    pub ambiguity_rule: AmbiguityRule,
    pub eta_choice: Option<EtaChoice>,
    pub summary: CoverageSummary,
}

pub(crate) fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Denoise(a) => cmd_denoise(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Abstain(a) => cmd_abstain(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load(path: &Path) -> Result<EmbeddingDataset, CliError> {
    Ok(load_dataset(path, Format::from_path(path))?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io(e)))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Core(Error::Io(e)))
}

fn cmd_denoise(args: DenoiseArgs) -> Result<(), CliError> {
    let mut run: DenoiseRun = config::load(args.config.as_deref(), "denoise")?;
    overlay!(run, args; eps, min_pts, kde_h, kde_grid, min_rel_height, otsu_bins, l2_normalize, timings;
        opt input, out_dir, ground_truth, min_class_size);
    let input = require(&run.input, "input")?;
    let out_dir = require(&run.out_dir, "out-dir")?;

    let start = Instant::now();
    let ds = load(input)?;
    let truth = match &run.ground_truth {
        Some(p) => Some(read_json::<TruthFile>(p)?.truth),
        None => None,
    };
    let loaded = start.elapsed();
    let outcome = denoise(&ds, &run.denoise_config())?;
    let filtered = start.elapsed();

    let mut report = denoise_report(&outcome, truth.as_ref())?;
    report.config = config::snapshot("denoise", &run);
    if run.timings {
        report.timings_ms = Some(BTreeMap::from([
            ("load".to_string(), loaded.as_secs_f64() * 1e3),
            ("denoise".to_string(), (filtered - loaded).as_secs_f64() * 1e3),
        ]));
    }
    create_dir(out_dir)?;
    write_indices(&outcome.kept, out_dir.join("kept.txt"))?;
    write_indices(&outcome.removed, out_dir.join("removed.txt"))?;
    write_json(&report, out_dir.join("report.json"))?;

    for (class, w) in outcome.warnings() {
        eprintln!("warning: class {class}: {w}");
    }
    println!(
        "kept {} of {} labeled rows, removed {}",
        outcome.kept.len(),
        outcome.kept.len() + outcome.removed.len(),
        outcome.removed.len()
    );
    if let Some(g) = &report.ground_truth {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "noise precision {}, recall {}, residual {:.4}",
            show(g.precision),
            show(g.recall),
            g.residual_noise
        );
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let mut run: CalibrateRun = config::load(args.config.as_deref(), "calibrate")?;
    overlay!(run, args; no_denoise, eps, min_pts, l2_normalize, eta; opt train, kept, out);
    let train_path = require(&run.train, "train")?;
    let out = require(&run.out, "out")?;
    if run.no_denoise == run.kept.is_some() {
        return Err(CliError::Usage(
            "give exactly one of --kept or --no-denoise".into(),
        ));
    }

    let train = load(train_path)?;
    let kept = match &run.kept {
        Some(p) => read_indices(p)?,
        None => train.require_labels("calibration")?.labeled(),
    };
    let dbscan = DbscanParams::new(run.eps, run.min_pts)?;
    let cal = calibrate_from_kept(&train, &kept, &dbscan, run.l2_normalize, run.eta)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(
        &CalibrationFile {
            schema_version: SCHEMA_VERSION,
            config: config::snapshot("calibrate", &run),
            calibration: cal.clone(),
        },
        out,
    )?;
    println!(
        "calibrated {} classes on {} rows; tau range [{:.4}, {:.4}], eta {}",
        cal.k(),
        kept.len(),
        cal.tau.iter().copied().fold(f64::INFINITY, f64::min),
        cal.tau.iter().copied().fold(0.0, f64::max),
        cal.eta
    );
    Ok(())
}

fn cmd_abstain(args: AbstainArgs) -> Result<(), CliError> {
    let mut run: AbstainRun = config::load(args.config.as_deref(), "abstain")?;
    overlay!(run, args; ; opt calibration, test, out_dir, eta, target_coverage, tau_override);
    if let Some(s) = args.ambiguity_sign {
        run.ambiguity_sign = s;
    }
    let cal_path = require(&run.calibration, "calibration")?;
    let test_path = require(&run.test, "test")?;
    let out_dir = require(&run.out_dir, "out-dir")?;
    if run.eta.is_some() && run.target_coverage.is_some() {
        return Err(CliError::Usage("--eta and --target-coverage are exclusive".into()));
    }
    let rule: AmbiguityRule = run.ambiguity_sign.into();
    if run.target_coverage.is_some() && rule != AmbiguityRule::GapBelowEta {
        return Err(CliError::Usage(
            "--target-coverage needs --ambiguity-sign below".into(),
        ));
    }

    let file: CalibrationFile = read_json(cal_path)?;
    let mut cal = file.calibration;
    cal.validate()?;
    if let Some(t) = run.tau_override {
        cal = cal.with_tau_override(t);
    }
    if let Some(eta) = run.eta {
        cal = cal.with_eta(eta);
    }
    let test = load(test_path)?;
    let eta_choice = match run.target_coverage {
        Some(target) => {
            let choice = eta_for_coverage(&test, &cal, target)?;
            cal = cal.with_eta(choice.eta);
            Some(choice)
        }
        None => None,
    };
    let (decisions, summary) = filter_testset(&test, &cal, rule)?;

    create_dir(out_dir)?;
    write_text(&out_dir.join("decisions.csv"), &decisions_csv(&decisions))?;
    write_json(
        &SummaryFile {
            schema_version: SCHEMA_VERSION,
            config: config::snapshot("abstain", &run),
            eta: cal.eta,
            ambiguity_rule: rule,
            eta_choice,
            summary: summary.clone(),
        },
        out_dir.join("summary.json"),
    )?;
    println!(
        "coverage {:.4} ({} predicted, {} out-of-distribution, {} ambiguous) at eta {}",
        summary.coverage, summary.predicted, summary.abstained_ood, summary.abstained_ambiguous, cal.eta
    );
    if let Some(acc) = summary.selective_accuracy {
        println!("selective accuracy {acc:.4}");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut run: SynthRun = config::load(args.config.as_deref(), "synth")?;
    overlay!(run, args; k, per_class, dim, class_sep, within_std, noise_frac, ood_count, seed,
        noise_mode, anisotropic, test_per_class; opt out_dir);
    let out_dir = require(&run.out_dir, "out-dir")?;
    let cfg = run.synth_config();
    let snapshot = config::snapshot("synth", &run);

    let (train, truth) = generate(&cfg)?;
    let test = if run.test_per_class > 0 {
        Some(generate_test(&cfg, run.test_per_class)?)
    } else {
        None
    };
    create_dir(out_dir)?;
    let write = |name: &str, ds: &EmbeddingDataset, truth: GroundTruth| -> Result<(), CliError> {
        save_dataset(ds, out_dir.join(format!("{name}.emb1")), Format::Binary)?;
        write_json(
            &TruthFile {
                schema_version: SCHEMA_VERSION,
                config: snapshot.clone(),
                truth,
            },
            out_dir.join(format!("{name}_truth.json")),
        )?;
        Ok(())
    };
    let noisy = truth.noisy().len();
    write("train", &train, truth)?;
    println!("train: {} rows, {} mislabeled", train.n(), noisy);
    if let Some((ds, t)) = test {
        let n = ds.n();
        write("test", &ds, t)?;
        println!("test: {n} rows");
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut run: ReportRun = config::load(args.config.as_deref(), "report")?;
    overlay!(run, args; ; opt input, csv_dir);
    let input = require(&run.input, "input")?;
    let report: PipelineReport = read_json(input)?;
    print!("{}", render_table(&report));
    if let Some(dir) = &run.csv_dir {
        create_dir(dir)?;
        write_text(&dir.join("histograms.csv"), &histogram_csv(&report))?;
        write_text(&dir.join("kde.csv"), &kde_csv(&report))?;
    }
    Ok(())
}
