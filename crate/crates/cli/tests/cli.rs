use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use densefilter_core::abstain::{filter_testset, AbstainCalibration, AmbiguityRule, Verdict};
use densefilter_core::io::{load_dataset, Format};
use serde_json::Value;

fn densefilter(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densefilter"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = densefilter(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--k", "5", "--per-class", "200", "--dim", "16", "--test-per-class", "60"];
const DENOISE: &[&str] = &["--eps", "3", "--min-pts", "20"];

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out-dir", name];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn run_denoise(dir: &Path, data: &str, out: &str, extra: &[&str]) -> String {
    let input = format!("{data}/train.emb1");
    let truth = format!("{data}/train_truth.json");
    let mut args = vec!["denoise", "--input", &input, "--ground-truth", &truth, "--out-dir", out];
    args.extend_from_slice(DENOISE);
    args.extend_from_slice(extra);
    ok(dir, &args)
}

#[test]
fn clean_input_removes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &[]);
    run_denoise(d, "s", "out", &[]);
    assert_eq!(fs::read_to_string(d.join("out/removed.txt")).unwrap(), "");
    assert_eq!(fs::read_to_string(d.join("out/kept.txt")).unwrap().lines().count(), 1000);
    let r = json(d.join("out/report.json"));
    assert!(r["classes"].as_array().unwrap().iter().all(|c| c["modality"] == "unimodal"));
}

#[test]
fn noisy_input_reports_high_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &["--noise-frac", "0.2", "--seed", "3"]);
    run_denoise(d, "s", "out", &[]);
    let r = json(d.join("out/report.json"));
    assert!(r["ground_truth"]["recall"].as_f64().unwrap() >= 0.85);
    assert!(r["ground_truth"]["class_recall"].as_array().unwrap().iter().all(Value::is_f64));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["command"], "denoise");
    assert_eq!(r["config"]["eps"], 3.0);
}

#[test]
fn rerun_from_embedded_config_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &["--noise-frac", "0.3"]);
    ok(d, &["synth", "--config", "s/train_truth.json", "--out-dir", "s2"]);
    for f in ["train.emb1", "train_truth.json", "test.emb1", "test_truth.json"] {
        assert_eq!(fs::read(d.join("s").join(f)).unwrap(), fs::read(d.join("s2").join(f)).unwrap(), "{f}");
    }
    run_denoise(d, "s", "a", &[]);
    ok(d, &["denoise", "--config", "a/report.json", "--out-dir", "b", "--threads", "1"]);
    for f in ["kept.txt", "removed.txt", "report.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &["--noise-frac", "0.25"]);
    run_denoise(d, "s", "one", &["--threads", "1"]);
    run_denoise(d, "s", "four", &["--threads", "4"]);
    assert_eq!(fs::read(d.join("one/report.json")).unwrap(), fs::read(d.join("four/report.json")).unwrap());
}

#[test]
fn calibration_and_abstention() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &["--noise-frac", "0.2", "--ood-count", "25"]);
    run_denoise(d, "s", "dn", &[]);
    ok(d, &["calibrate", "--train", "s/train.emb1", "--kept", "dn/kept.txt", "--eps", "3", "--min-pts", "20", "--eta", "0", "--out", "cal.json"]);
    let cal_json = json(d.join("cal.json"));
    assert_eq!(cal_json["calibration"]["eta"], 0.0);
    assert_eq!(cal_json["config"]["eta"], 0.0);

    // The calibration file reproduces the same decisions in-process.
    let cal: AbstainCalibration = serde_json::from_value(cal_json["calibration"].clone()).unwrap();
    let test = load_dataset(d.join("s/test.emb1"), Format::Binary).unwrap();
    let (decisions, _) = filter_testset(&test, &cal, AmbiguityRule::GapBelowEta).unwrap();

    ok(d, &["abstain", "--calibration", "cal.json", "--test", "s/test.emb1", "--out-dir", "ab"]);
    let csv = fs::read_to_string(d.join("ab/decisions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "index,verdict,predicted_class,d_min,second_d,gap");
    let truth = json(d.join("s/test_truth.json"));
    let ood: Vec<usize> = truth["ood_indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(ood.len(), 25);
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), i);
        let expected = match decisions[i].verdict {
            Verdict::Predict => "predict",
            Verdict::AbstainOod => "abstain_ood",
            Verdict::AbstainAmbiguous => "abstain_ambiguous",
        };
        assert_eq!(f[1], expected);
        if ood.contains(&i) {
            assert_eq!(f[1], "abstain_ood");
        }
    }

    ok(d, &["abstain", "--calibration", "cal.json", "--test", "s/test.emb1", "--out-dir", "inf", "--tau-override", "inf", "--eta", "0"]);
    let s = json(d.join("inf/summary.json"));
    assert_eq!(s["summary"]["coverage"], 1.0);
    assert_eq!(s["config"]["tau_override"], "inf");

    let mut last = f64::INFINITY;
    for eta in ["0", "0.5", "1", "2", "3", "4", "5"] {
        let out = format!("eta{eta}");
        ok(d, &["abstain", "--calibration", "cal.json", "--test", "s/test.emb1", "--out-dir", &out, "--eta", eta]);
        let c = json(d.join(&out).join("summary.json"))["summary"]["coverage"].as_f64().unwrap();
        assert!(c <= last);
        last = c;
    }

    ok(d, &["abstain", "--calibration", "cal.json", "--test", "s/test.emb1", "--out-dir", "tc", "--target-coverage", "0.7"]);
    let s = json(d.join("tc/summary.json"));
    assert!(s["summary"]["coverage"].as_f64().unwrap() <= 0.7);
    assert_eq!(s["eta_choice"]["eta"], s["eta"]);
}

#[test]
fn calibrate_without_denoise() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &[]);
    ok(d, &["calibrate", "--train", "s/train.emb1", "--no-denoise", "--eps", "3", "--min-pts", "20", "--out", "c/cal.json"]);
    assert_eq!(json(d.join("c/cal.json"))["calibration"]["tau"].as_array().unwrap().len(), 5);
}

#[test]
fn report_prints_table_and_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "s", &["--noise-frac", "0.2"]);
    run_denoise(d, "s", "dn", &[]);
    let table = ok(d, &["report", "--input", "dn/report.json", "--csv-dir", "csv"]);
    assert!(table.starts_with("class members"));
    assert_eq!(table.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 5);

    let report = json(d.join("dn/report.json"));
    let csv = fs::read_to_string(d.join("csv/histograms.csv")).unwrap();
    let mut sums = [0u64; 5];
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        sums[f[0].parse::<usize>().unwrap()] += f[4].parse::<u64>().unwrap();
    }
    for (j, c) in report["classes"].as_array().unwrap().iter().enumerate() {
        assert_eq!(sums[j], c["members"].as_u64().unwrap());
    }
    assert!(d.join("csv/kde.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| densefilter(d, args).status.code().unwrap();

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["denoise", "--eps", "abc"]), 1);
    assert_eq!(code(&["denoise", "--out-dir", "x"]), 1);

    let out = densefilter(d, &["denoise", "--input", "missing.emb1", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.emb1"));

    synth(d, "s", &[]);
    assert_eq!(code(&["denoise", "--input", "s/train.emb1", "--out-dir", "x", "--eps=-1"]), 1);
    assert_eq!(code(&["calibrate", "--train", "s/train.emb1", "--out", "c.json"]), 1);

    fs::write(d.join("bad_kept.txt"), "0\n5\n999999\n").unwrap();
    assert_eq!(code(&["calibrate", "--train", "s/train.emb1", "--kept", "bad_kept.txt", "--out", "c.json"]), 2);

    fs::write(d.join("tiny.csv"), "f0,label\n0.0,0\n0.1,0\n5.0,1\n").unwrap();
    assert_eq!(code(&["denoise", "--input", "tiny.csv", "--out-dir", "x"]), 3);

    fs::write(d.join("garbage.emb1"), b"NOPE").unwrap();
    assert_eq!(code(&["denoise", "--input", "garbage.emb1", "--out-dir", "x"]), 2);
}
