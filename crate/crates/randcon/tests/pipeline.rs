//! End-to-end checks of the command-line binary: exit-code contract, the
//! simulate -> estimate -> cluster -> evaluate chain, the recorded-series
//! pipeline, and reproducible report generation.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn randcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randcon"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = randcon(args);
    assert!(
        out.status.success(),
        "randcon {:?} failed with {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    randcon(args).status.code().expect("no exit code")
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_failures() {
    let help = run_ok(&["--help"]);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["simulate", "estimate", "cluster", "evaluate", "sweep", "kernel-study", "realdata", "report"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }

    assert_eq!(exit_code(&[]), 1, "no arguments is a usage error");
    assert_eq!(exit_code(&["--bogus-flag"]), 1, "unknown flag is a usage error");
    assert_eq!(exit_code(&["sweep", "--preset", "nope", "-o", "/tmp/x"]), 1, "unknown preset");
    let dir = tempfile::tempdir().unwrap();
    let missing_plan = dir.path().join("missing.toml").display().to_string();
    let plan_fail = randcon(&["sweep", "--plan", &missing_plan, "-o", "/tmp/x"]);
    assert_eq!(plan_fail.status.code(), Some(1), "missing plan file is caught before compute");
    assert!(
        String::from_utf8_lossy(&plan_fail.stderr).contains("missing.toml"),
        "message must name the missing path"
    );
    let missing = dir.path().join("missing.csv").display().to_string();
    let out_fcs = dir.path().join("x.fcs").display().to_string();
    assert_eq!(
        exit_code(&["estimate", "-i", &missing, "-o", &out_fcs]),
        2,
        "missing input is a runtime failure"
    );
    assert_eq!(exit_code(&["estimate", "-o", &out_fcs]), 1, "estimate requires an input");

    let presets = run_ok(&["sweep", "--preset", "list", "-o", "/tmp/unused"]);
    let listing = String::from_utf8_lossy(&presets.stdout);
    assert!(listing.contains("desk-smoke") && listing.contains("paper-noise"));
}

#[test]
fn simulate_accepts_a_preset_base() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("preset-ds");
    run_ok(&["simulate", "--preset", "desk-smoke", "-o", ds.to_str().unwrap()]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["n_rois"], 20);
    assert_eq!(manifest["spec"]["n_states"], 3);
    assert_eq!(
        exit_code(&["simulate", "--preset", "desk-smoke", "--rois", "30", "-o", "/tmp/x"]),
        1,
        "preset conflicts with individual spec flags"
    );
}

#[test]
fn simulate_estimate_cluster_evaluate_chain_recovers_states() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("dataset");
    run_ok(&[
        "--seed", "7",
        "simulate",
        "-o", ds.to_str().unwrap(),
        "--states", "3",
        "--rois", "20",
        "--timepoints", "150",
        "--noise", "0.3",
        "--groups", "1",
        "--subjects-per-group", "3",
    ]);
    assert!(ds.join("manifest.json").is_file());
    assert!(ds.join("subject_0000.csv").is_file());
    assert!(ds.join("labels_0002.csv").is_file());

    let mut estimates = Vec::new();
    for i in 0..3 {
        let input = ds.join(format!("subject_000{i}.csv"));
        let output = dir.path().join(format!("subject_{i}.fcs"));
        // The input may be positional or flagged; use both forms.
        let mut args = vec!["--seed", "11", "estimate"];
        if i % 2 == 0 {
            args.push(input.to_str().unwrap());
        } else {
            args.extend(["-i", input.to_str().unwrap()]);
        }
        args.extend([
            "-o", output.to_str().unwrap(),
            "--method", "randcon",
            "--width", "3",
            "--kernels", "24",
        ]);
        run_ok(&args);
        estimates.push(output);
    }

    let cl = dir.path().join("clusters");
    let estimate_strs: Vec<String> =
        estimates.iter().map(|p| p.display().to_string()).collect();
    let mut args = vec!["--seed", "13", "cluster"];
    args.extend(estimate_strs.iter().map(String::as_str));
    args.extend([
        "-o", cl.to_str().unwrap(),
        "--states", "3",
        "--restarts", "30",
        "--iters", "15",
    ]);
    run_ok(&args);
    for name in ["clustering.json", "centroids.csv", "assignments.csv"] {
        assert!(cl.join(name).is_file(), "{name} missing");
    }

    let eval_path = dir.path().join("evaluation.json");
    run_ok(&[
        "evaluate",
        "--dataset", ds.to_str().unwrap(),
        "--clusters", cl.to_str().unwrap(),
        "-o", eval_path.to_str().unwrap(),
    ]);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eval_path).unwrap()).unwrap();
    assert_eq!(eval["n_subjects"], 3);
    let metrics = eval["metrics"].as_object().unwrap();
    for name in ["ari", "overlap-ratio", "state-mse", "state-cosine", "sojourn-kl"] {
        let v = metrics[name].as_f64().unwrap_or(f64::NAN);
        assert!(v.is_finite(), "{name} is not finite: {v}");
    }
    // Low noise and a correct state count should recover most frames.
    assert!(
        metrics["ari"].as_f64().unwrap() > 0.5,
        "chain ARI {} unexpectedly low",
        metrics["ari"]
    );
}

#[test]
fn realdata_pipeline_runs_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("dataset");
    run_ok(&[
        "--seed", "21",
        "simulate",
        "-o", ds.to_str().unwrap(),
        "--states", "3",
        "--rois", "20",
        "--timepoints", "150",
        "--noise", "0.4",
        "--groups", "1",
        "--subjects-per-group", "4",
    ]);
    let rd = dir.path().join("realdata");
    let covariate = dir.path().join("covariate.csv");
    std::fs::write(
        &covariate,
        "subject,group\nsubject_0000,control\nsubject_0001,control\nsubject_0002,case\nsubject_0003,case\n",
    )
    .unwrap();
    let subjects: Vec<String> = (0..4)
        .map(|i| ds.join(format!("subject_000{i}.csv")).display().to_string())
        .collect();
    let mut args = vec!["--seed", "3", "realdata"];
    args.extend(subjects.iter().map(String::as_str));
    args.extend([
        "-o", rd.to_str().unwrap(),
        "--states", "3",
        "--kernels", "32",
        "--restarts", "10",
        "--iters", "10",
        "--covariate", covariate.to_str().unwrap(),
    ]);
    run_ok(&args);

    let outcome: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rd.join("outcome.json")).unwrap()).unwrap();
    assert_eq!(outcome["selected_k"], 3);
    assert_eq!(outcome["n_states_written"], 3);
    assert_eq!(outcome["frames_per_subject"].as_array().unwrap().len(), 4);
    assert!(!outcome["comparison"].as_array().unwrap().is_empty());
    assert!(rd.join("state_0.csv").is_file() && rd.join("state_2.csv").is_file());
    let metrics_csv = std::fs::read_to_string(rd.join("subject_metrics.csv")).unwrap();
    assert_eq!(metrics_csv.lines().count(), 1 + 4 * 3, "header plus one row per subject-state");
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(entry.path()).unwrap());
        }
    }
    out
}

#[test]
fn sweep_and_report_are_reproducible_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_dir = dir.path().join("sweep");
    run_ok(&["sweep", "--preset", "desk-smoke", "-o", sweep_dir.to_str().unwrap()]);
    let results = sweep_dir.join("results.csv");
    assert!(results.is_file());
    assert!(sweep_dir.join("manifest.json").is_file());

    let rep_a = dir.path().join("report_a");
    let rep_b = dir.path().join("report_b");
    for rep in [&rep_a, &rep_b] {
        run_ok(&[
            "report",
            "--results", results.to_str().unwrap(),
            "-o", rep.to_str().unwrap(),
            "--svg",
        ]);
    }
    assert!(rep_a.join("fig_ari.csv").is_file());
    assert!(rep_a.join("fig_ari.svg").is_file());
    let a = tree_bytes(&rep_a);
    let b = tree_bytes(&rep_b);
    assert!(!a.is_empty());
    assert_eq!(a, b, "report output differs between identical invocations");
}
