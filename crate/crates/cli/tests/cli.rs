use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn protoscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROTOSCOPE_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            stderr(out)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_toy(dir: &Path) {
    let out = protoscope(
        dir,
        &[
            "synth",
            "--kind",
            "radial",
            "--classes",
            "5",
            "--dim",
            "16",
            "--seed",
            "1",
            "--rows-per-class",
            "100",
            "--cone-spread",
            "0.5",
            "--out",
            "toy.pfv",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

const POINT_MASSES: &str = r#"{"kind":"discrete","dim":2,"classes":[
    {"points":[[1.0,0.0]],"probs":[1.0]},
    {"points":[[-1.0,0.0]],"probs":[1.0]}],"class_weights":[0.5,0.5]}"#;

const HAND: &str = r#"{"kind":"discrete","dim":1,"classes":[
    {"points":[[0.0]],"probs":[1.0]},
    {"points":[[-1.0],[1.0]],"probs":[0.5,0.5]}],"class_weights":[0.5,0.5]}"#;

#[test]
fn synth_writes_a_loadable_file_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let first = std::fs::read(dir.path().join("toy.pfv")).unwrap();
    let report = json(&protoscope(
        dir.path(),
        &[
            "synth",
            "--kind",
            "radial",
            "--classes",
            "5",
            "--dim",
            "16",
            "--seed",
            "1",
            "--rows-per-class",
            "100",
            "--cone-spread",
            "0.5",
            "--out",
            "toy.pfv",
        ],
    ));
    assert_eq!(report["rows"], 500);
    assert_eq!(report["dim"], 16);
    assert_eq!(std::fs::read(dir.path().join("toy.pfv")).unwrap(), first);
    assert!(dir.path().join("toy.json").exists());
}

#[test]
fn eval_output_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let args = [
        "eval",
        "--features",
        "toy.pfv",
        "--k-shot",
        "1",
        "--transform",
        "l2",
        "--episodes",
        "10",
        "--seed",
        "7",
    ];
    let a = protoscope(dir.path(), &args);
    let b = protoscope(dir.path(), &args);
    let c = Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(args)
        .current_dir(dir.path())
        .env("PROTOSCOPE_THREADS", "3")
        .output()
        .unwrap();
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let report = json(&a);
    assert_eq!(report["report"]["per_episode_accuracies"].as_array().unwrap().len(), 10);
    assert_eq!(report["manifest"]["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(report["manifest"].get("wall_clock_seconds").is_none());
}

#[test]
fn timing_flag_records_duration() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = protoscope(
        dir.path(),
        &[
            "eval",
            "--features",
            "toy.pfv",
            "--k-shot",
            "1",
            "--episodes",
            "5",
            "--timing",
        ],
    );
    assert!(json(&out)["manifest"]["wall_clock_seconds"].is_f64());
}

#[test]
fn eval_csv_is_a_one_line_summary() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = protoscope(
        dir.path(),
        &[
            "eval",
            "--features",
            "toy.pfv",
            "--k-shot",
            "5",
            "--transform",
            "lda",
            "--lambda",
            "0.01",
            "--episodes",
            "20",
            "--format",
            "csv",
        ],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("lda:0.01,5,5,20,"), "{}", lines[1]);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = protoscope(
        dir.path(),
        &[
            "eval",
            "--features",
            "toy.pfv",
            "--k-shot",
            "1",
            "--transform",
            "var-norm",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("var-norm requires k-shot >= 2"));

    let out = protoscope(
        dir.path(),
        &["eval", "--features", "toy.pfv", "--k-shot", "1", "--transform", "est"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("base-class statistics"), "{}", stderr(&out));

    let out = protoscope(
        dir.path(),
        &["eval", "--features", "toy.pfv", "--k-shot", "1", "--transform", "pca"],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = protoscope(dir.path(), &["eval", "--features", "toy.pfv"]);
    assert_eq!(out.status.code(), Some(2), "missing --k-shot is a usage error");
}

#[test]
fn one_shot_est_runs_with_base_features() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = protoscope(
        dir.path(),
        &[
            "synth",
            "--kind",
            "radial",
            "--classes",
            "6",
            "--dim",
            "16",
            "--seed",
            "9",
            "--rows-per-class",
            "30",
            "--out",
            "base.pfv",
        ],
    );
    assert!(out.status.success());
    let out = protoscope(
        dir.path(),
        &[
            "eval",
            "--features",
            "toy.pfv",
            "--base-features",
            "base.pfv",
            "--k-shot",
            "1",
            "--transform",
            "est:8",
            "--episodes",
            "20",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json(&out);
    assert_eq!(report["report"]["transform"]["fitted_dim"], 8);
    assert_eq!(report["manifest"]["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = protoscope(dir.path(), &["eval", "--features", "missing.pfv", "--k-shot", "1"]);
    assert_eq!(out.status.code(), Some(3));

    let out = protoscope(
        dir.path(),
        &[
            "synth",
            "--kind",
            "gaussian",
            "--classes",
            "1",
            "--dim",
            "3",
            "--rows-per-class",
            "20",
            "--out",
            "one.csv",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = protoscope(dir.path(), &["eval", "--features", "one.csv", "--k-shot", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("classes"));
}

#[test]
fn invalid_synth_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = protoscope(
        dir.path(),
        &[
            "synth",
            "--kind",
            "radial",
            "--classes",
            "3",
            "--dim",
            "4",
            "--sigma-par",
            "-1",
            "--rows-per-class",
            "5",
            "--out",
            "x.pfv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_on_point_masses() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pm.json"), POINT_MASSES).unwrap();
    let base = ["bound", "--ensemble", "pm.json", "--k-shot", "1", "--pair-mode", "iid"];

    let one = json(&protoscope(
        dir.path(),
        &[&base[..], &["--theorem", "1", "--normalize-fig2"]].concat(),
    ));
    let t = &one["terms"];
    assert_eq!(
        [
            &t["term_norm_variance"],
            &t["term_trace_variance"],
            &t["term_within"],
            &t["term_mean_dist"]
        ],
        [0.0, 0.0, 4.0, 8.0]
    );
    assert!((one["bound"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-6);
    assert_eq!(one["term_table"]["within"], 4.0);
    assert_eq!(one["term_table_rescaled"]["within"], 1.0);

    let two = json(&protoscope(dir.path(), &[&base[..], &["--theorem", "2"]].concat()));
    assert_eq!(two["bound"], 0.5);

    let three = json(&protoscope(
        dir.path(),
        &[&base[..], &["--theorem", "3", "--n-way", "2"]].concat(),
    ));
    assert_eq!(three["bound"], one["bound"]);

    let out = protoscope(dir.path(), &[&base[..], &["--theorem", "3"]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_bound_is_undefined_with_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("z.csv"), "label,f0\n0,0\n0,0\n1,0\n1,0\n").unwrap();
    let out = protoscope(dir.path(), &["bound", "--features", "z.csv", "--k-shot", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json(&out)["bound"], "undefined");
}

#[test]
fn verify_passes_on_hand_fixture_and_shared_covariance_gaussians() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("hand.json"), HAND).unwrap();
    let out = protoscope(
        dir.path(),
        &[
            "verify",
            "--ensemble",
            "hand.json",
            "--k-shot",
            "1",
            "--trials",
            "20000",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["verdict"], "PASS");
    assert!((v["exact"]["value"].as_f64().unwrap() - 0.5625).abs() < 1e-15);
    assert!(stderr(&out).starts_with("PASS"));

    let out = protoscope(
        dir.path(),
        &[
            "synth",
            "--kind",
            "gaussian",
            "--classes",
            "4",
            "--dim",
            "3",
            "--shared-covariance",
            "--rows-per-class",
            "5",
            "--out",
            "g.pfv",
        ],
    );
    assert!(out.status.success());
    let out = protoscope(
        dir.path(),
        &[
            "verify",
            "--ensemble",
            "g.json",
            "--k-shot",
            "2",
            "--trials",
            "20000",
            "--theorem",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(json(&out)["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn verify_n_way() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    let out = protoscope(
        dir.path(),
        &[
            "verify",
            "--ensemble",
            "toy.json",
            "--k-shot",
            "1",
            "--trials",
            "5000",
            "--theorem",
            "3",
            "--n-way",
            "5",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&out)["pair_mode"], "distinct");
}

#[test]
fn verify_rejects_bad_specs_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"kind\":\"radial\"").unwrap();
    let out = protoscope(dir.path(), &["verify", "--ensemble", "bad.json", "--k-shot", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eigen_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    synth_toy(dir.path());
    for centered in [false, true] {
        let mut args = vec!["eigen", "--features", "toy.pfv", "--out", "h.csv", "--records", "r.csv"];
        if centered {
            args.push("--centered");
        }
        let out = protoscope(dir.path(), &args);
        assert!(out.status.success(), "{}", stderr(&out));
        let v = json(&out);
        assert_eq!(v["analysis"]["centered"], centered);
        let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
        assert_eq!(csv.lines().count(), 41);
        let total: u64 = csv
            .lines()
            .skip(1)
            .filter(|l| l.starts_with("within"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 5);
        assert_eq!(
            std::fs::read_to_string(dir.path().join("r.csv"))
                .unwrap()
                .lines()
                .count(),
            6
        );
    }
    let v = json(&protoscope(
        dir.path(),
        &["eigen", "--features", "toy.pfv", "--out", "h.csv"],
    ));
    assert!(v["mean_within"].as_f64().unwrap() > 0.9);
}

#[test]
fn bad_thread_cap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(["bound", "--features", "x.csv", "--k-shot", "1"])
        .current_dir(dir.path())
        .env("PROTOSCOPE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
