use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_RUN: &str = r#"{
  "dataset": { "kind": "separable", "n": 30, "d": 4, "margin": 0.1, "seed": 2 },
  "loss": { "model": "squared_hinge_l2", "lambda": 0.01 },
  "schemes": ["sgd", "rr", "ig"],
  "eta": 0.05,
  "epochs": 15,
  "seeds": [1, 2, 3]
}"#;

#[test]
fn gen_writes_dataset_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "gen.json",
        r#"{ "generator": "separable", "n": 12, "d": 3, "margin": 0.2, "seed": 4 }"#,
    );
    let out = tmp.path().join("data");
    let o = rrlab(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("data.csv")).unwrap();
    assert!(csv.starts_with("f0,f1,f2,label\n"));
    assert_eq!(csv.lines().count(), 13);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert!(meta["tau_actual"].as_f64().unwrap() >= 0.2);
}

#[test]
fn gen_rejects_unknown_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "gen.json", r#"{ "generator": "mnist", "n": 3 }"#);
    let o = rrlab(&["gen", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_outputs_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let o = rrlab(&["run", "--config", &cfg, "--out", dir.to_str().unwrap(), "--workers", workers]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut compared = 0;
    for entry in fs::read_dir(a.join("runs")).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".csv") {
            assert_eq!(fs::read(a.join("runs").join(&name)).unwrap(), fs::read(b.join("runs").join(&name)).unwrap());
            compared += 1;
        }
    }
    assert_eq!(compared, 9);
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("epoch,scheme,mean_loss,min_loss,max_loss\n"));
    let trace = fs::read_to_string(a.join("runs/rr_seed1.csv")).unwrap();
    assert!(trace.starts_with("epoch,loss,grad_norm_sq\n"));
    assert_eq!(trace.lines().count(), 17);
    assert!(a.join("summary.svg").exists());
}

#[test]
fn seed_base_changes_the_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&rrlab(&["run", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    assert_eq!(
        code(&rrlab(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed-base", "1000"])),
        0
    );
    // Effective seeds are offset, and files are named after them.
    assert!(!b.join("runs/sgd_seed1.csv").exists());
    assert_ne!(fs::read(a.join("runs/sgd_seed1.csv")).unwrap(), fs::read(b.join("runs/sgd_seed1001.csv")).unwrap());
}

#[test]
fn run_with_theorem_steps_writes_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.json",
        r#"{
  "dataset": { "kind": "overparam_ls", "n": 10, "d": 20, "seed": 3 },
  "loss": { "model": "least_squares" },
  "schemes": ["rr", "ig"],
  "eta": "theorem",
  "epochs": 30,
  "seeds": [1, 2, 3, 4]
}"#,
    );
    let out = tmp.path().join("o");
    let o = rrlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["rr", "ig"] {
        let ov = fs::read_to_string(out.join(format!("overlay_{s}.csv"))).unwrap();
        assert!(ov.starts_with("epoch,empirical_gap,std_err,bound\n"));
        assert!(out.join(format!("overlay_{s}.svg")).exists());
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("IG overlay: 0 epoch(s)"));
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", &SMALL_RUN.replace("\"eta\": 0.05", "\"eta\": 1000.0"));
    let o = rrlab(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&rrlab(&["run", "--config", missing.to_str().unwrap()])), 2);
    let typo = write(tmp.path(), "typo.json", &SMALL_RUN.replace("\"epochs\"", "\"epoch\""));
    assert_eq!(code(&rrlab(&["run", "--config", &typo])), 2);
    let empty = write(tmp.path(), "empty.json", &SMALL_RUN.replace("[1, 2, 3]", "[]"));
    assert_eq!(code(&rrlab(&["run", "--config", &empty])), 2);
}

#[test]
fn theory_table_and_winner() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{ "n": 800, "l": 1.0, "l_max": 1.0, "mu": 0.01, "rho": 10000 }"#,
    );
    let out = tmp.path().join("t");
    let o = rrlab(&["theory", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("theory.csv")).unwrap();
    assert!(csv.starts_with("scheme,condition,complexity,contraction,ball\n"));
    assert!(csv.contains("RR,SGC,"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("theory.json")).unwrap()).unwrap();
    let sgc = report["winners"].as_array().unwrap().iter().find(|w| w["condition"] == "SGC").unwrap();
    assert_eq!(sgc["winner"], "rr");
}

#[test]
fn theory_flags_inconsistent_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{ "n": 10, "l": 5.0, "l_max": 1.0, "mu": 0.1, "rho": 3 }"#);
    let o = rrlab(&["theory", "--config", &cfg]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_gradients_passes_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rrlab(&["verify", "--suite", "gradients", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 0);
    assert!(report["passed"].as_u64().unwrap() >= 10);
}

#[test]
fn oversized_step_is_a_precondition_violation() {
    let o = rrlab(&["verify", "--suite", "lemmas", "--eta-scale", "3"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("[PRECONDITION]"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn unknown_suite_is_rejected() {
    assert_eq!(code(&rrlab(&["verify", "--suite", "everything"])), 2);
}

#[test]
fn plot_reads_every_csv_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", SMALL_RUN);
    let out = tmp.path().join("o");
    assert_eq!(code(&rrlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let svg = tmp.path().join("plots/summary.svg");
    let o = rrlab(&["plot", out.join("summary.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 3);

    let traces = tmp.path().join("traces.svg");
    let o = rrlab(&[
        "plot",
        out.join("runs/rr_seed1.csv").to_str().unwrap(),
        out.join("runs/sgd_seed1.csv").to_str().unwrap(),
        "--out",
        traces.to_str().unwrap(),
        "--linear",
    ]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(&traces).unwrap().contains("sgd_seed1"));

    let bad = write(tmp.path(), "bad.csv", "a,b\n1,2\n");
    assert_eq!(code(&rrlab(&["plot", &bad, "--out", traces.to_str().unwrap()])), 2);
}
