use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn jobs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("jobs")
}

fn run(args: &[&str], job: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbdelay"))
        .args(args)
        .arg("--job")
        .arg(job)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn bundled(name: &str) -> Value {
    let text = std::fs::read_to_string(jobs_dir().join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_job(dir: &Path, job: &Value) -> PathBuf {
    let path = dir.join("job.json");
    std::fs::write(&path, serde_json::to_string_pretty(job).unwrap()).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn every_bundled_job_loads() {
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(jobs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let out = run(&["equilibria"], &path, tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn disease_free_scenario_ends_near_the_disease_free_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate"], &jobs_dir().join("paper_dfe.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(tmp.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 50_001);
    let last = rows.last().unwrap();
    assert_eq!(last[0], 100.0);
    // infected classes have died out; R still drains at rate omega_r + mu
    for c in [2, 3, 4] {
        assert!(last[c] < 1e-3 * 30_000.0, "column {c}: {}", last[c]);
    }
    let script = std::fs::read_to_string(tmp.path().join("trajectory.gp")).unwrap();
    assert!(script.contains("'trajectory.csv'"));
    let manifest = read_json(tmp.path().join("manifest.json"));
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn zero_horizon_gives_a_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut job = bundled("paper_dfe");
    job["grid"] = serde_json::json!({"t_f": 0.0, "n_steps": 0});
    let out = run(&["simulate"], &write_job(tmp.path(), &job), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(tmp.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][..6], &[0.0, 19_000.0, 9_000.0, 1_250.0, 500.0, 250.0]);
}

#[test]
fn long_uncontrolled_run_reaches_the_endemic_point() {
    let tmp = tempfile::tempdir().unwrap();
    let mut job = bundled("endemic_beta100");
    job["grid"] = serde_json::json!({"t_f": 2000.0, "n_steps": 200_000});
    let out = run(&["simulate"], &write_job(tmp.path(), &job), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let summary = read_json(tmp.path().join("summary.json"));
    let d = summary["distance_to_endemic"].as_f64().unwrap();
    assert!(d < 1e-3, "distance {d}");
}

#[test]
fn equilibria_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["equilibria"], &jobs_dir().join("endemic_beta100.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(tmp.path().join("equilibria.json"));
    assert!(rel(r["r0"]["value"].as_f64().unwrap(), 2.202067) < 1e-6);
    let ee = &r["endemic"]["state"];
    for (key, want) in [("s", 8407.668384), ("l1", 36.111397), ("i", 11.006448), ("l2", 402.155827)] {
        assert!(rel(ee[key].as_f64().unwrap(), want) < 1e-6, "{key}");
    }
    assert_eq!(csv_rows(tmp.path().join("equilibria.csv")).len(), 2);

    let mut job = bundled("endemic_beta100");
    job["params"]["beta"] = 0.0.into();
    let out = run(&["equilibria"], &write_job(tmp.path(), &job), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(tmp.path().join("equilibria.json"));
    assert_eq!(r["r0"]["value"].as_f64(), Some(0.0));
    assert!(r["endemic"].is_null());
}

#[test]
fn stability_at_the_reference_delay() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["stability"], &jobs_dir().join("remark_beta40.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(tmp.path().join("stability.json"));
    let kind = &r["disease_free"]["verdict"]["kind"];
    assert_eq!(kind["kind"], "stable_at_given_delay");
    let roots: Vec<f64> = kind["real_roots"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(roots.len(), 5);
    for (got, want) in roots.iter().zip([-23.4817, -18.1066, -1.0243, -0.3209, -0.0115]) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
    assert!(r["endemic"].is_null());
}

#[test]
fn bundled_optimal_control_jobs() {
    for (name, want) in [("paper_nondelayed_w50", 28390.73), ("paper_delayed_w50", 26784.60)] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&["optimize"], &jobs_dir().join(format!("{name}.json")), tmp.path());
        assert_eq!(out.status.code(), Some(0), "{name}");
        let s = read_json(tmp.path().join("summary.json"));
        let j = s["objective"].as_f64().unwrap();
        assert!(rel(j, want) < 5e-3, "{name}: J = {j}");
        assert_eq!(s["bang_bang"]["law_satisfied"], true);
        let rows = csv_rows(tmp.path().join("optimal.csv"));
        assert_eq!(rows.len(), 2501);
        assert_eq!(rows[0].len(), 14);
    }
}

#[test]
fn bundled_sweep_job() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep"], &jobs_dir().join("paper_sweep.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(tmp.path().join("sweep.csv"));
    assert_eq!(rows.len(), 101);
    let trends = &read_json(tmp.path().join("summary.json"))["trends"];
    for key in [
        "r_peak_interior",
        "r_unimodal",
        "i_increasing",
        "l1_increasing",
        "l2_increasing",
        "objective_increasing",
        "switch_count_constant",
        "switch_times_increasing",
    ] {
        assert_eq!(trends[key], true, "{key}");
    }
    assert_eq!(trends["flagged"], 0);
    let script = std::fs::read_to_string(tmp.path().join("sweep.gp")).unwrap();
    assert!(script.contains("multiplot layout 2,3"));
    assert_eq!(script.matches("\nplot ").count(), 6);
}

#[test]
fn outputs_do_not_depend_on_threads_or_reruns() {
    let job = jobs_dir().join("paper_nondelayed_w50.json");
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip(["1", "1", "4"]) {
        let out = run(&["iop", "--threads", threads], &job, dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["iop.csv", "summary.json", "iop.gp"] {
        let first = std::fs::read(dirs[0].path().join(file)).unwrap();
        for dir in &dirs[1..] {
            assert_eq!(first, std::fs::read(dir.path().join(file)).unwrap(), "{file}");
        }
    }
    let a = read_json(dirs[0].path().join("manifest.json"));
    let b = read_json(dirs[2].path().join("manifest.json"));
    assert_eq!(a["job_hash"], b["job_hash"]);
    assert_eq!(a["job_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn iop_reports_hessian_in_both_coordinates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["iop"], &jobs_dir().join("paper_nondelayed_w50.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let s = read_json(tmp.path().join("summary.json"));
    assert_eq!(s["start_from"], "transcription");
    assert_eq!(s["hessian"]["arc_durations"]["positive_definite"], true);
    let h = &s["hessian"]["arc_durations"]["matrix"];
    assert!(rel(h[0][0].as_f64().unwrap(), 453.98) < 0.05);
}

#[test]
fn json_format_writes_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--format", "json"], &jobs_dir().join("endemic_beta100.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let t = read_json(tmp.path().join("trajectory.json"));
    assert_eq!(t["t"].as_array().unwrap().len(), 2501);
    assert!(!tmp.path().join("trajectory.csv").exists());
}

#[test]
fn validation_failures_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<Box<dyn Fn(&mut Value)>> = vec![
        Box::new(|j| j["unexpected"] = 1.into()),
        Box::new(|j| j["params"]["colour"] = 1.into()),
        Box::new(|j| j["params"]["beta"] = (-1.0).into()),
        Box::new(|j| j["delays"]["d_i"] = 0.1003.into()),
        Box::new(|j| j["objective"]["w1"] = (-5.0).into()),
        Box::new(|j| j["schedule"] = serde_json::json!({"u1": {"initial": 1, "switches": [6.0]}, "u2": {"initial": 0, "switches": []}})),
    ];
    for (k, mutate) in cases.iter().enumerate() {
        let mut job = bundled("paper_delayed_w50");
        mutate(&mut job);
        let out = run(&["simulate"], &write_job(tmp.path(), &job), tmp.path());
        assert_eq!(out.status.code(), Some(2), "case {k}");
        assert!(!out.stderr.is_empty());
    }
    let out = run(&["simulate"], &tmp.path().join("missing.json"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["sweep"], &jobs_dir().join("paper_delayed_w50.json"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut job = bundled("endemic_beta100");
    job["params"]["beta"] = 1e306.into();
    let out = run(&["simulate"], &write_job(tmp.path(), &job), tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unconverged_solve_still_writes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut job = bundled("paper_nondelayed_w50");
    job["solver"] = serde_json::json!({"ocp": {"lbfgs": {"max_iter": 2}}});
    let out = run(&["optimize"], &write_job(tmp.path(), &job), tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let s = read_json(tmp.path().join("summary.json"));
    assert_eq!(s["status"], "NotConverged");
    assert_eq!(read_json(tmp.path().join("manifest.json"))["exit_code"], 4);
}
