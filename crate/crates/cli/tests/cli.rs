use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn param(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_param")).args(args).output().expect("spawn param")
}

/// Wavy 6x6 sheet written as OBJ.
fn sheet(dir: &Path) -> PathBuf {
    let n = 6;
    let mut s = String::new();
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            s += &format!("v {x} {y} {}\n", 0.1 * (3.0 * x).sin());
        }
    }
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let a = i * n + j + 1;
            s += &format!("f {} {} {}\nf {} {} {}\n", a, a + n, a + n + 1, a, a + n + 1, a + 1);
        }
    }
    let p = dir.join("sheet.obj");
    std::fs::write(&p, s).unwrap();
    p
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK: [&str; 6] = ["--iters", "40", "--hidden", "8", "--progress-every", "0"];

#[test]
fn global_run_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let input = sheet(dir.path());
    let out = dir.path().join("g");
    let mut args = vec!["global", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    let o = param(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(names(&out), ["manifest.json", "report.json", "seams.json", "sheet_uv.obj", "sheet_uv.svg"]);
    let obj = std::fs::read_to_string(out.join("sheet_uv.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 36);
    assert!(obj.lines().any(|l| l.starts_with("vt ")));
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 50);
    let report = json(&out.join("report.json"));
    assert_eq!(report["iterations"], 40);
    assert!(report["conformal"].as_f64().unwrap() >= 0.0);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["mode"], "global");
    assert_eq!(manifest["config"]["pipeline"], "global");
    assert_eq!(manifest["input"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn chart_run_writes_an_atlas() {
    let dir = tempfile::tempdir().unwrap();
    let input = sheet(dir.path());
    let out = dir.path().join("c");
    let mut args = vec!["charts", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "-K", "3"];
    args.extend(QUICK);
    let o = param(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(names(&out), ["charts.json", "manifest.json", "report.json", "sheet_atlas.obj", "sheet_atlas.svg"]);
    let charts = json(&out.join("charts.json"));
    assert_eq!(charts["charts"], 3);
    assert_eq!(charts["vertex_chart"].as_array().unwrap().len(), 36);
    assert_eq!(json(&out.join("manifest.json"))["mode"], "multichart");
    assert!(json(&out.join("report.json"))["per_chart"].is_array());
}

#[test]
fn eval_reproduces_the_training_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = sheet(dir.path());
    let out = dir.path().join("g");
    let mut args = vec!["global", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    assert!(param(&args).status.success());

    let ev = dir.path().join("ev");
    let seams: serde_json::Value = json(&out.join("seams.json"));
    let o = param(&[
        "eval",
        "--input",
        out.join("sheet_uv.obj").to_str().unwrap(),
        "--seams",
        out.join("seams.json").to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(names(&ev), ["report.json"]);
    let (a, b) = (json(&out.join("report.json")), json(&ev.join("report.json")));
    for key in ["conformal", "equiareal", "isometric", "flipped", "seam_length", "faces", "vertices"] {
        assert_eq!(a[key], b[key], "{key}");
    }
    assert!(seams["vertices"].is_array());
}

#[test]
fn seams_command_reads_a_uv_obj() {
    let dir = tempfile::tempdir().unwrap();
    let input = sheet(dir.path());
    let out = dir.path().join("g");
    let mut args = vec!["global", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    assert!(param(&args).status.success());
    let sd = dir.path().join("s");
    let o = param(&["seams", "--input", out.join("sheet_uv.obj").to_str().unwrap(), "--out", sd.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&sd.join("seams.json"))["tau"].as_f64().unwrap() > 0.0);
}

#[test]
fn replay_repeats_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = sheet(dir.path());
    let out = dir.path().join("g");
    let mut args = vec!["global", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"];
    args.extend(QUICK);
    assert!(param(&args).status.success());
    let re = dir.path().join("r");
    let o = param(&["replay", "--manifest", out.join("manifest.json").to_str().unwrap(), "--out", re.to_str().unwrap(), "--progress-every", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sheet_uv.obj", "seams.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(re.join(f)).unwrap(), "{f}");
    }

    // a changed input is refused
    std::fs::write(&input, "v 0 0 0\n").unwrap();
    let o = param(&["replay", "--manifest", out.join("manifest.json").to_str().unwrap(), "--out", dir.path().join("r2").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(param(&["global", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(param(&[]).status.code(), Some(1));
    assert_eq!(param(&["--help"]).status.code(), Some(0));
    let o = param(&["global", "--input", "/nonexistent.obj", "--out", "/tmp/x-never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn point_clouds_run_without_faces() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::new();
    for i in 0..10 {
        for j in 0..10 {
            s += &format!("{} {} 0\n", i as f64 * 0.1 + 0.01 * (j % 3) as f64, j as f64 * 0.1);
        }
    }
    let input = dir.path().join("plane.xyz");
    std::fs::write(&input, s).unwrap();
    let out = dir.path().join("p");
    let mut args = vec!["global", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    let o = param(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("manifest.json"))["mode"], "pointcloud");
    let report = json(&out.join("report.json"));
    assert!(report["conformal"].is_null());
    let obj = std::fs::read_to_string(out.join("plane_uv.obj")).unwrap();
    assert!(!obj.lines().any(|l| l.starts_with("f ")));
}
