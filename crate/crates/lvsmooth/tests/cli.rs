use std::path::Path;
use std::process::{Command, Output};

use lvsmooth::compare::{CompareReport, Verdict};
use lvsmooth::manifest::{sha256_file, Manifest, RunStatus};

fn lvsmooth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvsmooth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_into(config: &str, experiment: &str, out: &Path) -> Output {
    lvsmooth(&["run", "--config", config, "--experiment", experiment, "--out", out.to_str().unwrap()])
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let out = run_into(&cfg, "no_such_experiment", &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn bad_config_and_arguments_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = lvsmooth(&["run", "--config", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{ "not_a_field": 1 }"#);
    assert_eq!(run_into(&cfg, "flat_vol_roundtrip", &dir.path().join("o")).status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{ "seeds": [] }"#);
    assert_eq!(run_into(&cfg, "svi_noisy_direct", &dir.path().join("o")).status.code(), Some(2));

    assert_eq!(lvsmooth(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn thread_variable_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let out = Command::new(env!("CARGO_BIN_EXE_lvsmooth"))
        .args(["run", "--config", &cfg, "--experiment", "flat_vol_roundtrip", "--out"])
        .arg(dir.path().join("o"))
        .env("LVSMOOTH_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flat_vol_run_is_reproducible_and_fully_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = run_into(&cfg, "flat_vol_roundtrip", out);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    }

    let manifest = Manifest::load(&a).unwrap();
    assert_eq!(manifest.status, RunStatus::Ok);
    assert!(manifest.error.is_none());
    assert_eq!(manifest.config_hash.len(), 64);
    for f in &manifest.files {
        assert_eq!(sha256_file(&a.join(&f.path)).unwrap(), f.sha256, "{}", f.path);
        assert_eq!(std::fs::read(a.join(&f.path)).unwrap(), std::fs::read(b.join(&f.path)).unwrap());
    }
    for name in ["lv_surface.csv", "price_grid.csv", "second_difference.csv", "fit_report.json", "metrics.json"] {
        let path = format!("flat_vol_roundtrip/{name}");
        assert!(manifest.files.iter().any(|f| f.path == path), "{path} missing from manifest");
    }

    let report = dir.path().join("report.json");
    let res = lvsmooth(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let rep: CompareReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!rep.files.is_empty());
    for f in &rep.files {
        assert_eq!(f.verdict, Verdict::Match);
        assert_eq!((f.max_abs, f.rms), (Some(0.0), Some(0.0)));
    }
}

#[test]
fn compare_reports_corrupt_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_into(&cfg, "flat_vol_roundtrip", &a);
    run_into(&cfg, "flat_vol_roundtrip", &b);
    std::fs::write(b.join("flat_vol_roundtrip/lv_surface.csv"), "t_lo,t_hi,k_knot,sigma\n0,1,x,0.2\n").unwrap();
    std::fs::remove_file(b.join("flat_vol_roundtrip/price_grid.csv")).unwrap();

    let report = dir.path().join("report.json");
    let res = lvsmooth(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    let rep: CompareReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let verdict = |name: &str| rep.files.iter().find(|f| f.path.ends_with(name)).unwrap().verdict;
    assert_eq!(verdict("lv_surface.csv"), Verdict::ParseError);
    assert_eq!(verdict("fit_report.json"), Verdict::Match);
    // price_grid.csv is listed in b's manifest but gone: reported as unreadable.
    assert_eq!(verdict("price_grid.csv"), Verdict::ParseError);

    let res = lvsmooth(&["compare", a.to_str().unwrap(), dir.path().to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "missing manifest is a runtime error");
}

#[test]
fn direct_vs_smoothed_compare_shows_bucket_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "seeds": [11] }"#);
    let (a, b) = (dir.path().join("direct"), dir.path().join("smoothed"));
    assert_eq!(run_into(&cfg, "svi_noisy_direct", &a).status.code(), Some(0));
    assert_eq!(run_into(&cfg, "svi_noisy_smoothed", &b).status.code(), Some(0));

    let report = dir.path().join("report.json");
    let res = lvsmooth(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "smoothed run has extra artifacts");
    let rep: CompareReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let fit = rep.files.iter().find(|f| f.path == "seed_11/fit_report.json").unwrap();
    assert_eq!(fit.verdict, Verdict::Differs);
    let [direct, smoothed] = fit.bucket_errors_pct.clone().unwrap();
    for (d, s) in direct.iter().zip(&smoothed) {
        assert!(s.unwrap() < d.unwrap(), "{s:?} vs {d:?}");
    }
    assert!(rep.files.iter().any(|f| f.path == "seed_11/smoothed_slices.csv" && f.verdict == Verdict::MissingInA));
}
