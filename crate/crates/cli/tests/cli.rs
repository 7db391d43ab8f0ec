use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fraclab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraclab"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("FRACLAB_CACHE_DIR", dir.join("cache"))
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn interval_modulus_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = fraclab(dir.path(), &["modulus", "--spec", "interval", "--level", "3", "--family", "point2point", "--p", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], "v1");
    assert_eq!(v["partial"], false);
    assert_eq!(v["config"]["spec"], "interval");
    assert!(v["tool_version"].as_str().unwrap().starts_with("fraclab "));
    let value = v["result"]["records"][0]["value"].as_f64().unwrap();
    assert!((value - 0.125).abs() < 1e-6);
    let written = fs::read_to_string(dir.path().join("out/modulus.json")).unwrap();
    assert_eq!(written.as_bytes(), &out.stdout[..]);
    let csv = fs::read_to_string(dir.path().join("out/modulus.csv")).unwrap();
    assert!(csv.starts_with("spec,level,family,p,value,iterations,slack,duality_gap,lower_bound,method\n"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn carpet_axioms_example_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = fraclab(dir.path(), &["axioms", "--spec", "carpet", "--level", "2", "--samples", "100", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let results = v["result"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 6);
    for r in results {
        assert_eq!(r["samples"], 100);
        assert_eq!(r["violations"], 0, "{r}");
    }
}

#[test]
fn square_confdim_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = fraclab(dir.path(), &["confdim", "--spec", "square", "--levels", "2..5", "--bracket", "1.5,3", "--tol", "0.05"]);
    assert_eq!(out.status.code(), Some(0));
    let q = json(&out)["result"]["q_estimate"].as_f64().unwrap();
    assert!((q - 2.0).abs() <= 0.2, "q = {q}");
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["modulus", "--spec", "nope", "--level", "3", "--family", "point2point", "--p", "2"][..],
        &["modulus", "--spec", "interval", "--level", "3", "--family", "point2point", "--p", "0.5"],
        &["modulus", "--spec", "interval", "--level", "3", "--family", "ball2ball", "--p", "2"],
        &["energy", "--spec", "carpet", "--level", "2", "--p", "-1"],
        &["singularity", "--spec", "gasket", "--levels", "3..1"],
        &["product-demo", "--spec", "gasket", "--levels", "1..2"],
        &["frobnicate"],
    ] {
        let out = fraclab(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let e = error_line(&out);
        assert_eq!(e["error"]["kind"], "validation", "{args:?}");
        assert_eq!(e["error"]["exit_code"], 2);
        assert!(!e["error"]["message"].as_str().unwrap().is_empty());
    }
}

#[test]
fn non_convergence_exits_with_three_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = fraclab(
        dir.path(),
        &["modulus", "--spec", "carpet", "--levels", "1..2", "--family", "annulus", "--p", "2", "--strategy", "constraint-generation", "--max-iter", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["kind"], "non_convergence");
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/modulus.json")).unwrap()).unwrap();
    assert_eq!(written["partial"], true);
    assert!(!written["result"]["failed"].as_array().unwrap().is_empty());
    assert!(dir.path().join("out/modulus.csv").exists());
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let runs = [
        vec!["scaling", "--spec", "gasket", "--levels", "2..4", "--p", "1.5,2,3"],
        vec!["singularity", "--spec", "gasket", "--levels", "1..4", "--p", "2,3"],
        vec!["product-demo", "--spec", "gasket*gasket", "--levels", "1..3"],
        vec!["axioms", "--spec", "carpet*carpet", "--level", "1", "--samples", "30", "--seed", "3"],
        vec!["energy", "--spec", "sponge", "--level", "2", "--function", "random", "--seed", "5"],
    ];
    for args in runs {
        let name = args[0];
        let mut outputs = Vec::new();
        for workers in ["1", "2", "4"] {
            let dir = tempfile::tempdir().unwrap();
            let mut full = args.clone();
            full.extend(["--workers", workers]);
            let out = fraclab(dir.path(), &full);
            assert_eq!(out.status.code(), Some(0), "{full:?}: {}", String::from_utf8_lossy(&out.stderr));
            let csv = fs::read(dir.path().join(format!("out/{name}.csv"))).unwrap();
            outputs.push((out.stdout, csv));
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{name} differs across worker counts");
    }
}

#[test]
fn cache_directory_comes_from_the_environment_or_flag() {
    let dir = tempfile::tempdir().unwrap();
    let first = fraclab(dir.path(), &["build", "--spec", "carpet", "--levels", "1..2"]);
    assert_eq!(first.status.code(), Some(0));
    let cached: Vec<_> = fs::read_dir(dir.path().join("cache")).unwrap().collect();
    assert_eq!(cached.len(), 2);

    let flag_dir = dir.path().join("elsewhere");
    let out = fraclab(dir.path(), &["build", "--spec", "gasket", "--levels", "3", "--cache-dir", flag_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_dir(&flag_dir).unwrap().count(), 1);
    assert_eq!(fs::read_dir(dir.path().join("cache")).unwrap().count(), 2);

    // a second run reads the cache and reports the same graph
    let again = fraclab(dir.path(), &["build", "--spec", "carpet", "--levels", "1..2"]);
    assert_eq!(again.stdout, first.stdout);
    let rows = json(&again)["result"].as_array().unwrap().clone();
    assert_eq!(rows[0]["cells"], 8);
    assert_eq!(rows[1]["cells"], 64);
}

#[test]
fn svg_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = fraclab(dir.path(), &["singularity", "--spec", "gasket", "--levels", "1..3", "--emit-svg"]);
    assert_eq!(out.status.code(), Some(0));
    let svg = fs::read_to_string(dir.path().join("out/singularity.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let plain = tempfile::tempdir().unwrap();
    fraclab(plain.path(), &["singularity", "--spec", "gasket", "--levels", "1..3"]);
    assert!(!plain.path().join("out/singularity.svg").exists());
}

#[test]
fn help_lists_csv_columns() {
    let out = Command::new(env!("CARGO_BIN_EXE_fraclab")).args(["scaling", "--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("CSV columns: spec,p,level,eps_over_r,modulus,slack"));
}
