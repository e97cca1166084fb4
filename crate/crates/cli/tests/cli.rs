use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prehistory_cli::{parse_config, validate, CliError, Experiment};
use serde_json::Value;

const BISTABLE: &str = r#"
[model]
epsilon = 0.05
horizon = 5.0
x0 = -1.0
x_t = 1.0

[drift]
name = "bistable"

[nop]
bracket = [0.1, 2.0]

[bridges]
paths = 20
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn prehistory(verb: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prehistory"))
        .arg(verb)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

fn hashes(m: &Value) -> Vec<(String, String)> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (
                o["file"].as_str().unwrap().to_string(),
                o["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn minimal_config_gets_defaults() {
    let file = parse_config(
        "[model]\nepsilon = 0.1\nhorizon = 1.0\nx0 = 0.0\nx_t = 1.0\n[drift]\nname = \"zero\"\n",
    )
    .unwrap();
    let cfg = validate(file, Experiment::ComputeNppd).unwrap();
    assert_eq!(cfg.seed(), 0);
    assert_eq!(cfg.output_dir(), Path::new("out"));
    assert_eq!((cfg.file.model.kappa, cfg.file.model.sigma), (2.0, 1.0));
    assert_eq!(cfg.file.grid.n_bins, 400);
    assert_eq!(cfg.file.lln.samples, 200);
    assert_eq!(cfg.file.peaks.min_relative_height, 0.5);
    assert_eq!(cfg.spec.steps(), 10);
}

#[test]
fn kappa_at_most_one_is_rejected() {
    let text = BISTABLE.replace("x_t = 1.0", "x_t = 1.0\nkappa = 0.5");
    let err = validate(parse_config(&text).unwrap(), Experiment::SolveNop).unwrap_err();
    assert!(matches!(&err, CliError::Validation { field, .. } if field == "kappa"));
    assert!(err.to_string().contains("kappa must exceed 1"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_drift_lists_the_catalog() {
    let text = BISTABLE.replace("\"bistable\"", "\"quartic\"");
    let err = validate(parse_config(&text).unwrap(), Experiment::SolveNop)
        .unwrap_err()
        .to_string();
    for name in ["zero", "affine", "bistable", "polynomial"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = parse_config("[model]\nepsilon = 0.1\nhorizon = = 1\n").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)));
    assert!(err.to_string().contains("line 3"), "{err}");

    let unknown = BISTABLE.replace("[drift]", "[drift]\nslope = 1.0");
    let err = parse_config(&unknown).unwrap_err().to_string();
    assert!(err.contains("slope") && err.contains("line"), "{err}");
}

#[test]
fn stray_drift_parameters_are_rejected() {
    let text = BISTABLE.replace("name = \"bistable\"", "name = \"bistable\"\na1 = 2.0");
    let err = validate(parse_config(&text).unwrap(), Experiment::SolveNop).unwrap_err();
    assert!(matches!(&err, CliError::Validation { field, .. } if field == "drift.a1"));
}

#[test]
fn identical_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BISTABLE);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for (out, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let o = prehistory("bridges", &cfg, out, &["--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ha, hb, hc) = (
        hashes(&manifest(&a)),
        hashes(&manifest(&b)),
        hashes(&manifest(&c)),
    );
    assert_eq!(ha, hb);
    for (file, _) in &ha {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap()
        );
    }
    assert_ne!(ha, hc);
    assert_eq!(manifest(&a)["config"]["seed"], 11);
    assert_eq!(manifest(&a)["config"]["experiment"], "sample_bridges");
}

#[test]
fn manifest_hashes_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BISTABLE);
    let out = dir.path().join("nop");
    assert!(prehistory("nop", &cfg, &out, &[]).status.success());
    let m = manifest(&out);
    for (file, hash) in hashes(&m) {
        let bytes = std::fs::read(out.join(&file)).unwrap();
        assert_eq!(prehistory_cli::manifest::sha256_hex(&bytes), hash);
    }
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let nop: Value = serde_json::from_slice(&std::fs::read(out.join("nop.json")).unwrap()).unwrap();
    assert!((nop["alpha0"].as_f64().unwrap() - 0.671).abs() < 0.005);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = prehistory(
        "nop",
        &dir.path().join("absent.toml"),
        &dir.path().join("o"),
        &[],
    );
    assert_eq!(missing.status.code(), Some(1));

    let bad = write_config(
        dir.path(),
        "bad.toml",
        &BISTABLE.replace("x_t = 1.0", "x_t = 1.0\nkappa = 0.5"),
    );
    let out = dir.path().join("bad");
    let o = prehistory("nop", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa must exceed 1"));

    // A bracket on one side of the root: shooting fails, and nothing is written.
    let stuck = write_config(
        dir.path(),
        "stuck.toml",
        &BISTABLE.replace("[0.1, 2.0]", "[1.0, 2.0]"),
    );
    let out = dir.path().join("stuck");
    let o = prehistory("nop", &stuck, &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!out.join("manifest.json").exists());
    assert!(!out.join("nop.csv").exists());
}

#[test]
fn scan_finds_two_coexisting_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "scan.toml",
        "[model]\nepsilon = 0.01\nhorizon = 10.0\nx0 = -0.8\nx_t = -0.2\n[drift]\nname = \"bistable\"\n\
         [scan]\nalpha_range = [-1.0, 1.0]\npoints = 2001\n",
    );
    let out = dir.path().join("scan");
    assert!(prehistory("scan", &cfg, &out, &[]).status.success());
    let roots = std::fs::read_to_string(out.join("roots.csv")).unwrap();
    let rows: Vec<Vec<f64>> = roots
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2, "{roots}");
    assert!((rows[0][2] - rows[1][2]).abs() <= 1e-3);
}

#[test]
fn nppd_writes_field_and_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nppd.toml",
        &BISTABLE.replace("epsilon = 0.05", "epsilon = 0.01"),
    );
    let out = dir.path().join("nppd");
    assert!(prehistory("nppd", &cfg, &out, &[]).status.success());
    let field = std::fs::read_to_string(out.join("nppd.csv")).unwrap();
    let peaks = std::fs::read_to_string(out.join("peaks.csv")).unwrap();
    assert_eq!(field.lines().count(), 1 + 501 * 400);
    assert!(peaks.lines().count() > 501);
    let summary: Value =
        serde_json::from_slice(&std::fs::read(out.join("nppd.json")).unwrap()).unwrap();
    assert!(summary["escape_mass"].as_f64().unwrap() < 1e-6);
    let files: Vec<String> = hashes(&manifest(&out))
        .into_iter()
        .map(|(f, _)| f)
        .collect();
    assert_eq!(files, ["nppd.csv", "peaks.csv", "nppd.json"]);
}

#[test]
fn lln_reports_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "lln.toml",
        "[model]\nepsilon = 0.01\nhorizon = 1.0\nx0 = 0.0\nx_t = 1.0\n[drift]\nname = \"affine\"\n\
         [grid]\nxl = -0.5\nxr = 1.5\nn_bins = 400\n[lln]\nepsilons = [0.1, 0.025]\nsamples = 50\nbootstrap_resamples = 50\n",
    );
    let out = dir.path().join("lln");
    assert!(prehistory("lln", &cfg, &out, &["--seed", "5"])
        .status
        .success());
    let rows: Value =
        serde_json::from_slice(&std::fs::read(out.join("lln.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        for key in ["epsilon", "median", "p90", "samples"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r["samples"], 50);
    }
    assert!(rows[1]["median"].as_f64() < rows[0]["median"].as_f64());
}

#[test]
fn simulate_and_verify_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BISTABLE);
    let out = dir.path().join("sim");
    assert!(prehistory("simulate", &cfg, &out, &[]).status.success());
    let paths = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(paths.starts_with("path,k,t,x\n"));
    assert_eq!(paths.lines().count(), 1 + 100 * 101);

    let out = dir.path().join("verify");
    let o = prehistory("verify", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value =
        serde_json::from_slice(&std::fs::read(out.join("verify.json")).unwrap()).unwrap();
    assert!(v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
}
