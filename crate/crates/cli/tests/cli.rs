//! End-to-end tests of the `gradgibbs` binary: exit codes, manifests,
//! determinism, the control experiments, and the verify-gff report schema.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use tempfile::TempDir;

/// Runs the binary with a scrubbed environment; returns (exit code, stdout,
/// stderr).
fn gradgibbs(args: &[&str], env: &[(&str, &str)]) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gradgibbs"));
    for var in ["GRADGIBBS_CONFIG", "GRADGIBBS_SEED", "GRADGIBBS_WORKERS", "GRADGIBBS_OUT"] {
        cmd.env_remove(var);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// sha256 of `name` recorded in a run's manifest.
fn recorded_hash(run_dir: &Path, name: &str) -> String {
    let manifest = read_json(&run_dir.join("manifest.json"));
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["path"] == name)
        .unwrap_or_else(|| panic!("{name} not inventoried"))["sha256"]
        .as_str()
        .unwrap()
        .to_owned()
}

fn single_atom_sample_config(samples: usize) -> Value {
    json!({
        "seed": 5,
        "model": { "atoms": [ { "kappa": 1.0, "weight": 1.0 } ] },
        "torus": { "d": 2, "L": 16 },
        "chain": { "burn_in": 5, "thinning": 1, "samples": samples }
    })
}

#[test]
fn sample_writes_archive_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &single_atom_sample_config(40));
    let out = tmp.path().join("run");

    let (code, _, stderr) = gradgibbs(
        &["sample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["root_seed"], 5);
    assert_eq!(manifest["config"]["torus"]["L"], 16);
    assert!(manifest["timings"].as_array().unwrap().len() >= 2);

    let summary = read_json(&out.join("sample_report.json"));
    assert_eq!(summary["samples"], 40);
    // both kinds recorded by default
    assert_eq!(summary["records"], 80);
    assert!(out.join("samples.bin").exists());
    assert!(!recorded_hash(&out, "samples.bin").is_empty());
}

#[test]
fn same_config_and_seed_reproduce_byte_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &single_atom_sample_config(25));
    let cfg = cfg.to_str().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));

    for out in [&a, &b] {
        let (code, _, stderr) = gradgibbs(
            &["sample", "--config", cfg, "--workers", "2", "--out", out.to_str().unwrap()],
            &[],
        );
        assert_eq!(code, 0, "stderr: {stderr}");
    }
    assert_eq!(
        recorded_hash(&a, "samples.bin"),
        recorded_hash(&b, "samples.bin"),
        "fixed config, seed, and worker count must reproduce the archive"
    );

    // a different root seed must not
    let (code, _, _) = gradgibbs(
        &["sample", "--config", cfg, "--seed", "99", "--out", c.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0);
    assert_ne!(recorded_hash(&a, "samples.bin"), recorded_hash(&c, "samples.bin"));
}

#[test]
fn seed_env_var_matches_the_flag() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &single_atom_sample_config(12));
    let cfg = cfg.to_str().unwrap();
    let (via_flag, via_env) = (tmp.path().join("flag"), tmp.path().join("env"));

    let (code, _, _) = gradgibbs(
        &["sample", "--config", cfg, "--seed", "321", "--out", via_flag.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0);
    let (code, _, _) = gradgibbs(
        &["sample", "--config", cfg, "--out", via_env.to_str().unwrap()],
        &[("GRADGIBBS_SEED", "321")],
    );
    assert_eq!(code, 0);
    assert_eq!(
        recorded_hash(&via_flag, "samples.bin"),
        recorded_hash(&via_env, "samples.bin")
    );
}

#[test]
fn malformed_config_exits_2_with_no_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("broken.json");
    fs::write(&cfg, "{ \"seed\": 3, ").unwrap();
    let out = tmp.path().join("run");

    let (code, _, stderr) = gradgibbs(
        &["sample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("config error"), "stderr: {stderr}");
    assert!(!out.exists(), "a rejected config must not leave outputs behind");
}

#[test]
fn config_errors_name_the_offending_field() {
    let tmp = TempDir::new().unwrap();

    // a typo in a section name
    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, "{ \"modle\": {} }").unwrap();
    let (code, _, stderr) = gradgibbs(
        &["sample", "--config", cfg.to_str().unwrap(), "--out",
          tmp.path().join("x").to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("modle"), "stderr: {stderr}");

    // a missing required section
    let cfg = write_config(tmp.path(), &json!({ "torus": { "d": 2, "L": 8 } }));
    let (code, _, stderr) = gradgibbs(
        &["homogenize", "--config", cfg.to_str().unwrap(), "--out",
          tmp.path().join("y").to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("model"), "stderr: {stderr}");
}

#[test]
fn missing_archive_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "ensemble": { "source": "archive", "archive": tmp.path().join("absent.bin") }
        }),
    );
    let (code, _, stderr) = gradgibbs(
        &["homogenize", "--config", cfg.to_str().unwrap(), "--out",
          tmp.path().join("run").to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("ensemble.archive"), "stderr: {stderr}");
}

#[test]
fn constant_conductance_control_matches_4i() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "seed": 42,
            "model": { "atoms": [ { "kappa": 2.0, "weight": 1.0 } ] },
            "torus": { "d": 2, "L": 48 },
            "ensemble": { "count": 2 },
            "walk": { "t": 10.0, "paths_per_env": 400 }
        }),
    );
    let out = tmp.path().join("run");
    let (code, _, stderr) = gradgibbs(
        &["homogenize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    let report = read_json(&out.join("homogenize_report.json"));
    for j in 0..2 {
        for k in 0..2 {
            let want = if j == k { 4.0 } else { 0.0 };
            let corr = report["corrector"]["q"][j][k].as_f64().unwrap();
            let walk = report["walk"]["q"][j][k].as_f64().unwrap();
            // κ ≡ 2 has a vanishing corrector, so that route is exact
            assert!((corr - want).abs() < 1e-9, "corrector q[{j}][{k}] = {corr}");
            assert!((walk - want).abs() < 0.35, "walk q[{j}][{k}] = {walk}");
        }
    }
}

#[test]
fn one_dimensional_two_atom_control_matches_harmonic_mean() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "seed": 7,
            "model": { "atoms": [ { "kappa": 1.0, "weight": 0.5 },
                                   { "kappa": 4.0, "weight": 0.5 } ] },
            "torus": { "d": 1, "L": 2048 },
            "ensemble": { "count": 4 },
            "walk": { "t": 20.0, "paths_per_env": 1500 }
        }),
    );
    let out = tmp.path().join("run");
    let (code, _, stderr) = gradgibbs(
        &["homogenize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    // series resistors: q̂/2 → harmonic mean 1/E[1/κ] = 1.6
    let report = read_json(&out.join("homogenize_report.json"));
    let corr = report["corrector"]["q"][0][0].as_f64().unwrap() / 2.0;
    let walk = report["walk"]["q"][0][0].as_f64().unwrap() / 2.0;
    assert!((corr - 1.6).abs() < 0.032, "corrector q̂/2 = {corr}, want 1.6 ± 2%");
    assert!((walk - 1.6).abs() < 0.3, "walk q̂/2 = {walk}");
}

fn verify_config() -> Value {
    json!({
        "seed": 5,
        "model": { "atoms": [ { "kappa": 1.0, "weight": 1.0 } ] },
        "torus": { "d": 2, "L": 32 },
        "chain": { "burn_in": 10, "thinning": 1, "samples": 1500 },
        "ensemble": { "count": 4 },
        "gff": { "epsilon": 0.125, "batches": 30 }
    })
}

#[test]
fn verify_gff_end_to_end_single_atom_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &verify_config());
    let out = tmp.path().join("run");

    let (code, _, stderr) = gradgibbs(
        &["verify-gff", "--end-to-end", "--config", cfg.to_str().unwrap(),
          "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    let report = read_json(&out.join("verify_gff_report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["samples"], 1500);
    assert_eq!(report["qhat_source"], "computed");
    // κ ≡ 1 makes the corrector-route matrix 2·I exactly
    assert!((report["qhat"]["q"][0][0].as_f64().unwrap() - 2.0).abs() < 1e-9);
    for check in report["checks"].as_array().unwrap() {
        assert_eq!(check["pass"], true, "{check}");
    }

    // the report conforms to the published schema
    let schema = read_json(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/verify_gff.schema.json"),
    );
    let errors = validate(&report, &schema, "$");
    assert!(errors.is_empty(), "schema violations: {errors:?}");

    // CSV table shipped alongside
    let csv = fs::read_to_string(out.join("cf.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("name,epsilon,n,re,"));
}

#[test]
fn verify_gff_with_doubled_matrix_fails_the_cf_check() {
    let tmp = TempDir::new().unwrap();
    let mut cfg_value = verify_config();
    cfg_value["gff"]["qhat_scale"] = json!(2.0);
    let cfg = write_config(tmp.path(), &cfg_value);
    let out = tmp.path().join("run");

    let (code, _, stderr) = gradgibbs(
        &["verify-gff", "--end-to-end", "--config", cfg.to_str().unwrap(),
          "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 4, "stderr: {stderr}");
    assert!(stderr.contains("Re CF"), "stderr: {stderr}");

    let report = read_json(&out.join("verify_gff_report.json"));
    assert_eq!(report["pass"], false);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "check-failed");
}

#[test]
fn verify_gff_reads_archives_and_scans_forms() {
    let tmp = TempDir::new().unwrap();
    let mut sample_cfg = verify_config();
    sample_cfg["chain"]["samples"] = json!(600);
    let cfg = write_config(tmp.path(), &sample_cfg);
    let sample_out = tmp.path().join("samples");
    let (code, _, stderr) = gradgibbs(
        &["sample", "--config", cfg.to_str().unwrap(), "--out", sample_out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    let mut verify_cfg = verify_config();
    verify_cfg["chain"]["samples"] = json!(600);
    verify_cfg["gff"]["batches"] = json!(20);
    verify_cfg["gff"]["archive"] = json!(sample_out.join("samples.bin"));
    verify_cfg["gff"]["qhat"] = json!({ "matrix": [[2.0, 0.0], [0.0, 2.0]] });
    verify_cfg["gff"]["scan_epsilons"] = json!([0.125, 0.0625]);
    verify_cfg["ensemble"]["count"] = json!(3);
    let cfg2 = tmp.path().join("verify.json");
    fs::write(&cfg2, serde_json::to_string_pretty(&verify_cfg).unwrap()).unwrap();
    let out = tmp.path().join("verify");

    let (code, _, stderr) = gradgibbs(
        &["verify-gff", "--config", cfg2.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0, "stderr: {stderr}");

    let report = read_json(&out.join("verify_gff_report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["samples"], 600);
    assert_eq!(report["qhat_source"], "inline");

    // the scan rows carry the unit-conductance form, which is close to the
    // continuum value, and every environment is identical here
    let scan = report["form_scan"].as_array().unwrap();
    assert_eq!(scan.len(), 2);
    for row in scan {
        let mean = row["mean"].as_f64().unwrap();
        assert!((mean - 0.8503).abs() < 0.1, "form mean {mean}");
        assert!(row["sd"].as_f64().unwrap() < 1e-12);
    }
    let csv = fs::read_to_string(out.join("form_scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn report_summarizes_runs_and_detects_tampering() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &single_atom_sample_config(10));
    let out = tmp.path().join("run");
    let (code, _, _) = gradgibbs(
        &["sample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 0);

    let (code, stdout, _) = gradgibbs(&["report", out.to_str().unwrap()], &[]);
    assert_eq!(code, 0);
    assert!(stdout.contains("status    ok"), "stdout: {stdout}");
    assert!(stdout.contains("verified"), "stdout: {stdout}");

    // flip a byte in the archive: the checksums no longer verify
    let archive = out.join("samples.bin");
    let mut bytes = fs::read(&archive).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&archive, bytes).unwrap();
    let (code, stdout, stderr) = gradgibbs(&["report", out.to_str().unwrap()], &[]);
    assert_eq!(code, 4, "stderr: {stderr}");
    assert!(stdout.contains("MISMATCH"), "stdout: {stdout}");
}

// --- a small JSON-schema checker (draft-07 subset used by the published
// schema: type, required, properties, additionalProperties, items,
// minItems, minimum, exclusiveMinimum) ---

fn validate(value: &Value, schema: &Value, path: &str) -> Vec<String> {
    let mut errors = Vec::new();
    if let Some(ty) = schema["type"].as_str() {
        let ok = match ty {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            other => panic!("unhandled schema type {other}"),
        };
        if !ok {
            errors.push(format!("{path}: expected {ty}, got {value}"));
            return errors;
        }
    }
    if let Some(min) = schema["minimum"].as_f64() {
        if value.as_f64().is_some_and(|v| v < min) {
            errors.push(format!("{path}: {value} < minimum {min}"));
        }
    }
    if let Some(min) = schema["exclusiveMinimum"].as_f64() {
        if value.as_f64().is_some_and(|v| v <= min) {
            errors.push(format!("{path}: {value} ≤ exclusive minimum {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema["required"].as_array() {
            for key in required {
                let key = key.as_str().unwrap();
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required key {key}"));
                }
            }
        }
        if let Some(props) = schema["properties"].as_object() {
            for (key, sub) in obj {
                match props.get(key) {
                    Some(subschema) => {
                        errors.extend(validate(sub, subschema, &format!("{path}.{key}")))
                    }
                    None => {
                        if schema["additionalProperties"] == Value::Bool(false) {
                            errors.push(format!("{path}: unexpected key {key}"));
                        }
                    }
                }
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema["minItems"].as_u64() {
            if (items.len() as u64) < min {
                errors.push(format!("{path}: fewer than {min} items"));
            }
        }
        if schema["items"].is_object() {
            for (i, item) in items.iter().enumerate() {
                errors.extend(validate(item, &schema["items"], &format!("{path}[{i}]")));
            }
        }
    }
    errors
}
