//! End-to-end runs of the `arbor` binary on the bundled synthetic fixture.
//!
//! `ARBOR_BLESS=1 cargo test -p arbor-cli --test e2e` regenerates the fixture and the
//! golden hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arbor_cli::fixture::{generate, FixtureSpec};
use arbor_cli::manifest::sha256_file;
use serde_json::{json, Value};

const GOLDEN: [&str; 3] = ["skeleton.json", "mesh.obj", "rigid_bodies.json"];

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic")
}

fn blessing() -> bool {
    std::env::var_os("ARBOR_BLESS").is_some()
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Config pointing at the fixture inputs with output in `out`, plus `extra` merged in.
fn write_config(dir: &Path, out: &Path, extra: Value) -> PathBuf {
    let f = fixture_dir();
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(f.join("config.json")).unwrap()).unwrap();
    for (_, v) in cfg["paths"].as_object_mut().unwrap() {
        *v = json!(f.join(v.as_str().unwrap()));
    }
    cfg["paths"]["output"] = json!(out);
    for (k, v) in extra.as_object().unwrap() {
        if k == "paths" {
            for (pk, pv) in v.as_object().unwrap() {
                cfg["paths"][pk] = pv.clone();
            }
        } else {
            cfg[k] = v.clone();
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn arbor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbor")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error JSON in {stderr}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn committed_fixture_matches_generator() {
    if blessing() {
        let dir = fixture_dir();
        for sub in ["annotations", "images", "video_a", "video_b"] {
            let _ = std::fs::remove_dir_all(dir.join(sub));
        }
        generate(&dir, &FixtureSpec::default()).unwrap();
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), &FixtureSpec::default()).unwrap();
    let fresh = files_under(tmp.path());
    let mut committed = files_under(&fixture_dir());
    committed.retain(|p, _| !p.starts_with("out") && p != Path::new("golden.json"));
    assert_eq!(fresh.keys().collect::<Vec<_>>(), committed.keys().collect::<Vec<_>>());
    for (p, bytes) in &fresh {
        assert!(committed[p] == *bytes, "{} differs from the generator", p.display());
    }
}

#[test]
fn all_reproduces_golden_hashes_and_is_restartable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out, json!({}));
    let cfg = cfg.to_str().unwrap();

    let run = arbor(&["all", "--config", cfg]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "7", "sync offset on stdout");

    let hashes: BTreeMap<&str, String> = GOLDEN.iter().map(|f| (*f, sha256_file(&out.join(f)).unwrap())).collect();
    let golden_path = fixture_dir().join("golden.json");
    if blessing() {
        std::fs::write(&golden_path, serde_json::to_vec_pretty(&hashes).unwrap()).unwrap();
    }
    let golden: BTreeMap<String, String> = serde_json::from_slice(&std::fs::read(&golden_path).unwrap()).unwrap();
    for (f, h) in &hashes {
        assert_eq!(&golden[*f], h, "{f} hash differs from golden");
    }

    let manifest = std::fs::read(out.join("manifest.json")).unwrap();
    let rerun = arbor(&["all", "--config", cfg]);
    assert!(rerun.status.success());
    let log = String::from_utf8_lossy(&rerun.stderr);
    assert!(!log.contains(": done"), "rerun executed a stage:\n{log}");
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), manifest);

    let forced = arbor(&["export", "--config", cfg, "--force"]);
    assert!(forced.status.success());
    assert!(String::from_utf8_lossy(&forced.stderr).contains("export: done"));
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), manifest, "forced rerun is deterministic");
}

#[test]
fn missing_cameras_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), json!({ "paths": { "cameras": tmp.path().join("nope.json") } }));
    let run = arbor(&["triangulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let err = error_json(&run);
    assert_eq!(err["error"]["code"], "CONFIG_PATH_MISSING");
    assert_eq!(err["error"]["field"], "cameras");
}

#[test]
fn unknown_config_field_is_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), json!({ "colour": 1 }));
    let run = arbor(&["skin", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(error_json(&run)["error"]["code"], "CONFIG_PARSE");
}

#[test]
fn out_of_range_parameter_is_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), json!({ "multiview": { "clamp_alpha": 1.5 } }));
    let run = arbor(&["triangulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(error_json(&run)["error"]["code"], "CONFIG_INVALID");
}

#[test]
fn missing_stage_input_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), json!({}));
    let run = arbor(&["skin", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    let err = error_json(&run);
    assert_eq!(err["error"]["code"], "STAGE_INPUT_MISSING");
    assert_eq!(err["error"]["stage"], "skin");
}

#[test]
fn explicit_stage_without_optional_path_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), json!({}));
    let mut v: Value = serde_json::from_slice(&std::fs::read(&cfg).unwrap()).unwrap();
    v["paths"].as_object_mut().unwrap().remove("cloud");
    std::fs::write(&cfg, serde_json::to_vec(&v).unwrap()).unwrap();
    let run = arbor(&["bind", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(error_json(&run)["error"]["code"], "CONFIG_FIELD_MISSING");
}

#[test]
fn locked_output_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(arbor_cli::pipeline::LOCK_FILE), b"").unwrap();
    let cfg = write_config(tmp.path(), &out, json!({}));
    let run = arbor(&["rasterize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(error_json(&run)["error"]["code"], "OUTPUT_LOCKED");
    assert!(out.join(arbor_cli::pipeline::LOCK_FILE).exists(), "foreign lock left in place");
}

#[test]
fn seed_flag_overrides_config_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out, json!({}));
    let cfg = cfg.to_str().unwrap();
    assert!(arbor(&["rasterize", "--config", cfg]).status.success());
    let run = arbor(&["dataset", "--config", cfg, "--seed", "99"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let m: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["stages"]["dataset"]["params"]["seed"], 99);
    assert!(!out.join(arbor_cli::pipeline::LOCK_FILE).exists(), "lock released");
    // A different seed invalidates the stage.
    let again = arbor(&["dataset", "--config", cfg]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("dataset: done"));
}
