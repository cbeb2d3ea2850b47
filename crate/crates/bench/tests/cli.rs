use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_embedsteer-bench");

const SWEEP: &str = r#"
kind = "lr_sweep"
out_dir = "unused"
seeds = [0, 1]

[problem]
type = "toy"

[schedule]
kind = "power"
steps = 40
sigma_min = 0.02
sigma_max = 40.0

[sweep]
methods = ["embedopt", "dps"]
alphas = [0.01, 0.1, 1.0]
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn bench(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr_record(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn sweep_writes_twelve_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let out_dir = dir.path().join("out");
    let out = bench(&["sweep", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(rd.records().count(), 12);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "lr_sweep");
    assert_eq!(manifest["summary"]["runs"].as_array().unwrap().len(), 12);
    assert!(manifest["git_describe"].is_string());
}

#[test]
fn reruns_and_job_counts_give_byte_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let mut runs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let d = dir.path().join(name);
        let out = bench(&["run", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(code(&out), 0);
        runs.push(csv_files(&d));
    }
    assert_eq!(runs[0].len(), 3);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn seed_override_changes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let d = dir.path().join("o");
    let out = bench(&["sweep", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seeds", "5..8"]);
    assert_eq!(code(&out), 0);
    let mut rd = csv::Reader::from_path(d.join("baseline.csv")).unwrap();
    let seeds: Vec<String> = rd.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(seeds, ["5", "6", "7"]);
}

#[test]
fn rerun_overwrites_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let d = dir.path().join("o");
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("sweep.csv"), b"stale").unwrap();
    for _ in 0..2 {
        assert_eq!(code(&bench(&["sweep", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()])), 0);
    }
    assert!(fs::read(d.join("sweep.csv")).unwrap().starts_with(b"method,alpha,seed"));
    let leftovers: Vec<_> = fs::read_dir(&d)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn missing_required_field_is_a_parse_error_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let text = SWEEP.replace("seeds = [0, 1]\n", "");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let d = dir.path().join("o");
    let out = bench(&["sweep", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_record(&out)["error"], "parse");
    assert!(!d.exists());
}

#[test]
fn malformed_toml_and_unknown_field_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "kind = \n");
    assert_eq!(code(&bench(&["run", bad.to_str().unwrap()])), 3);
    let extra = write_config(dir.path(), "extra.toml", &format!("{SWEEP}\n[extra]\nx = 1\n"));
    assert_eq!(code(&bench(&["run", extra.to_str().unwrap()])), 3);
}

#[test]
fn invalid_values_are_validation_errors_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("o");
    for (name, text) in [
        ("alphas", SWEEP.replace("alphas = [0.01, 0.1, 1.0]", "alphas = []")),
        ("negative", SWEEP.replace("alphas = [0.01, 0.1, 1.0]", "alphas = [-1.0]")),
        ("steps", SWEEP.replace("steps = 40", "steps = 0")),
    ] {
        let cfg = write_config(dir.path(), &format!("{name}.toml"), &text);
        let out = bench(&["run", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(code(&out), 4, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stderr_record(&out)["error"], "validation");
    }
    assert!(!d.exists());
}

#[test]
fn subcommand_kind_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    assert_eq!(code(&bench(&["scale", cfg.to_str().unwrap()])), 4);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = bench(&["run", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 5);
    assert_eq!(stderr_record(&out)["error"], "io");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = bench(&["sweep", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 5);
}

#[test]
fn verify_prints_table_and_reports_failed_checks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("v");
    let out = bench(&["verify", "--out", d.to_str().unwrap()]);
    let table = String::from_utf8(out.stdout.clone()).unwrap();
    let failed = table.lines().filter(|l| l.starts_with("FAIL")).count();
    assert!(table.lines().filter(|l| l.starts_with("PASS")).count() >= 16);
    if failed == 0 {
        assert_eq!(code(&out), 0);
    } else {
        assert_eq!(code(&out), 7);
        assert_eq!(stderr_record(&out)["error"], "checks_failed");
    }
    assert!(d.join("verify.csv").exists());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = embedsteer_bench::ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
