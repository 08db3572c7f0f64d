use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smelab"))
        .args(args)
        .env_remove("SMELAB_OUT")
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn figures_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = smelab(&[
        "figures",
        "--seed",
        "7",
        "--out",
        a.path().to_str().unwrap(),
        "--threads",
        "1",
    ]);
    let rb = smelab(&[
        "figures",
        "--seed",
        "7",
        "--out",
        b.path().to_str().unwrap(),
        "--threads",
        "4",
    ]);
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stdout));
    assert!(rb.status.success());
    let fa = csv_files(a.path());
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, csv_files(b.path()));
    let text = String::from_utf8(fa[0].1.clone()).unwrap();
    assert!(text.starts_with("# experiment="));
    assert!(text.lines().next().unwrap().ends_with("seed=7"));
}

#[test]
fn unsorted_eta_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"experiment":"weak_error","spectrum":[1.0,0.1],"eta_grid":[0.05,0.1,0.025],"horizon":2.0}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = smelab(&[
        "weak-error",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("eta_grid"));
    assert!(!out.exists());
}

#[test]
fn missing_required_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment":"weak_error","spectrum":[1.0,0.1]}"#).unwrap();
    let r = smelab(&["weak-error", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("horizon"));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let r = smelab(&["plot"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let r = smelab(&["selftest", "--seed", "3"]);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS")));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn seed_override_is_echoed_and_output_env_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let r = Command::new(env!("CARGO_BIN_EXE_smelab"))
        .args(["weak-error", "--seed", "11"])
        .env("SMELAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(r.status.success());
    let csv = fs::read_to_string(dir.path().join("weak_error_model1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("# experiment=weak_error_model1 seed=11"));
    assert!(dir.path().join("weak_error_model1.svg").exists());
}
