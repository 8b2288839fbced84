use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spikecl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikecl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikecl(&["train", "--config", "missing.json", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[io]: "), "{err}");
    assert!(err.contains("missing.json"));
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!dir.path().join("run").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["train", "--bogus"][..], &[], &["frobnicate"], &["sweep", "--ckpt", "x"]] {
        let o = spikecl(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).starts_with("error[usage]: "));
    }
}

#[test]
fn config_typo_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"loss": {"family": "TCL", "lamda": 0.5}}"#).unwrap();
    let o = spikecl(&["train", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: ") && err.contains("lamda"), "{err}");
}

#[test]
fn oracle_check_reports_pass_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikecl(&["oracle-check"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    let summary = out.lines().last().unwrap();
    assert!(summary.starts_with("oracle-check: "));
    let (p, n) = summary["oracle-check: ".len()..].split_once(' ').unwrap().0.split_once('/').unwrap();
    assert_eq!(p, n);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikecl(&["gradcheck", "--seed", "11"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn generate_train_sweep_profile_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("spec.json"),
        r#"{"classes": 3, "samples_per_class": 10, "image_side": 8, "temporal": true, "seed": 3}"#,
    )
    .unwrap();
    assert_eq!(spikecl(&["gen-data", "--spec", "spec.json", "--out", "data"], d).status.code(), Some(0));
    let again = spikecl(&["gen-data", "--spec", "spec.json", "--out", "data"], d);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));
    assert_eq!(spikecl(&["gen-data", "--spec", "spec.json", "--out", "data", "--force"], d).status.code(), Some(0));

    fs::write(
        d.join("cfg.json"),
        r#"{"loss": {"family": "TCL", "lambda": 0.05}, "time_steps": 4,
            "optim": {"epochs": 2, "batch_size": 8},
            "data": {"train": {"path": "data"}, "eval": {"path": "data"}}}"#,
    )
    .unwrap();
    let o = spikecl(&["train", "--config", "cfg.json", "--out", "run", "--seed", "4"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.join("run/best.ck").exists() && d.join("run/last.ck").exists());
    let cfg = fs::read_to_string(d.join("run/config.json")).unwrap();
    assert!(cfg.contains("\"seed\": 4"));
    let o = spikecl(&["train", "--config", "cfg.json", "--out", "run"], d);
    assert_eq!(o.status.code(), Some(2), "non-empty output directory must be refused");

    let o = spikecl(&["sweep", "--ckpt", "run/best.ck", "--data", "data", "--t", "4"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert!(r.starts_with(&format!("{},", i + 1)));
    }
    let again = stdout(&spikecl(&["sweep", "--ckpt", "run/best.ck", "--data", "data"], d));
    assert_eq!(again, csv, "sweep must be side-effect free");

    let ev = stdout(&spikecl(&["eval", "--ckpt", "run/best.ck", "--data", "data"], d));
    assert_eq!(ev.lines().nth(1).unwrap().split(',').nth(1), rows[3].split(',').nth(1));

    let prof = spikecl(&["profile-firing", "--ckpt", "run/best.ck", "--data", "data", "--out", "fire.csv"], d);
    assert_eq!(prof.status.code(), Some(0));
    let fire = fs::read_to_string(d.join("fire.csv")).unwrap();
    assert_eq!(fire.lines().next().unwrap(), "block0,block1,block2,accuracy");

    fs::write(d.join("tcl.csv"), &csv).unwrap();
    assert_eq!(spikecl(&["plot", "--in", "tcl.csv", "--out", "fig.svg"], d).status.code(), Some(0));
    assert!(fs::read_to_string(d.join("fig.svg")).unwrap().starts_with("<svg"));
    assert_eq!(spikecl(&["plot", "--in", "tcl.csv", "--out", "fig.svg"], d).status.code(), Some(2));

    let bad = spikecl(&["eval", "--ckpt", "cfg.json", "--data", "data"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).starts_with("error[format]: "));
}
