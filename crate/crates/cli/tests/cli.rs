use std::process::{Command, Output};

fn solver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solver")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn custom_run_writes_trace_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = solver(&[
        "run",
        "custom",
        "--out",
        out,
        "--seed",
        "4",
        "--set",
        "h=0.125",
        "--set",
        "t_end=0.03",
        "--set",
        "snapshots=0,0.03",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("steps 3"), "{text}");
    assert!(text.contains("factorizations 2"), "{text}");
    let files: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(files.iter().any(|f| f.ends_with(".csv")), "{files:?}");
    assert!(files.iter().any(|f| f.ends_with(".vtk")), "{files:?}");
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nh = 0.125\ndt = 0.02\nt_end = 0.1\nsnapshots =\n").unwrap();
    let out = dir.path().join("out");
    let o = solver(&[
        "run",
        "custom",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "t_end=0.04",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("steps 2"), "{}", stdout(&o));
}

#[test]
fn invalid_input_fails_with_message() {
    let o = solver(&["run", "nonsense"]);
    assert!(!o.status.success());
    let o = solver(&["run", "custom", "--set", "dt=-1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
    let o = solver(&["run", "custom", "--config", "/nonexistent/file.cfg"]);
    assert!(!o.status.success());
}

#[test]
fn oracle_subcommand_passes() {
    let o = solver(&["test-oracles"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() > 100);
    assert!(!text.contains("FAIL"));
}
