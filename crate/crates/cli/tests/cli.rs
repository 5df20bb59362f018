use std::process::Command;

fn dode() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dode"))
}

#[test]
fn simulate_then_run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("diamond");
    let status = dode()
        .args([
            "--log",
            "warn",
            "simulate",
            "--template",
            "diamond",
            "--days",
            "6",
            "--out",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    let config = data.join("config.toml");
    assert!(config.is_file());

    let out = dode()
        .args(["--log", "warn", "run", "--config"])
        .arg(&config)
        .args(["--solver.epochs", "50", "--run.workers=1"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean link-flow R2"), "{stdout}");
    assert!(data.join("out/od_estimates").is_dir());
    assert!(data.join("out/report/summary.json").is_file());

    let bad = dode()
        .args(["--log", "off", "estimate", "--config"])
        .arg(&config)
        .args(["--solver.no_such_key", "1"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
}

#[test]
fn unknown_template_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dode()
        .args(["simulate", "--template", "grid", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario template"));
}
