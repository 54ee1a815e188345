use std::process::Command;

fn stin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stin"));
    c.env_remove("STIN_SEED");
    c
}

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

fn hash_line(out: &std::process::Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in ["paper_default", "toy_contention", "reduced_heterogeneous", "reduced_same_demand"] {
        let out = stin().args(["--scenario", &scenario(name), "validate-scenario"]).output().unwrap();
        let line = hash_line(&out);
        assert!(line.contains(": ok, hash "), "{line}");
    }
    let out = stin().arg("validate-scenario").output().unwrap();
    assert!(hash_line(&out).starts_with("paper_default: ok"));
}

#[test]
fn invalid_scenario_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "name = \"broken\"\nhorizon = \"many\"\n").unwrap();
    let out = stin().args(["--scenario", broken.to_str().unwrap(), "validate-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let text = std::fs::read_to_string(scenario("toy_contention")).unwrap();
    let inconsistent = dir.path().join("inconsistent.toml");
    std::fs::write(&inconsistent, text.replace("beam_capacity = 1.0", "beam_capacity = -1.0")).unwrap();
    let out = stin().args(["--scenario", inconsistent.to_str().unwrap(), "validate-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = stin().args(["--scenario", "/nonexistent/x.toml", "validate-scenario"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn seed_comes_from_the_environment() {
    let toy = scenario("toy_contention");
    let base = hash_line(&stin().args(["--scenario", &toy, "validate-scenario"]).output().unwrap());
    let env = hash_line(
        &stin()
            .env("STIN_SEED", "99")
            .args(["--scenario", &toy, "validate-scenario"])
            .output()
            .unwrap(),
    );
    let flag = hash_line(&stin().args(["--scenario", &toy, "--seed", "99", "validate-scenario"]).output().unwrap());
    assert_ne!(base, env);
    assert_eq!(env, flag);
}

#[test]
fn simulate_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = stin()
        .args(["--scenario", &scenario("toy_contention"), "--out"])
        .arg(dir.path())
        .args(["simulate", "--scheme", "idoa"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["idoa_slots.csv", "idoa_cdf.csv", "idoa_summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn train_rejects_the_benchmark_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let out = stin()
        .args(["--scenario", &scenario("toy_contention"), "--out"])
        .arg(dir.path())
        .args(["train", "--scheme", "idoa"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
