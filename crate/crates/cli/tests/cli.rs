use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn amis_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amis-lab")).args(args).env_remove("AMIS_SEED").output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    format!("--output_dir={}", dir.display())
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn estimate_writes_theta_n() {
    let d = TempDir::new().unwrap();
    let o = amis_lab(&["estimate", "--problem=quad_gauss_1d", "--n=10000", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(d.path(), "summary.json")).unwrap();
    assert!(summary["theta_n"].as_f64().unwrap() > 0.9);
    assert!(read(d.path(), "profile.csv").lines().count() == 102);
}

#[test]
fn missing_problem_is_a_config_error() {
    let d = TempDir::new().unwrap();
    let o = amis_lab(&["estimate", "--n=100", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("problem"));
}

#[test]
fn config_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    for args in [
        vec!["clt", "--problem=quad_gauss_1d", "--replications=10"],
        vec!["estimate", "--problem=nope"],
        vec!["estimate", "--problem=quad_gauss_1d", "--unknown_key=1"],
        vec!["tailbound", "--problem=quad_gauss_1d", "--x_eval=[[2.0]]"],
        vec!["bogus"],
    ] {
        let mut a = args.clone();
        let o_arg = out_arg(d.path());
        a.push(&o_arg);
        assert_eq!(amis_lab(&a).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_env_seed_and_override_precedence() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"problem":"abs_uniform_1d","n":500,"seed":1}"#).unwrap();
    let run = |dir: &str, env: Option<&str>, extra: &[&str]| {
        let out = d.path().join(dir);
        let mut c = Command::new(env!("CARGO_BIN_EXE_amis-lab"));
        c.args(["estimate", "--config", cfg.to_str().unwrap()]).arg(out_arg(&out)).args(extra);
        match env {
            Some(s) => c.env("AMIS_SEED", s),
            None => c.env_remove("AMIS_SEED"),
        };
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
        (v["seed"].as_u64().unwrap(), v["n"].as_u64().unwrap())
    };
    assert_eq!(run("a", None, &[]), (1, 500));
    assert_eq!(run("b", Some("7"), &[]), (7, 500));
    assert_eq!(run("c", Some("7"), &["--seed=9", "--n", "300"]), (9, 300));
}

#[test]
fn tailbound_rows_and_skips() {
    let d = TempDir::new().unwrap();
    let o = amis_lab(&[
        "tailbound",
        "--problem=abs_uniform_1d",
        "--n=100",
        "--epsilon=0.2",
        "--x_eval=[[0.5]]",
        "--replications=100",
        &out_arg(d.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let table = read(d.path(), "bounds.csv");
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().contains(",ok,"));

    let o = amis_lab(&[
        "tailbound",
        "--problem=abs_uniform_1d",
        "--n=100",
        "--epsilon=0.2,5.0",
        "--x_eval=[[0.5]]",
        "--replications=100",
        &out_arg(d.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let table = read(d.path(), "bounds.csv");
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("skipped: ε = 5"), "{table}");
}

#[test]
fn multi_minimizer_clt_reports_without_verdict() {
    let d = TempDir::new().unwrap();
    let problem = d.path().join("dw.json");
    fs::write(
        &problem,
        r#"{"name":"double_well","template":{"kind":"double_well","offset":1.0,"reference_sd":1.5},"domain":{"lo":[0.0],"hi":[1.0]}}"#,
    )
    .unwrap();
    let o = amis_lab(&["clt", &format!("--problem={}", problem.display()), "--n=256", "--replications=100", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "normality.json")).unwrap();
    assert!(v["reference_law"].is_null());
    assert!(v.get("passed").is_none());
    assert!(v["distribution"]["median"].is_f64());
    assert_eq!(read(d.path(), "replications.csv").lines().count(), 101);
}

#[test]
fn conditions_and_verification() {
    let d = TempDir::new().unwrap();
    let o = amis_lab(&["conditions", "--problem=quad_gauss_1d", "--n_schedule=1000,4000", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "conditions.json")).unwrap();
    assert_eq!(v["diagnostics"]["quadratic_variation_path"].as_array().unwrap().len(), 2);
    let o = amis_lab(&["verify-problem", "--problem=xdep_density_1d", &out_arg(d.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(read(d.path(), "verification.json").contains("\"passed\": true"));
}

#[test]
fn failing_checks_exit_with_four() {
    let d = TempDir::new().unwrap();
    let problem = d.path().join("shifted.json");
    // With the anchor away from the minimizer, the objective-scaled variance
    // is off by (f(x̂)/f(x₀))² = 1/4 for this integrand, so the KS test fails.
    fs::write(&problem, r#"{"name":"shifted","base":"abs_uniform_1d","anchor":[0.0]}"#).unwrap();
    let o = amis_lab(&[
        "clt",
        &format!("--problem={}", problem.display()),
        "--variance_mode=B3_prime",
        "--n=256",
        "--replications=400",
        &out_arg(d.path()),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "normality.json")).unwrap();
    assert_eq!(v["passed"], serde_json::Value::Bool(false));
}
