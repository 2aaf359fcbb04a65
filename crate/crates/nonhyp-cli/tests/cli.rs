use std::path::PathBuf;
use std::process::{Command, Output};

fn nonhyp(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nonhyp"));
    cmd.args(args).env_remove("NONHYP_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn bundled() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_matrix.toml").display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn dry_run_prints_resolved_config() {
    let o = nonhyp(&["--dry-run", "run", "--config", &bundled()], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 7);
    assert_eq!(v["cascade"]["schedule"], serde_json::json!([4, 4]));
    // defaults appear explicitly
    assert_eq!(v["measures"]["reference_factor"], 10);
    assert_eq!(v["suspension"]["ld_eps"], 0.2);
}

#[test]
fn seed_override_on_the_command_line() {
    let o = nonhyp(&["--dry-run", "run", "--config", &bundled(), "--seed", "11"], &[]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 11);
}

#[test]
fn config_errors_exit_4() {
    let missing_seed = scratch("no_seed.toml", "[family]\nmaps = [{ kind = \"diag\", sigma = 0.5 }, { kind = \"rotation\", shift = 0.1 }]\n");
    let o = nonhyp(&["run", "--config", missing_seed.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));
    let unknown = scratch("unknown.toml", "seed = 1\ncolour = 3\n[family]\nmaps = [{ kind = \"diag\", sigma = 0.5 }, { kind = \"rotation\", shift = 0.1 }]\n");
    let o = nonhyp(&["run", "--config", unknown.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));
    let o = nonhyp(&["run", "--config", "/nonexistent/config.toml"], &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn pure_rotations_fail_at_the_skeleton() {
    let cfg = scratch(
        "rotations.toml",
        "seed = 3\n[family]\nmaps = [{ kind = \"rotation_matrix\", angle = 1.0 }, { kind = \"rotation_matrix\", angle = 2.0 }]\n",
    );
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("rotations.json");
    let o = nonhyp(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["failure"]["stage"], "skeleton");
    assert!(v["measure"]["alpha_hat"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn codes_check_reports_decodings() {
    let f = scratch("code.json", r#"{"N": 2, "words": [[1, 2, 1], [1, 2, 2], [2, 1], [2, 2, 1]]}"#);
    let o = nonhyp(&["codes", "check", f.to_str().unwrap(), "--samples", "5"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("disjoint true"));
    assert!(s.contains("R 3"));
    let counts: Vec<usize> = s
        .lines()
        .filter(|l| l.starts_with("sample"))
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 5);
    assert!(counts.iter().all(|&c| (1..=3).contains(&c)));

    let f = scratch("prefix.json", r#"{"N": 2, "words": [[1], [1, 2]]}"#);
    let o = nonhyp(&["codes", "check", f.to_str().unwrap()], &[]);
    assert!(stdout(&o).contains("disjoint false"));
}

#[test]
fn lyapunov_csv_is_thread_independent() {
    let f = scratch("diag.json", r#"{"matrices": [[2, 0, 0, 0.5], [2, 0, 0, 0.5]]}"#);
    let args = ["lyapunov", "--config", f.to_str().unwrap(), "--n", "1000", "--trials", "6", "--seed", "5"];
    let one = nonhyp(&[&["--threads", "1"], &args[..]].concat(), &[]);
    let two = nonhyp(&args, &[("NONHYP_THREADS", "2")]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, two.stdout);
    let mut r = csv::Reader::from_reader(one.stdout.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["trial", "lambda1"]);
    let rows: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|l| (l - 2f64.ln()).abs() < 1e-9));
}
