use std::path::PathBuf;

use nonhyp::config::RunConfig;
use nonhyp::pipeline::{run_until, RunReport, Stage, EXIT_ASSERTION, EXIT_PASS};

fn bundled() -> RunConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_matrix.toml");
    RunConfig::from_path(&p).unwrap()
}

#[test]
fn config_survives_json() {
    let cfg = bundled();
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("two_matrix.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(RunConfig::from_path(&p).unwrap(), cfg);
}

#[test]
fn partial_report_roundtrip() {
    let cfg = bundled();
    let r = run_until(&cfg, Stage::Skeleton);
    assert!(r.failure.is_none());
    assert!(r.skeleton.is_some() && r.blending.is_none());
    assert_eq!(r.exit_code(), EXIT_PASS);
    let s = r.to_json();
    let back: RunReport = serde_json::from_str(&s).unwrap();
    assert_eq!(back.to_json(), s);
}

#[test]
fn rotation_family_stops_at_skeleton() {
    let cfg = RunConfig::from_toml(
        "seed = 1\n[family]\nmaps = [{ kind = \"rotation\", shift = 0.25 }, { kind = \"rotation_matrix\", angle = 0.7 }]\n",
    )
    .unwrap();
    let r = run_until(&cfg, Stage::Measures);
    let f = r.failure.as_ref().unwrap();
    assert_eq!(f.stage, Stage::Skeleton);
    assert_eq!(r.exit_code(), EXIT_ASSERTION);
    assert!(r.cascade.is_none());
}
