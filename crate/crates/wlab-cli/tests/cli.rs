use std::path::Path;
use std::process::{Command, Output};

fn wlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wlab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_HLS: &str = r#"
id = "small"
experiment = "hls"
seed = 2
[grid]
dim = 1
extent = 1.0
points = 32
weight = { kind = "power", beta = 0.5, dimension = 1 }
[ladder]
refinements = 2
extents = [1.0]
[corpus]
random = 4
eigen_combos = 2
"#;

#[test]
fn passing_run_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/weights.toml");
    let o = wlab(&["weights", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("weights.json")).unwrap()).unwrap();
    assert_eq!(json["verdicts"][0]["status"], "pass");
    let csv = std::fs::read_to_string(out.join("weights.classes.csv")).unwrap();
    assert!(csv.starts_with("beta,class,constant,diverged,member,agree"));
    assert_eq!(csv.lines().count(), 19);
}

#[test]
fn assemble_exports_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.toml",
        r#"
id = "op"
[grid]
dim = 1
extent = 2.0
points = 16
weight = { kind = "power", beta = 0.5, dimension = 1 }
[ladder]
refinements = 3
extents = [1.0]
"#,
    );
    let out = dir.path().join("o");
    let o = wlab(&["assemble", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c < 2), "{}", String::from_utf8_lossy(&o.stderr));
    let s = std::fs::read_to_string(out.join("op.X2_N16.stiffness.mtx")).unwrap();
    assert!(s.starts_with("%%matrixmarket matrix coordinate real general"));
    // tridiagonal: 16 + 2·15 entries
    assert!(s.lines().any(|l| l.trim() == "16 16 46"));
    let m = std::fs::read_to_string(out.join("op.X2_N64.mass.mtx")).unwrap();
    assert!(m.lines().any(|l| l.trim() == "64 64 64"));
}

#[test]
fn failing_verdict_exits_one_and_breach_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    let sharp = write(
        dir.path(),
        "s.toml",
        r#"
id = "sharp"
[grid]
dim = 1
extent = 1.0
points = 32
weight = { kind = "power", beta = -0.75, dimension = 1 }
[sharpness]
halvings = 1
control_beta = 0.5
"#,
    );
    assert_eq!(wlab(&["sharpness", "--config", &sharp, "--out", o]).status.code(), Some(1));

    // an impossible route tolerance turns agreement into an oracle breach
    let strict = write(dir.path(), "b.toml", &format!("{SMALL_HLS}[tolerances]\nroute = 0.0\n").replace("\"small\"", "\"strict\""));
    assert_eq!(wlab(&["hls", "--config", &strict, "--out", o]).status.code(), Some(2));

    let r = wlab(&["report", "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("BREACH") && text.contains("FAIL"));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn seed_and_refine_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", SMALL_HLS);
    let run = |extra: &[&str], sub: &str| {
        let out = dir.path().join(sub);
        let mut args = vec!["hls", "--config", cfg.as_str(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(wlab(&args).status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("small.json")).unwrap()).unwrap();
        v
    };
    let a = run(&[], "a");
    let b = run(&["--seed", "9"], "b");
    let c = run(&["--refine", "1"], "c");
    assert_eq!(b["config"]["seed"], 9);
    assert_ne!(a["tables"], b["tables"]);
    let rows = |v: &serde_json::Value| v["tables"][0]["rows"].as_array().unwrap().len();
    assert_eq!((rows(&a), rows(&c)), (2, 3));
}

#[test]
fn usage_errors_do_not_collide_with_breach() {
    assert_eq!(wlab(&["nonsense"]).status.code(), Some(1));
    assert_eq!(wlab(&["hls"]).status.code(), Some(1));
    assert_eq!(wlab(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", SMALL_HLS);
    // the config names a different experiment
    let o = wlab(&["lorentz", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("is a hls config"));
}
