use std::path::Path;
use std::process::{Command, Output};

fn choreo(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choreo"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn parse_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&choreo(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&choreo(dir.path(), &["gen", "sample", "--scale", "2"])), 1);
    assert_eq!(code(&choreo(dir.path(), &["--help"])), 0);
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = choreo(dir.path(), &["--seed", "42", "show-config"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["bank_threshold"], 0.8);
}

#[test]
fn bad_config_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"bank_threshold": 1.5}"#).unwrap();
    let o = choreo(dir.path(), &["--config", cfg.to_str().unwrap(), "pipeline"]);
    assert_eq!(code(&o), 1);
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(code(&choreo(dir.path(), &["--config", cfg.to_str().unwrap(), "show-config"])), 1);
}

#[test]
fn evaluation_without_checkpoints_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = choreo(dir.path(), &["kps"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("evaluate"), "{err}");
    let o = choreo(dir.path(), &["gen", "sample", "--music", "null", "--text", "jump", "--out", "x.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("backbone"));
}

#[test]
fn oracle_protocol_and_predicate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"corpus_md": {"size": 8}, "corpus_td": {"size": 8}}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let o = choreo(dir.path(), &["--config", c, "synth"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = choreo(dir.path(), &["--config", c, "synth"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("up to date"));

    let o = choreo(dir.path(), &["--config", c, "kps", "run", "--generator", "oracle", "-R", "1", "-G", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reports/kps-oracle.json")).unwrap()).unwrap();
    assert_eq!(report["data"]["macro_average"]["lift"], 1.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Macro-average"));

    let motion = std::fs::read_dir(dir.path().join("corpora/md"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("_crouch.json"))
        .expect("a crouch clip");
    let m = motion.to_str().unwrap();
    let o = choreo(dir.path(), &["kps", "predicate", "--name", "crouch", "--motion", m]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["passed"], true);
    assert_eq!(code(&choreo(dir.path(), &["kps", "predicate", "--name", "moonwalk", "--motion", m])), 1);
}
