use std::process::Command;

fn qhonf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qhonf"))
}

#[test]
fn overlap_of_three_ground_states() {
    let out = qhonf().args(["overlap", "--indices", "1,1,1"]).output().unwrap();
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 0.613_291_438_903_102).abs() < 1e-14);
}

#[test]
fn pipeline_then_plots() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = qhonf()
        .args(["pipeline", "--cutoff", "4", "--order", "3", "--output-dir"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("criterion  7: pass"));
    let out = qhonf().arg("plots").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(run.join("plots/drift_vs_eps.svg").exists());
}

#[test]
fn config_file_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = qhonf().args(["pipeline", "--order", "2"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("order r must be ≥ 3"));
    std::fs::write(&cfg, r#"{"cutoff": 4, "order": 3}"#).unwrap();
    let out = qhonf().arg("resonance").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn resonance_and_normalform_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = qhonf()
        .args(["resonance", "--unperturbed", "--cutoff", "10", "--order", "4", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert!(csv.starts_with("arity,split,indices,omega,S,mu"));
    let out = qhonf()
        .args(["normalform", "--cutoff", "4", "--order", "4", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("normal_form/chi_4.csv").exists());
}
