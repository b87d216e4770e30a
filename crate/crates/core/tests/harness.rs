use qho_birkhoff::harness::{emit_plots, run_pipeline, ExperimentConfig, RunManifest, MANIFEST_FILE, SLOPE_FILE};
use qho_birkhoff::Error;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::minimal(dir);
    c.dt_study = vec![0.02, 0.01];
    c
}

#[test]
fn pipeline_writes_artifacts_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(&small(dir.path())).unwrap();
    for f in [
        "frequencies.csv",
        "violations.csv",
        "divisors.csv",
        "perturbation.csv",
        "drift_vs_eps.csv",
        SLOPE_FILE,
        "energy_vs_dt.csv",
        "overlap_ratios.csv",
        "summary.md",
        "normal_form/manifest.json",
    ] {
        assert!(m.files.iter().any(|x| x == f), "missing {f}");
        assert!(dir.path().join(f).exists());
    }
    let mut sorted = m.files.clone();
    sorted.sort();
    assert_eq!(sorted, m.files);
    let slope: f64 = std::fs::read_to_string(dir.path().join(SLOPE_FILE))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(slope.is_finite());
    assert!(m.value("normal_form", "terminal_residual").unwrap() < 1e-10);
    assert!(m.value("normal_form", "smoothing_ratio_3").unwrap() <= 1.0 + 1e-12);
    assert_eq!(RunManifest::load(dir.path()).unwrap(), m);

    let plots = emit_plots(dir.path()).unwrap();
    assert_eq!(plots.files.len(), 4);
    assert!(plots.warnings.is_empty());
    for p in &plots.files {
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("<svg") || text.contains("<svg"));
    }
}

#[test]
fn identical_configs_give_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(a.path());
    ca.dt_study.clear();
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    let ma = run_pipeline(&ca).unwrap();
    let mb = run_pipeline(&cb).unwrap();
    assert_eq!(ma.stages, mb.stages);
    assert_eq!(ma.files, mb.files);
    for f in &ma.files {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let mut ma2 = ma.clone();
    ma2.config.output_dir = cb.output_dir.clone();
    assert_eq!(ma2, mb);
}

#[test]
fn order_below_three_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.order = 2;
    assert!(matches!(run_pipeline(&c), Err(Error::Config(_))));
    assert!(!dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn empty_eps_list_warns_without_drift_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.eps_list.clear();
    c.dt_study.clear();
    run_pipeline(&c).unwrap();
    let plots = emit_plots(dir.path()).unwrap();
    assert_eq!(plots.warnings.len(), 1);
    assert!(!dir.path().join("plots/drift_vs_eps.svg").exists());
}

#[test]
fn plots_without_manifest_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_plots(dir.path()), Err(Error::MissingInput(_))));
}
