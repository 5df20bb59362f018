use std::path::Path;

use chrono::NaiveDate;

use dode::oracle::{make_dataset, write_dataset, SimMode, Template};
use dode::pipeline::{Pipeline, PipelineConfig, Stage};
use dode::Error;

fn dataset(dir: &Path, days: usize) -> PipelineConfig {
    let start = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
    let ds = make_dataset(Template::Diamond, days, start, 10.0, 11).unwrap();
    write_dataset(dir, &ds, None, SimMode::Deterministic, 11).unwrap();
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        PipelineConfig::synthetic(Template::Diamond, ds.grid, days)
            .to_toml()
            .unwrap(),
    )
    .unwrap();
    PipelineConfig::load(&path, &[]).unwrap()
}

fn estimates(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(dir.join("od_estimates"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn bad_config_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dataset(dir.path(), 6);
    cfg.input.network = dir.path().join("missing.json");
    let err = Pipeline::new(cfg.clone())
        .err()
        .expect("missing network must fail");
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!cfg.output.dir.exists());

    let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let overrides = vec![("solver.epochz".to_string(), "3".to_string())];
    assert!(PipelineConfig::from_toml(&text, &overrides, dir.path()).is_err());
    let overrides = vec![("choice.theta".to_string(), "-1".to_string())];
    let cfg = PipelineConfig::from_toml(&text, &overrides, dir.path()).unwrap();
    assert!(Pipeline::new(cfg).is_err());
}

#[test]
fn warm_cache_and_worker_count_do_not_change_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dataset(dir.path(), 6);
    cfg.solver.epochs = 200;
    cfg.output.dir = dir.path().join("cold");
    cfg.run.workers = 1;
    Pipeline::new(cfg.clone())
        .unwrap()
        .run(Stage::Estimate)
        .unwrap();
    let cold = estimates(&cfg.output.dir);
    assert!(cfg.output.dir.join("dar").read_dir().unwrap().count() > 0);

    // Second run reuses the DAR and assignment caches.
    Pipeline::new(cfg.clone())
        .unwrap()
        .run(Stage::Estimate)
        .unwrap();
    assert_eq!(estimates(&cfg.output.dir), cold);

    let mut par = cfg.clone();
    par.output.dir = dir.path().join("par");
    par.run.workers = 3;
    Pipeline::new(par.clone())
        .unwrap()
        .run(Stage::Estimate)
        .unwrap();
    assert_eq!(estimates(&par.output.dir), cold);

    // A changed route-choice parameter invalidates the assignment cache.
    let mut changed = cfg.clone();
    changed.choice.theta = 0.05;
    Pipeline::new(changed)
        .unwrap()
        .run(Stage::Estimate)
        .unwrap();
    assert_ne!(estimates(&cfg.output.dir), cold);
}

#[test]
fn full_run_writes_reports_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dataset(dir.path(), 8);
    cfg.solver.epochs = 200;
    cfg.crossval.holdout = vec![NaiveDate::from_ymd_opt(2024, 3, 6).unwrap()];
    cfg.report
        .od_groups
        .insert("all".into(), vec!["O->D".into()]);
    let out = cfg.output.dir.clone();
    let outcome = Pipeline::new(cfg).unwrap().run(Stage::Report).unwrap();
    let quality = outcome.quality.unwrap();
    assert_eq!(outcome.estimates.len(), 8);
    assert_eq!(quality.crossval.len(), 1);
    assert!(quality.mean_r2.unwrap() > 0.9);
    for f in [
        "metrics.json",
        "paths.json",
        "patterns/days.csv",
        "metrics/dar_distance.csv",
        "report/profiles.csv",
        "report/monthly.csv",
        "report/od_correlation.csv",
        "report/summary.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn stages_stop_where_asked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 6);
    let out = cfg.output.dir.clone();
    let outcome = Pipeline::new(cfg).unwrap().run(Stage::Cluster).unwrap();
    assert!(outcome.registry.is_some());
    assert!(outcome.estimates.is_empty());
    assert!(out.join("ingest/counts_clean.csv").is_file());
    assert!(!out.join("od_estimates").exists());
}
