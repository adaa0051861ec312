use std::path::Path;

use clvae_cli::config::RunConfig;
use clvae_cli::pipeline::{Manifest, Status};
use clvae_cli::report::TimeUnit;
use clvae_cli::{run_pipeline, Stage};
use clvae_core::synth::{generate, AnomalyKind, AnomalySpec, GroupSpec, SynthSpec};

fn write_data(dir: &Path, start_timestamp: i64) {
    let spec = SynthSpec {
        n_timesteps: 800,
        start_timestamp,
        step: 1,
        seed: 3,
        groups: vec![
            GroupSpec {
                n_features: 2,
                period: 40.0,
                amplitude: 1.0,
                noise: 0.1,
                trend: 0.0,
            },
            GroupSpec {
                n_features: 2,
                period: 61.0,
                amplitude: 1.0,
                noise: 0.1,
                trend: 0.0,
            },
        ],
        anomalies: vec![AnomalySpec {
            start: 500,
            length: 6,
            features: vec![1],
            magnitude: 8.0,
            kind: AnomalyKind::LevelShift,
        }],
    };
    let s = generate(&spec).unwrap();
    s.frame.save_csv(dir.join("frame.csv")).unwrap();
    let f = std::fs::File::create(dir.join("labels.csv")).unwrap();
    s.labels.write_csv(s.frame.timestamps(), f).unwrap();
}

fn config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output = dir.join("run");
    cfg.data.train = dir.join("frame.csv");
    cfg.data.labels = Some(dir.join("labels.csv"));
    cfg.model.hidden = 6;
    cfg.model.latent = 2;
    cfg.model.beta = 0.01;
    cfg.model.train.epochs = 2;
    cfg.threshold.window = Some(200);
    cfg.attribution.repeats = 1;
    cfg
}

#[test]
fn single_cluster_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path(), 0);
    let mut cfg = config(tmp.path());
    cfg.clustering.k = Some(1);
    let m = run_pipeline(&cfg, None).unwrap();
    let run = &cfg.output;
    assert!(run.join("models/cluster_0.json").exists());
    assert!(!run.join("models/cluster_1.json").exists());
    for name in [
        "cleaning_report.json",
        "clustering.json",
        "scores.csv",
        "thresholds.csv",
        "eval.json",
        "report/scores.svg",
        "report/yearly_anomalies.csv",
        "config.toml",
        "manifest.json",
    ] {
        assert!(run.join(name).exists(), "{name} missing");
    }
    assert_eq!(m.stages.len(), 9);
    assert!(m
        .stages
        .iter()
        .filter(|r| r.stage != Stage::Explain)
        .all(|r| r.status == Status::Complete));
    assert_eq!(Manifest::load(run).unwrap(), m);
}

#[test]
fn rerun_from_threshold_keeps_models() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path(), 0);
    let mut cfg = config(tmp.path());
    cfg.attribution.enabled = false;
    let first = run_pipeline(&cfg, None).unwrap();
    let model_bytes = std::fs::read(cfg.output.join("models/cluster_0.json")).unwrap();
    cfg.threshold.q = 1e-2;
    let second = run_pipeline(&cfg, Some(Stage::Threshold)).unwrap();
    assert_eq!(std::fs::read(cfg.output.join("models/cluster_0.json")).unwrap(), model_bytes);
    assert_eq!(first.stage(Stage::Train), second.stage(Stage::Train));
    assert_eq!(second.config.threshold.q, 1e-2);
}

#[test]
fn day_timestamps_counted_per_calendar_year() {
    let tmp = tempfile::tempdir().unwrap();
    // 2019-06-01 as days since 1970-01-01; 800 days reach into 2021.
    write_data(tmp.path(), 18_048);
    let mut cfg = config(tmp.path());
    cfg.clustering.k = Some(2);
    cfg.attribution.enabled = false;
    cfg.report.time_unit = TimeUnit::Days;
    run_pipeline(&cfg, None).unwrap();
    let text = std::fs::read_to_string(cfg.output.join("report/yearly_anomalies.csv")).unwrap();
    let years: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(years, ["2019", "2020", "2021"]);
}

#[test]
fn report_without_thresholds_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let err = clvae_cli::report::emit_report(tmp.path(), TimeUnit::Index).unwrap_err();
    assert!(format!("{err:#}").contains("threshold"));
}

#[test]
fn missing_input_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let err = run_pipeline(&cfg, None).unwrap_err();
    assert!(format!("{err:#}").contains("does not exist"));
    assert!(!cfg.output.exists());
}
