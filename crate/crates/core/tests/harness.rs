mod common;

use std::collections::HashSet;

use common::toy_manifest;
use iqa_core::ensemble::{EnsembleConfig, LabeledImage, TrainOptions};
use iqa_core::harness::{
    assert_no_leakage, cross_dataset, residual_report, run_experiment, split_seed, t_test_superiority, EnsemblePipeline,
    Experiment, ExperimentSettings, HarnessError, PipelineConfig, RunConfig,
};
use iqa_core::net::layers::Padding;
use iqa_core::net::LayerSpec;
use iqa_core::stats::median;
use iqa_core::RngStream;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn tiny_pipeline() -> EnsemblePipeline {
    let same = |ci, co, k| LayerSpec::Conv2d { in_channels: ci, out_channels: co, kernel: k, stride: 2, dilation: 1, padding: Padding::SameZero };
    let model = EnsembleConfig {
        input_size: 16,
        branch_a: vec![same(3, 4, 3), LayerSpec::Relu],
        branch_b: vec![same(3, 4, 5), LayerSpec::Relu],
        head_widths: vec![8, 1],
        ..EnsembleConfig::default()
    };
    EnsemblePipeline::scratch(PipelineConfig {
        model,
        train: TrainOptions { epochs: 2, batch_size: 8, val_crops: 1, ..Default::default() },
        n_crops: 2,
        monitor_validation: false,
        ..Default::default()
    })
}

fn sort_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn check_protocol(data: &[LabeledImage], e: &Experiment, repeats: usize) {
    assert_eq!((e.summary.completed, e.summary.failed), (repeats, 0));
    let all: HashSet<&str> = data.iter().map(|d| d.id.as_str()).collect();
    for (i, s) in e.splits.iter().enumerate() {
        assert_eq!(s.index, i);
        assert_eq!(s.seed, split_seed(e.summary.metadata.base_seed, i));
        let train: HashSet<&str> = s.train_ids.iter().map(String::as_str).collect();
        let test: HashSet<&str> = s.test_ids.iter().map(String::as_str).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.union(&test).copied().collect::<HashSet<_>>(), all);
        assert_eq!(train.len(), (0.8 * data.len() as f64).round() as usize);
    }
    let plcc: Vec<f64> = e.splits.iter().map(|s| s.report.plcc).collect();
    let srocc: Vec<f64> = e.splits.iter().map(|s| s.report.srocc).collect();
    assert_eq!(e.summary.plcc.as_ref().unwrap().median, sort_median(plcc));
    assert_eq!(e.summary.srocc.as_ref().unwrap().median, sort_median(srocc));
}

#[test]
fn repeated_experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_manifest(dir.path(), 2, 40, 5);
    let pipe = tiny_pipeline();
    let settings = ExperimentSettings { repeats: 10, base_seed: 17, ..Default::default() };
    let a = run_experiment(&data, &pipe, &settings).unwrap();
    check_protocol(&data, &a, 10);
    let b = run_experiment(&data, &pipe, &settings).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());

    let threaded = ExperimentSettings { threads: 2, ..settings };
    let c = run_experiment(&data, &pipe, &threaded).unwrap();
    let d = run_experiment(&data, &pipe, &threaded).unwrap();
    assert_eq!(serde_json::to_vec(&c).unwrap(), serde_json::to_vec(&d).unwrap());
    assert_eq!(serde_json::to_vec(&c.splits).unwrap(), serde_json::to_vec(&a.splits).unwrap());

    let other = run_experiment(&data, &pipe, &ExperimentSettings { base_seed: 18, ..settings }).unwrap();
    assert_ne!(other.splits[0].test_ids, a.splits[0].test_ids);
}

#[test]
fn residual_files_follow_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_manifest(dir.path(), 1, 40, 2);
    let e = run_experiment(&data, &tiny_pipeline(), &ExperimentSettings { repeats: 1, ..Default::default() }).unwrap();
    let split = &e.splits[0];
    for r in &split.residuals {
        assert_eq!(r.residual, r.predicted - r.subjective);
    }
    let out = dir.path().join("res");
    std::fs::create_dir_all(&out).unwrap();
    let files = residual_report(split, &out).unwrap();
    assert_eq!(files.len(), 3);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count(), split.residuals.len() + 1);
}

#[test]
fn leakage_and_duplicates_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_manifest(dir.path(), 1, 40, 3);
    assert!(assert_no_leakage(&data[..10], &data[10..]).is_ok());
    match assert_no_leakage(&data[..10], &data[8..12]) {
        Err(HarnessError::Leakage(ids)) => assert_eq!(ids, vec![data[8].id.clone(), data[9].id.clone()]),
        other => panic!("{other:?}"),
    }
    let mut dup = data.clone();
    dup.push(data[0].clone());
    let r = run_experiment(&dup, &tiny_pipeline(), &ExperimentSettings { repeats: 1, ..Default::default() });
    assert!(matches!(r, Err(HarnessError::DuplicatePath(_))));
    let r = cross_dataset(&[&data[..20]], &data[15..], &tiny_pipeline(), 0);
    assert!(matches!(r, Err(HarnessError::Leakage(_))));
    assert!(cross_dataset(&[&data[..10], &data[10..20]], &data[20..], &tiny_pipeline(), 0).is_ok());
}

#[test]
fn null_rejection_rate_is_calibrated() {
    let mut rng = RngStream::new(99, 0);
    let alpha = 0.05;
    let trials = 1000;
    let mut rejected = 0;
    for _ in 0..trials {
        let sample: Vec<f64> = (0..10).map(|_| 0.8 + 0.03 * rng.normal()).collect();
        if t_test_superiority(&sample, 0.8, alpha).unwrap().verdict != 0 {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    assert!(rate <= alpha + 0.02, "{rate}");
}

#[test]
fn textbook_t_statistic() {
    // n = 10, mean 0.5, sample sd 0.1.
    let d = 0.009f64.sqrt();
    let sample: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.5 + d } else { 0.5 - d }).collect();
    let t = t_test_superiority(&sample, 0.45, 0.05).unwrap();
    assert!((t.mean - 0.5).abs() < 1e-15);
    assert!((t.sd - 0.1).abs() < 1e-15);
    assert_eq!((t.t * 1e4).round() / 1e4, 1.5811);
    assert_eq!(t.verdict, 0);
    let oracle = StudentsT::new(0.0, 1.0, 9.0).unwrap();
    assert!((t.p_greater - (1.0 - oracle.cdf(t.t))).abs() < 1e-10);
    assert!((t.p_greater - 0.074).abs() < 5e-4);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
}

#[test]
fn run_config_round_trips() {
    let text = "[data]\nmanifest = \"set.csv\"\nscore_lo = 1.0\nscore_hi = 5.0\n\n[experiment]\nrepeats = 3\n\n[pipeline]\nn_crops = 4\n\n[pipeline.loss]\nkind = \"logcosh\"\n";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.experiment.repeats, 3);
    assert_eq!(cfg.pipeline.n_crops, 4);
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    assert!(RunConfig::parse("[experiment]\ntrain_fraction = 1.5\n").is_err());
}
