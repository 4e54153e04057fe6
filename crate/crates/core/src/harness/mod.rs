//! Experiment orchestration: repeated random splits with median reporting,
//! cross-dataset runs and ablation sweeps.
//!
//! A split's pipeline is train → crop-averaged prediction → metrics. The
//! training step is pluggable through [`Pipeline`] so that degenerate
//! predictors can be pushed through the same protocol.

pub mod config;
pub mod manifest;
pub mod residuals;
pub mod significance;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    ablate, build_regressor, finetune, predict_image, transfer_to_regressor, AblationVariant, EnsembleConfig,
    EnsembleError, EnsembleModel, EpochLog, LabeledImage, Task, TrainOptions, DEFAULT_CROPS,
};
use crate::metrics::{MetricError, MetricReport, RmseDenominator, ScorePair};
use crate::net::{LossKind, LossSpec};
use crate::rng::RngStream;
use crate::stats::median;

pub use config::RunConfig;
pub use manifest::{load_manifest, split_indices, Manifest, SampleRecord};
pub use residuals::{box_stats, boxplot_csv, probability_plot, residual_report, BoxStats};
pub use significance::{significance_matrix, t_test_superiority, TTest};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("score {score} for {path} outside declared range [{lo}, {hi}]")]
    Range { path: String, score: f64, lo: f64, hi: f64 },
    #[error("duplicate path {0} in manifest")]
    DuplicatePath(String),
    #[error("split: {0}")]
    Split(String),
    #[error("test images leaked into training: {0:?}")]
    Leakage(Vec<String>),
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("no ablation variants given")]
    NoVariants,
    #[error("t-test: {0}")]
    TTest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Trains on one side of a split and predicts the other.
pub trait Pipeline: Sync {
    fn fit_predict(&self, train: &[LabeledImage], test: &[LabeledImage], seed: u64) -> Result<Fitted, HarnessError>;

    /// Recorded in run metadata.
    fn describe(&self) -> serde_json::Value;
}

#[derive(Clone, Debug, Default)]
pub struct Fitted {
    pub predictions: Vec<f64>,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: EnsembleConfig,
    pub loss: LossSpec,
    pub train: TrainOptions,
    pub n_crops: usize,
    pub variant: AblationVariant,
    pub reinit_ablated: bool,
    /// Score the held-out side every epoch for the training log.
    pub monitor_validation: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: EnsembleConfig::default(),
            loss: LossSpec::new(LossKind::Mse),
            train: TrainOptions::default(),
            n_crops: DEFAULT_CROPS,
            variant: AblationVariant::Full,
            reinit_ablated: false,
            monitor_validation: true,
        }
    }
}

/// Fine-tunes either a fresh regressor or a copy of `base` (a pretrained
/// model, transferred on the fly if it still has a classification head).
#[derive(Clone, Debug)]
pub struct EnsemblePipeline {
    pub config: PipelineConfig,
    pub base: Option<EnsembleModel>,
}

impl EnsemblePipeline {
    pub fn scratch(config: PipelineConfig) -> Self {
        Self { config, base: None }
    }

    pub fn from_base(config: PipelineConfig, base: EnsembleModel) -> Self {
        Self { config, base: Some(base) }
    }

    pub fn with_variant(&self, variant: AblationVariant) -> Self {
        let mut p = self.clone();
        p.config.variant = variant;
        p
    }

    pub fn fit(&self, train: &[LabeledImage], val: Option<&[LabeledImage]>, seed: u64) -> Result<(EnsembleModel, Vec<EpochLog>), HarnessError> {
        let start = match &self.base {
            Some(m) if m.task == Task::Regressor => m.clone(),
            Some(m) => transfer_to_regressor(m)?,
            None => build_regressor(&self.config.model, seed)?,
        };
        let start = ablate(&start, self.config.variant, self.config.reinit_ablated)?;
        let mut rng = RngStream::new(seed, 0x7121);
        let val = val.filter(|_| self.config.monitor_validation);
        Ok(finetune(&start, train, val, &self.config.loss, "split", &self.config.train, &mut rng)?)
    }
}

impl Pipeline for EnsemblePipeline {
    fn fit_predict(&self, train: &[LabeledImage], test: &[LabeledImage], seed: u64) -> Result<Fitted, HarnessError> {
        let (model, log) = self.fit(train, Some(test), seed)?;
        let mut rng = RngStream::new(seed, 0xC209);
        let predictions = test
            .iter()
            .map(|s| predict_image(&model, &s.raster, self.config.n_crops, &mut rng))
            .collect::<Result<_, _>>()?;
        Ok(Fitted { predictions, log })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "pipeline": "ensemble",
            "config": self.config,
            "base_provenance": self.base.as_ref().map(|m| m.provenance.clone()),
            "augmentations": crate::raster::Augmentation::KINDS,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub image_id: String,
    pub subjective: f64,
    pub predicted: f64,
    /// `y_P − y_S`
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub index: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub report: MetricReport,
    pub residuals: Vec<Residual>,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
    pub histogram: Vec<HistBin>,
}

pub const SUMMARY_HIST_BINS: usize = 10;

impl MetricStats {
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let bins = if max > min { SUMMARY_HIST_BINS } else { 1 };
        let width = (max - min) / bins as f64;
        let mut histogram: Vec<HistBin> = (0..bins)
            .map(|b| HistBin {
                lo: min + b as f64 * width,
                hi: if b + 1 == bins { max } else { min + (b + 1) as f64 * width },
                count: 0,
            })
            .collect();
        for v in &values {
            let b = if width > 0.0 { (((v - min) / width) as usize).min(bins - 1) } else { 0 };
            histogram[b].count += 1;
        }
        Some(Self { median: median(&values), mean, min, max, values, histogram })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub base_seed: u64,
    pub split_seeds: Vec<u64>,
    pub repeats: usize,
    pub train_fraction: f64,
    pub threads: usize,
    pub pipeline: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rmse: Option<MetricStats>,
    pub plcc: Option<MetricStats>,
    pub srocc: Option<MetricStats>,
    pub pwrc: Option<MetricStats>,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<SplitFailure>,
    pub metadata: RunMetadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub summary: ExperimentSummary,
    pub splits: Vec<SplitReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub repeats: usize,
    pub train_fraction: f64,
    pub base_seed: u64,
    /// 1 runs splits sequentially; more runs them on a private pool.
    pub threads: usize,
    pub rmse_denominator: RmseDenominator,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self { repeats: 10, train_fraction: 0.8, base_seed: 0, threads: 1, rmse_denominator: RmseDenominator::default() }
    }
}

pub fn split_seed(base_seed: u64, index: usize) -> u64 {
    RngStream::derive_seed(base_seed, &[0x5911, index as u64])
}

fn check_unique(data: &[LabeledImage]) -> Result<(), HarnessError> {
    let mut seen = HashSet::new();
    for d in data {
        if !seen.insert(d.id.as_str()) {
            return Err(HarnessError::DuplicatePath(d.id.clone()));
        }
    }
    Ok(())
}

/// Fails if any test id occurs among the training ids.
pub fn assert_no_leakage(train: &[LabeledImage], test: &[LabeledImage]) -> Result<(), HarnessError> {
    let train_ids: HashSet<&str> = train.iter().map(|d| d.id.as_str()).collect();
    let leaked: Vec<String> = test.iter().filter(|d| train_ids.contains(d.id.as_str())).map(|d| d.id.clone()).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Leakage(leaked))
    }
}

fn evaluate(test: &[LabeledImage], predictions: Vec<f64>, denominator: RmseDenominator) -> Result<(MetricReport, Vec<Residual>), HarnessError> {
    let subjective: Vec<f64> = test.iter().map(|d| d.target).collect();
    let pair = ScorePair::new(predictions.clone(), subjective.clone())?;
    let report = MetricReport::compute(&pair, None, denominator)?;
    let residuals = test
        .iter()
        .zip(predictions)
        .map(|(d, p)| Residual { image_id: d.id.clone(), subjective: d.target, predicted: p, residual: p - d.target })
        .collect();
    Ok((report, residuals))
}

fn run_split(
    data: &[LabeledImage],
    pipeline: &dyn Pipeline,
    settings: &ExperimentSettings,
    index: usize,
) -> Result<SplitReport, SplitFailure> {
    let seed = split_seed(settings.base_seed, index);
    let fail = |e: HarnessError| SplitFailure { index, seed, error: e.to_string() };
    let (tr, te) = split_indices(data.len(), settings.train_fraction, seed).map_err(fail)?;
    let train: Vec<LabeledImage> = tr.iter().map(|i| data[*i].clone()).collect();
    let test: Vec<LabeledImage> = te.iter().map(|i| data[*i].clone()).collect();
    assert_no_leakage(&train, &test).map_err(fail)?;
    let fitted = pipeline.fit_predict(&train, &test, RngStream::derive_seed(seed, &[1])).map_err(fail)?;
    let (report, residuals) = evaluate(&test, fitted.predictions, settings.rmse_denominator).map_err(fail)?;
    Ok(SplitReport {
        index,
        seed,
        train_ids: train.iter().map(|d| d.id.clone()).collect(),
        test_ids: test.iter().map(|d| d.id.clone()).collect(),
        report,
        residuals,
        log: fitted.log,
    })
}

/// `repeats` random splits, each trained and scored independently. Split
/// failures are recorded and the summary covers the completed splits.
pub fn run_experiment(
    data: &[LabeledImage],
    pipeline: &dyn Pipeline,
    settings: &ExperimentSettings,
) -> Result<Experiment, HarnessError> {
    if settings.repeats == 0 {
        return Err(HarnessError::NoRepeats);
    }
    check_unique(data)?;
    split_indices(data.len(), settings.train_fraction, 0)?;
    let run = |i: usize| run_split(data, pipeline, settings, i);
    let results: Vec<Result<SplitReport, SplitFailure>> = if settings.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| (0..settings.repeats).into_par_iter().map(run).collect())
    } else {
        (0..settings.repeats).map(run).collect()
    };
    let mut splits = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => splits.push(s),
            Err(f) => failures.push(f),
        }
    }
    let stat = |f: fn(&MetricReport) -> f64| MetricStats::from_values(splits.iter().map(|s| f(&s.report)).collect());
    let summary = ExperimentSummary {
        rmse: stat(|r| r.rmse),
        plcc: stat(|r| r.plcc),
        srocc: stat(|r| r.srocc),
        pwrc: stat(|r| r.pwrc),
        completed: splits.len(),
        failed: failures.len(),
        failures,
        metadata: RunMetadata {
            base_seed: settings.base_seed,
            split_seeds: (0..settings.repeats).map(|i| split_seed(settings.base_seed, i)).collect(),
            repeats: settings.repeats,
            train_fraction: settings.train_fraction,
            threads: settings.threads,
            pipeline: pipeline.describe(),
        },
    };
    Ok(Experiment { summary, splits })
}

/// Trains once on the union of `train_sets` and scores the whole test set.
pub fn cross_dataset(
    train_sets: &[&[LabeledImage]],
    test: &[LabeledImage],
    pipeline: &dyn Pipeline,
    seed: u64,
) -> Result<(MetricReport, Vec<Residual>), HarnessError> {
    let train: Vec<LabeledImage> = train_sets.iter().flat_map(|s| s.iter().cloned()).collect();
    if train.is_empty() || test.len() < 2 {
        return Err(HarnessError::Split("cross-dataset run needs training data and at least 2 test images".into()));
    }
    check_unique(&train)?;
    check_unique(test)?;
    assert_no_leakage(&train, test)?;
    let fitted = pipeline.fit_predict(&train, test, seed)?;
    evaluate(test, fitted.predictions, RmseDenominator::default())
}

/// One experiment per variant with the same settings, so every variant sees
/// the same split seeds.
pub fn ablation_sweep(
    data: &[LabeledImage],
    base: &EnsemblePipeline,
    variants: &[AblationVariant],
    settings: &ExperimentSettings,
) -> Result<Vec<(AblationVariant, Experiment)>, HarnessError> {
    if variants.is_empty() {
        return Err(HarnessError::NoVariants);
    }
    variants.iter().map(|v| Ok((*v, run_experiment(data, &base.with_variant(*v), settings)?))).collect()
}
