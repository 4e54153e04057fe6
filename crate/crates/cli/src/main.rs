//! `iqa`: corpus generation, training, evaluation protocol, MOS tools and
//! the rating server.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iqa_core::distort::{generate_corpus, CorpusManifest, DistortError, DistortionSpec, MANIFEST_NAME};
use iqa_core::ensemble::{
    build, load_corpus, load_model, predict_image, pretrain, save_model, transfer_to_regressor, write_log, AblationVariant,
    EnsembleConfig, EnsembleError, LabeledImage, NetworkProbe,
};
use iqa_core::harness::{
    ablation_sweep, boxplot_csv, cross_dataset, load_manifest, residual_report, run_experiment, significance::matrix_csv,
    significance_matrix, EnsemblePipeline, Experiment, HarnessError, Manifest, RunConfig,
};
use iqa_core::metrics::{MetricError, MetricReport, ScorePair};
use iqa_core::mos::{self, MosError, RatingTable, ScreeningRule, VarianceKind};
use iqa_core::net::{grad_check, LossKind, LossSpec, Mode, NetError, Tensor};
use iqa_core::RngStream;
use rating_service::{ServiceConfig, ServiceError};

#[derive(Parser)]
#[command(name = "iqa", version, about = "Blind image quality assessment workbench")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for repeated splits; overrides the config file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML run configuration (service configuration for `serve`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Quality manifest CSV: path,score[,variance,split].
    #[arg(long)]
    manifest: PathBuf,
    /// Declared score range of the manifest.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    range: Option<Vec<f64>>,
    /// Lower scores are better (DMOS).
    #[arg(long)]
    invert: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labelled distortion corpus.
    Distort {
        #[arg(long)]
        sources: PathBuf,
        /// Distortion types (default all 25).
        #[arg(long, value_delimiter = ',')]
        types: Vec<i64>,
        /// Levels (default 1..=5).
        #[arg(long, value_delimiter = ',')]
        levels: Vec<i64>,
        /// Explicit "type_level" labels; overrides --types/--levels.
        #[arg(long = "spec", value_delimiter = ',')]
        specs: Vec<String>,
    },
    /// Classification pretraining on a generated corpus.
    Pretrain {
        /// Corpus directory holding manifest.csv.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Swap the classification head for a regression output.
    Transfer {
        #[arg(long)]
        model: PathBuf,
    },
    /// Regression fine-tuning; records tagged test/val are only monitored.
    Finetune {
        /// Starting model; a fresh regressor when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a model on a manifest.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Repeated random train/test splits with median reporting.
    Experiment {
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train on some datasets, test on another: PATH or PATH:LO:HI[:invert].
    Crossval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "train", required = true)]
        train: Vec<String>,
        #[arg(long)]
        test: String,
    },
    /// Repeated splits for each structural variant.
    Ablate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Reinitialize the surviving parameters of ablated models.
        #[arg(long)]
        reinit: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Subjective score tools.
    #[command(subcommand)]
    Mos(MosCmd),
    /// Run the rating server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Finite-difference check of the full network's gradients.
    Gradcheck {
        #[arg(long, default_value = "mse")]
        loss: String,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = iqa_core::net::gradcheck::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Check with dropout active.
        #[arg(long)]
        train_mode: bool,
    },
}

#[derive(Subcommand)]
enum MosCmd {
    /// Screen observers and aggregate ratings into MOS, variance and a histogram.
    Aggregate {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        no_screen: bool,
        #[arg(long)]
        sample_variance: bool,
        #[arg(long, default_value_t = 0.5)]
        min_correlation: f64,
        #[arg(long, default_value_t = 3.0)]
        z: f64,
        #[arg(long, default_value_t = 0.2)]
        max_fraction: f64,
        #[arg(long, default_value_t = mos::DEFAULT_BINS)]
        bins: usize,
    },
    /// Histogram of an existing MOS file.
    Histogram {
        #[arg(long)]
        mos: PathBuf,
        #[arg(long, default_value_t = mos::DEFAULT_BINS)]
        bins: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::ZeroVariance(_) | MetricError::AllEqual | MetricError::NoActivePairs | MetricError::NonFinite(_) => {
                Self::Numeric(e.to_string())
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::NonFinite(_) => Self::Numeric(e.to_string()),
            EnsembleError::Config(_) | EnsembleError::Net(NetError::InvalidSpec(_)) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Metric(m) => m.into(),
            HarnessError::Ensemble(m) => m.into(),
            HarnessError::Config(_) | HarnessError::NoRepeats | HarnessError::NoVariants => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DistortError> for CliError {
    fn from(e: DistortError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<MosError> for CliError {
    fn from(e: MosError) -> Self {
        match e {
            MosError::NoBins => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(v).expect("serializable") + "\n")
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.experiment.base_seed = s;
        }
        if let Some(t) = cli.threads {
            if t == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            cfg.experiment.threads = t;
        }
        Ok(Self { cfg, out: cli.out.clone() })
    }

    fn seed(&self) -> u64 {
        self.cfg.experiment.base_seed
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, d: &DataArgs) -> Result<Manifest> {
        let (lo, hi) = match &d.range {
            Some(r) => (r[0], r[1]),
            None => (self.cfg.data.score_lo, self.cfg.data.score_hi),
        };
        if !(hi > lo) {
            return Err(CliError::Usage(format!("empty score range [{lo}, {hi}]")));
        }
        Ok(load_manifest(&d.manifest, lo, hi, d.invert || self.cfg.data.invert)?)
    }

    fn images(&self, d: &DataArgs) -> Result<Vec<LabeledImage>> {
        Ok(self.manifest(d)?.load_images()?)
    }

    fn pipeline(&self, base: Option<&PathBuf>) -> Result<EnsemblePipeline> {
        let cfg = self.cfg.pipeline.clone();
        Ok(match base {
            Some(p) => EnsemblePipeline::from_base(cfg, load_model(p)?),
            None => EnsemblePipeline::scratch(cfg),
        })
    }

    fn record_config(&self) -> Result<()> {
        write_file(&self.out("config.toml"), self.cfg.to_toml())
    }
}

fn specs_from(types: &[i64], levels: &[i64], labels: &[String]) -> Result<Vec<DistortionSpec>> {
    if !labels.is_empty() {
        return labels.iter().map(|l| Ok(DistortionSpec::parse_label(l)?)).collect();
    }
    let types: Vec<i64> = if types.is_empty() { (1..=25).collect() } else { types.to_vec() };
    let levels: Vec<i64> = if levels.is_empty() { (1..=5).collect() } else { levels.to_vec() };
    let mut out = Vec::new();
    for t in &types {
        for l in &levels {
            out.push(DistortionSpec::new(*t, *l)?);
        }
    }
    Ok(out)
}

fn write_experiment(exp: &Experiment, dir: &Path) -> Result<()> {
    write_json(&dir.join("summary.json"), &exp.summary)?;
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs).map_err(|e| io_err(&logs, e))?;
    for s in &exp.splits {
        residual_report(s, &dir.join("residuals"))?;
        write_log(&dir.join("logs").join(format!("split_{}.jsonl", s.index)), &s.log)?;
        write_json(&dir.join("splits").join(format!("split_{}.json", s.index)), &s.report)?;
    }
    write_file(&dir.join("boxplot.csv"), boxplot_csv(&exp.splits))?;
    for f in &exp.summary.failures {
        eprintln!("split {} failed: {}", f.index, f.error);
    }
    if exp.summary.completed == 0 {
        return Err(CliError::Numeric("every split failed".into()));
    }
    Ok(())
}

/// `PATH`, `PATH:LO:HI` or `PATH:LO:HI:invert`.
fn parse_dataset(spec: &str) -> Result<DataArgs> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::Usage(format!("bad range in {spec:?}")));
    match parts.as_slice() {
        [p] => Ok(DataArgs { manifest: p.into(), range: None, invert: false }),
        [p, lo, hi] => Ok(DataArgs { manifest: p.into(), range: Some(vec![num(lo)?, num(hi)?]), invert: false }),
        [p, lo, hi, "invert"] => Ok(DataArgs { manifest: p.into(), range: Some(vec![num(lo)?, num(hi)?]), invert: true }),
        _ => Err(CliError::Usage(format!("expected PATH[:LO:HI[:invert]], got {spec:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Cmd::Serve { addr } = &cli.cmd {
        let cfg = match &cli.config {
            Some(p) => ServiceConfig::load(p)?,
            None => return Err(CliError::Usage("serve needs --config with image sets".into())),
        };
        let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("listening on {addr}");
        return Ok(rt.block_on(rating_service::serve(&cfg, addr))?);
    }
    let ctx = Ctx::new(&cli)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
    match &cli.cmd {
        Cmd::Distort { sources, types, levels, specs } => {
            let specs = specs_from(types, levels, specs)?;
            let report = generate_corpus(sources, &ctx.out, &specs, ctx.seed())?;
            for (p, why) in &report.failures {
                eprintln!("{}: {why}", p.display());
            }
            println!(
                "{}",
                serde_json::json!({"images": report.manifest.entries.len(), "failures": report.failures.len(), "manifest": report.manifest_path})
            );
            if report.manifest.entries.is_empty() {
                return Err(CliError::Data("no images produced".into()));
            }
        }
        Cmd::Pretrain { corpus } => {
            let manifest = CorpusManifest::read_csv(&corpus.join(MANIFEST_NAME))?;
            let data = load_corpus(&manifest)?;
            let classes = data.iter().map(|d| d.class).max().map_or(0, |c| c + 1);
            let config = EnsembleConfig { n_classes_pretrain: classes, ..ctx.cfg.pipeline.model.clone() };
            let model = build(&config, ctx.seed())?;
            let mut rng = RngStream::new(ctx.seed(), 0x9E7);
            let id = corpus.display().to_string();
            let (model, log) = pretrain(&model, &data, &id, &ctx.cfg.pipeline.train, &mut rng)?;
            ctx.record_config()?;
            save_model(&model, &ctx.out("model.ckpt"), serde_json::json!({"corpus": id, "seed": ctx.seed()}))?;
            write_log(&ctx.out("pretrain_log.jsonl"), &log)?;
            println!("{}", serde_json::to_string(log.last().expect("epoch 0 is always logged")).expect("serializable"));
        }
        Cmd::Transfer { model } => {
            let m = transfer_to_regressor(&load_model(model)?)?;
            save_model(&m, &ctx.out("model.ckpt"), serde_json::json!({"from": model}))?;
            println!("{}", serde_json::json!({"params": m.param_count()}));
        }
        Cmd::Finetune { model, data } => {
            let manifest = ctx.manifest(data)?;
            let all = manifest.load_images()?;
            let held = |r: &iqa_core::harness::SampleRecord| matches!(r.split.as_deref(), Some("test" | "val"));
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (img, rec) in all.into_iter().zip(&manifest.records) {
                if held(rec) { val.push(img) } else { train.push(img) }
            }
            let pipeline = ctx.pipeline(model.as_ref())?;
            let (m, log) = pipeline.fit(&train, (!val.is_empty()).then_some(&val[..]), ctx.seed())?;
            ctx.record_config()?;
            save_model(&m, &ctx.out("model.ckpt"), serde_json::json!({"manifest": data.manifest, "seed": ctx.seed()}))?;
            write_log(&ctx.out("finetune_log.jsonl"), &log)?;
            println!("{}", serde_json::to_string(log.last().expect("epoch 0 is always logged")).expect("serializable"));
        }
        Cmd::Evaluate { model, data } => {
            let m = load_model(model)?;
            let images = ctx.images(data)?;
            let mut rng = RngStream::new(ctx.seed(), 0xE7A1);
            let pred: Vec<f64> = images
                .iter()
                .map(|s| predict_image(&m, &s.raster, ctx.cfg.pipeline.n_crops, &mut rng))
                .collect::<std::result::Result<_, _>>()?;
            let pair = ScorePair::new(pred, images.iter().map(|s| s.target).collect())?;
            let report = MetricReport::compute(&pair, None, ctx.cfg.experiment.rmse_denominator)?;
            write_json(&ctx.out("metrics.json"), &report)?;
            write_file(&ctx.out("pwrc_curve.csv"), report.curve_csv())?;
            println!("{}", serde_json::json!({"rmse": report.rmse, "plcc": report.plcc, "srocc": report.srocc, "pwrc": report.pwrc}));
        }
        Cmd::Experiment { model, data } => {
            let images = ctx.images(data)?;
            let exp = run_experiment(&images, &ctx.pipeline(model.as_ref())?, &ctx.cfg.experiment)?;
            ctx.record_config()?;
            write_experiment(&exp, &ctx.out)?;
            println!("{}", serde_json::to_string(&exp.summary.plcc.as_ref().map(|s| s.median)).expect("serializable"));
        }
        Cmd::Crossval { model, train, test } => {
            let sets: Vec<Vec<LabeledImage>> =
                train.iter().map(|t| ctx.images(&parse_dataset(t)?)).collect::<Result<_>>()?;
            let test = ctx.images(&parse_dataset(test)?)?;
            let refs: Vec<&[LabeledImage]> = sets.iter().map(Vec::as_slice).collect();
            let (report, residuals) = cross_dataset(&refs, &test, &ctx.pipeline(model.as_ref())?, ctx.seed())?;
            ctx.record_config()?;
            write_json(&ctx.out("crossval.json"), &serde_json::json!({"report": report, "residuals": residuals}))?;
            println!("{}", serde_json::json!({"rmse": report.rmse, "plcc": report.plcc, "srocc": report.srocc, "pwrc": report.pwrc}));
        }
        Cmd::Ablate { model, data, variants, reinit, alpha } => {
            let variants: Vec<AblationVariant> = if variants.is_empty() {
                AblationVariant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse().map_err(CliError::Usage)).collect::<Result<_>>()?
            };
            let mut pipeline = ctx.pipeline(model.as_ref())?;
            pipeline.config.reinit_ablated |= *reinit;
            let images = ctx.images(data)?;
            let results = ablation_sweep(&images, &pipeline, &variants, &ctx.cfg.experiment)?;
            ctx.record_config()?;
            let names: Vec<String> = results.iter().map(|(v, _)| v.name().to_string()).collect();
            for (v, exp) in &results {
                write_experiment(exp, &ctx.out.join(v.name()))?;
            }
            for (metric, pick) in [("plcc", 0usize), ("srocc", 1)] {
                let samples: Vec<Vec<f64>> = results
                    .iter()
                    .map(|(_, e)| e.splits.iter().map(|s| if pick == 0 { s.report.plcc } else { s.report.srocc }).collect())
                    .collect();
                match significance_matrix(&samples, *alpha) {
                    Ok(m) => write_file(&ctx.out(&format!("significance_{metric}.csv")), matrix_csv(&names, &m))?,
                    Err(e) => eprintln!("significance ({metric}): {e}"),
                }
            }
            let medians: Vec<_> = results
                .iter()
                .map(|(v, e)| serde_json::json!({"variant": v.name(), "plcc": e.summary.plcc.as_ref().map(|s| s.median), "srocc": e.summary.srocc.as_ref().map(|s| s.median)}))
                .collect();
            write_json(&ctx.out("ablation.json"), &medians)?;
            println!("{}", serde_json::Value::Array(medians));
        }
        Cmd::Mos(MosCmd::Aggregate { ratings, no_screen, sample_variance, min_correlation, z, max_fraction, bins }) => {
            let table = RatingTable::read_csv(ratings)?;
            let table = if *no_screen {
                table
            } else {
                let rule = ScreeningRule { min_correlation: *min_correlation, z_threshold: *z, max_outlier_fraction: *max_fraction };
                let s = mos::screen_outliers(&table, &rule)?;
                write_json(&ctx.out("screening.json"), &serde_json::json!({"rule": s.rule, "rejected": s.rejected, "observers": s.observers}))?;
                s.table
            };
            let kind = if *sample_variance { VarianceKind::Sample } else { VarianceKind::Population };
            let records = mos::aggregate(&table, kind)?;
            std::fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
            mos::write_mos_csv(&records, &ctx.out("mos.csv"))?;
            let values: Vec<f64> = records.iter().map(|r| r.mos).collect();
            mos::write_histogram_csv(&mos::mos_histogram(&values, *bins)?, &ctx.out("histogram.csv"))?;
            println!("{}", serde_json::json!({"images": records.len(), "observers": table.observers().len()}));
        }
        Cmd::Mos(MosCmd::Histogram { mos: path, bins }) => {
            let values: Vec<f64> = mos::read_mos_csv(path)?.iter().map(|r| r.mos).collect();
            std::fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
            mos::write_histogram_csv(&mos::mos_histogram(&values, *bins)?, &ctx.out("histogram.csv"))?;
        }
        Cmd::Gradcheck { loss, batch, eps, tol, train_mode } => {
            let kind: LossKind = loss.parse().map_err(|e: NetError| CliError::Usage(e.to_string()))?;
            if kind == LossKind::CrossEntropy || *batch == 0 {
                return Err(CliError::Usage("gradcheck needs a regression loss and a batch of at least 1".into()));
            }
            let model = iqa_core::ensemble::build_regressor(&ctx.cfg.pipeline.model, ctx.seed())?;
            let s = model.config.input_size;
            let mut rng = RngStream::new(ctx.seed(), 0x6C);
            let inputs = (0..*batch)
                .map(|_| Tensor::new(vec![3, s, s], (0..3 * s * s).map(|_| rng.uniform() - 0.5).collect()))
                .collect();
            let targets = (0..*batch).map(|_| Tensor::new(vec![1], vec![0.1 + 0.8 * rng.uniform()])).collect();
            let mode = if *train_mode { Mode::Train } else { Mode::Eval };
            let mut probe = NetworkProbe::new(model.net.cast::<f64>(), inputs, targets, LossSpec::new(kind), mode, ctx.seed());
            let report = grad_check(&mut probe, *eps, *tol);
            write_json(&ctx.out("gradcheck.json"), &report)?;
            println!("{}", serde_json::json!({"max_rel_error": report.max_rel_error(), "tolerance": tol, "passed": report.passed()}));
            if !report.passed() {
                return Err(CliError::Numeric(format!("max relative error {:.3e} exceeds {tol:e}", report.max_rel_error())));
            }
        }
        Cmd::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
