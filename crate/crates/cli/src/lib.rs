//! `scorecl`: synthesize data, train the score model and encoders, evaluate
//! and analyse, all driven by one JSON run config plus flag overrides.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure. Every error is
//! reported as one line `scorecl: <kind>: <message>` on standard error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use scorecl_core::augment::{sample_view, Image, TransformId};
use scorecl_core::checkpoint::{load_checkpoint, load_score_model, save_score_model};
use scorecl_core::config::{read_config, DatasetSpec, RunConfig, Sampling, Splits};
use scorecl_core::contrastive::{Method, SimclrForm, WeightMode, WeightNorm};
use scorecl_core::data::{write_raw, LabeledDataset};
use scorecl_core::eval::{
    embed, knn_eval, linear_probe, standardize, pair_score_grid, score_histogram, score_magnitude_curve, KnnReport, Metric,
    TableKind,
};
use scorecl_core::nn::{Architecture, ParamSet};
use scorecl_core::score::{train_score_model, ScoreModel};
use scorecl_core::trainer::{train_cl, TrainOptions};
use scorecl_core::{rng, Error};
use thiserror::Error;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SCORE_CHECKPOINT: &str = "score.ckpt";
pub const SCORE_METRICS: &str = "score_metrics.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_RAW: &str = "train.raw";
pub const TEST_RAW: &str = "test.raw";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 1,
            "data" => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_) | Error::Invalid(_)) => "usage",
            CliError::Core(Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_)) => "data",
            CliError::Core(_) => "divergence",
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "scorecl", version, about = "Score-weighted contrastive learning runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the shapes dataset as raw train/test files plus a manifest.
    Synth(SynthArgs),
    /// Train the denoising score model.
    TrainScore(TrainScoreArgs),
    /// Train a contrastive encoder.
    TrainCl(TrainClArgs),
    /// k-NN accuracy of a frozen encoder.
    EvalKnn(EvalKnnArgs),
    /// Linear-probe accuracy of a frozen encoder.
    EvalLinear(EvalLinearArgs),
    /// Score-value tables against augmentation magnitude.
    Analyze(AnalyzeArgs),
    /// Every method × weight mode, trained and k-NN evaluated.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; every file a run writes lands here.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed; required without --config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding train.raw and test.raw from `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainScoreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct ClOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_norm: Option<WeightNorm>,
    #[arg(long)]
    simclr_form: Option<SimclrForm>,
    #[arg(long)]
    sampling: Option<Sampling>,
    /// Score checkpoint from `train-score`.
    #[arg(long)]
    score: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainClArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cl: ClOverrides,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    weight_mode: Option<WeightMode>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
        }
    }
}

#[derive(Debug, Args)]
struct EvalKnnArgs {
    #[command(flatten)]
    common: Common,
    /// Encoder checkpoint from `train-cl`.
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
}

#[derive(Debug, Args)]
struct EvalLinearArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Curve,
    Hist,
    #[value(name = "pair_grid")]
    PairGrid,
    Contour,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    score: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value = "brightness")]
    transform_a: TransformId,
    /// Defaults to --transform-a.
    #[arg(long)]
    transform_b: Option<TransformId>,
    #[arg(long, default_value_t = 9)]
    steps: usize,
    /// Number of test images averaged over.
    #[arg(long, default_value_t = 200)]
    images: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cl: ClOverrides,
    #[arg(long, value_delimiter = ',', default_value = "simclr,simsiam")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "constant,score")]
    weight_modes: Vec<WeightMode>,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

/// Runs one command and returns the process exit code.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            report(&CliError::Usage(line.trim_start_matches("error: ").to_string()));
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            e.exit_code()
        }
    }
}

fn report(e: &CliError) {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    let msg = msg.strip_prefix("data: ").unwrap_or(&msg);
    eprintln!("scorecl: {}: {msg}", e.kind());
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::TrainScore(a) => train_score(a),
        Command::TrainCl(a) => train_cl_cmd(a),
        Command::EvalKnn(a) => eval_knn(a),
        Command::EvalLinear(a) => eval_linear(a),
        Command::Analyze(a) => analyze(a),
        Command::Compare(a) => compare(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn base_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => read_config(path)?,
        None => RunConfig::new(
            c.seed.ok_or_else(|| usage("--seed is required without --config"))?,
            DatasetSpec::synth(),
        ),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &c.data {
        cfg.dataset = DatasetSpec::Raw { train: dir.join(TRAIN_RAW), test: dir.join(TEST_RAW) };
    }
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

/// Resolves, creates the output directory and echoes the config into it.
fn start(cfg: RunConfig, out: &Path) -> CliResult<RunConfig> {
    let cfg = cfg.resolve()?;
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    write_file(out, RESOLVED_CONFIG, cfg.to_json() + "\n")?;
    Ok(cfg)
}

fn load_splits(cfg: &RunConfig) -> CliResult<Splits> {
    let splits = cfg.dataset.load(cfg.seed)?;
    for (name, ds) in [("train", &splits.train), ("test", &splits.test)] {
        if ds.is_empty() {
            return Err(Error::Data(format!("{name} split is empty")).into());
        }
    }
    Ok(splits)
}

fn synth(a: SynthArgs) -> CliResult<()> {
    if a.common.data.is_some() {
        return Err(usage("synth writes data; --data does not apply"));
    }
    let mut cfg = base_config(&a.common)?;
    let DatasetSpec::Synth { n, test_n, resolution, classes } = &mut cfg.dataset else {
        return Err(usage("synth needs a config whose dataset kind is synth"));
    };
    *n = a.n.unwrap_or(*n);
    *test_n = a.test_n.unwrap_or(*test_n);
    *resolution = a.resolution.unwrap_or(*resolution);
    *classes = a.classes.unwrap_or(*classes);
    let out = &a.common.out;
    let cfg = start(cfg, out)?;
    let splits = load_splits(&cfg)?;
    let mut files = Vec::new();
    for (name, ds) in [(TRAIN_RAW, &splits.train), (TEST_RAW, &splits.test)] {
        write_raw(&out.join(name), ds)?;
        files.push(serde_json::json!({ "file": name, "images": ds.len() }));
    }
    let first = &splits.train.images[0];
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "dataset": cfg.dataset,
        "height": first.height(),
        "width": first.width(),
        "channels": first.channels(),
        "class_count": splits.train.class_count,
        "files": files,
    });
    write_file(out, MANIFEST, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
}

fn score_curve_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        s += &format!("{e},{l}\n");
    }
    s
}

/// Trains a score model on the training split and saves it into `out`.
fn fit_score(cfg: &RunConfig, train: &LabeledDataset, out: &Path) -> CliResult<ScoreModel<f32>> {
    let data = train.to_tensor::<f32>()?;
    let arch = Architecture::ScoreNet { channels: train.images[0].channels(), widths: cfg.score.widths };
    let (model, history) = train_score_model(&data, &arch, &cfg.score, cfg.seed)?;
    let steps = (cfg.score.epochs * train.len().div_ceil(cfg.score.batch)) as u64;
    write_file(out, SCORE_METRICS, score_curve_csv(&history))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    save_score_model(&out.join(SCORE_CHECKPOINT), &model, steps, config)?;
    Ok(model)
}

fn train_score(a: TrainScoreArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.score.epochs = e;
    }
    let cfg = start(cfg, &a.common.out)?;
    let splits = load_splits(&cfg)?;
    fit_score(&cfg, &splits.train, &a.common.out)?;
    Ok(())
}

fn apply_cl(cfg: &mut RunConfig, o: &ClOverrides) {
    let cl = &mut cfg.cl;
    cl.epochs = o.epochs.unwrap_or(cl.epochs);
    cl.batch = o.batch.unwrap_or(cl.batch);
    cl.lr = o.lr.or(cl.lr);
    cl.weight_norm = o.weight_norm.unwrap_or(cl.weight_norm);
    cl.simclr_form = o.simclr_form.unwrap_or(cl.simclr_form);
    cl.sampling = o.sampling.unwrap_or(cl.sampling);
}

fn needs_score(cfg: &RunConfig) -> bool {
    cfg.cl.weight_mode.needs_score()
        || (cfg.cl.sampling == Sampling::MedianThreshold && cfg.cl.weight_mode == WeightMode::Constant)
}

fn require_score(cfg: &RunConfig, score: Option<&PathBuf>) -> CliResult<Option<ScoreModel<f32>>> {
    match score {
        Some(path) => Ok(Some(load_score_model(path)?.0)),
        None if needs_score(cfg) => Err(usage(format!(
            "weight mode {} with sampling {} requires --score <checkpoint>",
            cfg.cl.weight_mode, cfg.cl.sampling
        ))),
        None => Ok(None),
    }
}

fn train_cl_cmd(a: TrainClArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    apply_cl(&mut cfg, &a.cl);
    cfg.cl.method = a.method.unwrap_or(cfg.cl.method);
    cfg.cl.weight_mode = a.weight_mode.unwrap_or(cfg.cl.weight_mode);
    // the flag check precedes any file output
    let score = require_score(&cfg.clone().resolve()?, a.cl.score.as_ref())?;
    let cfg = start(cfg, &a.common.out)?;
    let splits = load_splits(&cfg)?;
    let opts = TrainOptions { out_dir: Some(a.common.out.clone()), weighted_constant: false };
    let out = train_cl(&cfg, &splits.train, score.as_ref(), &opts)?;
    if let Some(loss) = out.metrics.final_loss() {
        println!("final_loss={loss}");
    }
    Ok(())
}

fn load_encoder(path: &Path) -> CliResult<ParamSet<f32>> {
    let (params, header) = load_checkpoint(path)?;
    if !matches!(header.architecture, Architecture::Encoder { .. }) {
        return Err(Error::Data(format!("{} is not an encoder checkpoint", path.display())).into());
    }
    Ok(params)
}

struct Embedded {
    train: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
}

fn embed_splits(params: &ParamSet<f32>, splits: &Splits) -> CliResult<Embedded> {
    Ok(Embedded {
        train: embed(params, &splits.train.image_refs())?,
        test: embed(params, &splits.test.image_refs())?,
    })
}

fn knn_csv(r: &KnnReport, metric: MetricArg, test_labels: &[usize]) -> String {
    let metric = match metric {
        MetricArg::Cosine => "cosine",
        MetricArg::Euclidean => "euclidean",
    };
    let mut s = format!("class,k,metric,n_test,accuracy\nall,{},{metric},{},{}\n", r.k, r.n_test, r.accuracy);
    for (c, acc) in r.per_class.iter().enumerate() {
        if let Some(acc) = acc {
            let n = test_labels.iter().filter(|&&l| l == c).count();
            s += &format!("{c},{},{metric},{n},{acc}\n", r.k);
        }
    }
    s
}

fn eval_knn(a: EvalKnnArgs) -> CliResult<()> {
    let cfg = start(base_config(&a.common)?, &a.common.out)?;
    let params = load_encoder(&a.encoder)?;
    let splits = load_splits(&cfg)?;
    let e = embed_splits(&params, &splits)?;
    let r = knn_eval(&e.train, &splits.train.labels, &e.test, &splits.test.labels, a.k, a.metric.into())?;
    write_file(&a.common.out, "knn.csv", knn_csv(&r, a.metric, &splits.test.labels))?;
    println!("knn_accuracy={}", r.accuracy);
    Ok(())
}

fn eval_linear(a: EvalLinearArgs) -> CliResult<()> {
    let cfg = start(base_config(&a.common)?, &a.common.out)?;
    let params = load_encoder(&a.encoder)?;
    let splits = load_splits(&cfg)?;
    let mut e = embed_splits(&params, &splits)?;
    standardize(&mut e.train, &mut e.test)?;
    let r = linear_probe(&e.train, &splits.train.labels, &e.test, &splits.test.labels, a.epochs, a.lr)?;
    let csv = format!(
        "epochs,lr,n_test,accuracy,final_loss\n{},{},{},{},{}\n",
        a.epochs,
        a.lr,
        splits.test.len(),
        r.accuracy,
        r.final_loss
    );
    write_file(&a.common.out, "linear.csv", csv)?;
    println!("linear_accuracy={}", r.accuracy);
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    let cfg = start(base_config(&a.common)?, &a.common.out)?;
    let (model, _) = load_score_model(&a.score)?;
    let splits = load_splits(&cfg)?;
    let images: Vec<&Image> = splits.test.images.iter().take(a.images.max(1)).collect();
    let id_b = a.transform_b.unwrap_or(a.transform_a);
    let table = match a.kind {
        KindArg::Curve => score_magnitude_curve(&model, &images, a.transform_a, a.steps)?,
        KindArg::Hist => {
            let views = images
                .iter()
                .enumerate()
                .map(|(i, img)| Ok(sample_view(img, &cfg.aug, &mut rng::sample_stream(cfg.seed, 0, i, 0))?.0))
                .collect::<Result<Vec<Image>, Error>>()?;
            score_histogram(&model, &images, &views.iter().collect::<Vec<_>>())?
        }
        KindArg::PairGrid => pair_score_grid(&model, &images, a.transform_a, id_b, a.steps, TableKind::PairGrid)?,
        KindArg::Contour => pair_score_grid(&model, &images, a.transform_a, id_b, a.steps, TableKind::Contour)?,
    };
    write_file(&a.common.out, &format!("analysis_{}.csv", table.kind.name()), table.to_csv())
}

fn compare(a: CompareArgs) -> CliResult<()> {
    if a.methods.is_empty() || a.weight_modes.is_empty() {
        return Err(usage("--methods and --weight-modes must each name at least one value"));
    }
    let mut cfg = base_config(&a.common)?;
    apply_cl(&mut cfg, &a.cl);
    let out = &a.common.out;
    // runs start from the unresolved config so each method gets its own
    // default lr and optimizer unless the config or a flag fixed them
    let runs: Vec<RunConfig> = a
        .methods
        .iter()
        .flat_map(|&m| a.weight_modes.iter().map(move |&w| (m, w)))
        .map(|(method, mode)| {
            let mut run = cfg.clone();
            run.cl.method = method;
            run.cl.weight_mode = mode;
            run
        })
        .collect();
    let cfg = start(cfg, out)?;
    let splits = load_splits(&cfg)?;
    let score = match &a.cl.score {
        Some(path) => Some(load_score_model(path)?.0),
        None if runs.iter().any(needs_score) => Some(fit_score(&cfg, &splits.train, out)?),
        None => None,
    };

    let mut csv = String::from("method,weight_mode,final_loss,knn_accuracy\n");
    for run in runs {
        let dir = out.join(format!("{}_{}", run.cl.method, run.cl.weight_mode));
        let run = start(run, &dir)?;
        let opts = TrainOptions { out_dir: Some(dir), weighted_constant: false };
        let trained = train_cl(&run, &splits.train, score.as_ref(), &opts)?;
        let e = embed_splits(&trained.encoder, &splits)?;
        let r = knn_eval(&e.train, &splits.train.labels, &e.test, &splits.test.labels, a.k, Metric::Cosine)?;
        let loss = trained.metrics.final_loss().unwrap_or(f64::NAN);
        csv += &format!("{},{},{loss},{}\n", run.cl.method, run.cl.weight_mode, r.accuracy);
        println!("{} {}: final_loss={loss} knn_accuracy={}", run.cl.method, run.cl.weight_mode, r.accuracy);
    }
    write_file(out, COMPARE_FILE, csv)
}
