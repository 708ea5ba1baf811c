//! The `detreli` command line.
//!
//! Exit codes: 0 on success (including `--help` and `--version`), 1 for
//! usage and configuration errors, 2 for data and metric errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::calib::{d_ece, la_ece, la_ece0, oce, BinningConfig, CalibrationReport, OceConfig, OceVariant, TpMatchConfig};
use crate::data::{load_annotations, load_predictions, write_atomic, Dataset, Split, Subset};
use crate::error::{Error, Result};
use crate::harness::{fit_by_pcc, EvalSettings};
use crate::matching::{optimal_splits, MatchingCostConfig};
use crate::perf::performance_summary;
use crate::postprocess::{fit_optimal, Family, GridSpec, PostProcessor};
use crate::report::{build_report, ReportInputs};
use crate::synth::{generate, SynthConfig};
use crate::uq::{contrastive_conf, NegativeStrategy, UqConfig};

/// Every tunable setting, read from `--config`. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of all randomness; `--seed` takes precedence. The `seed` field of
    /// the `synth` section is replaced by the effective run seed.
    pub seed: Option<u64>,
    pub binning: BinningConfig,
    pub oce: OceConfig,
    pub tp: TpMatchConfig,
    pub matching: MatchingCostConfig,
    pub grid: GridSpec,
    pub uq: UqConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.binning.validate()?;
        self.oce.validate()?;
        self.tp.validate()?;
        self.matching.validate()?;
        for f in Family::ALL {
            self.grid.candidates(f)?;
        }
        self.uq.validate()?;
        self.synth.validate()
    }

    fn settings(&self) -> EvalSettings {
        EvalSettings {
            matching: self.matching,
            oce: self.oce.clone(),
            binning: self.binning,
            tp: self.tp.clone(),
            grid: self.grid.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "detreli", version, about = "Reliability evaluation for set-prediction object detectors")]
struct Cli {
    /// Worker threads (default: DETRELI_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of all randomness (default: config seed, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotations/predictions pair.
    Synth(SynthArgs),
    /// Split every image's queries into optimal positives and negatives.
    Match(MatchArgs),
    /// Calibration and performance metrics.
    Metrics(MetricsArgs),
    /// Fit a post-processing parameter on a validation set.
    Select(SelectArgs),
    /// Per-image contrastive confidence scores.
    Uq(UqArgs),
    /// Markdown and CSV tables of a full evaluation.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Annotation file.
    #[arg(long, visible_alias = "val-ann")]
    ann: PathBuf,
    /// Prediction file.
    #[arg(long, visible_alias = "val-pred")]
    pred: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output annotation and prediction paths.
    #[arg(long, num_args = 2, value_names = ["ANN", "PRED"], required = true)]
    out: Vec<PathBuf>,
    /// Also write per-image difficulty as CSV.
    #[arg(long)]
    difficulty: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricName {
    Oce,
    OceMax,
    DEce,
    LaEce,
    LaEce0,
    Perf,
    All,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "oce")]
    metric: MetricName,
    /// Number of confidence bins.
    #[arg(long)]
    bins: Option<usize>,
    /// OCE IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// D-ECE IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// LaECE IoU threshold.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// AP IoU threshold reported as `ap`.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Evaluate the subset kept by this processor instead of the full set.
    #[arg(long)]
    proc: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-bin breakdown CSV; single calibration metric only.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Objective {
    Oce,
    Pcc,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[arg(long, value_enum, default_value = "oce")]
    objective: Objective,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UqArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fitted processor JSON written by `select`.
    #[arg(long)]
    proc: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// entire, topk:K, topk-all:K or confounding:DELTA.
    #[arg(long, value_parser = parse_strategy)]
    neg_strategy: Option<NegativeStrategy>,
    /// JSON lines: a header line, then one score per image.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Test annotations.
    #[arg(long)]
    ann: PathBuf,
    /// Test predictions.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, requires = "val_pred")]
    val_ann: Option<PathBuf>,
    #[arg(long, requires = "val_ann")]
    val_pred: Option<PathBuf>,
    /// Predictions of further models on the test images (ranking needs 3+).
    #[arg(long)]
    model_pred: Vec<PathBuf>,
    /// Fitted processors to use instead of fitting.
    #[arg(long)]
    proc: Vec<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<NegativeStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

/// Entry point of the binary.
pub fn main_exit() -> i32 {
    run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}

fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DETRELI_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("DETRELI_THREADS must be a number, got `{v}`"))),
        _ => Ok(None),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    cfg.synth.seed = seed;
    cfg.validate().map_err(usage)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    match thread_count(cli.threads)? {
        Some(0) => return Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    // commands print into a buffer; the caller's stream may not be Send
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| {
        let out: &mut dyn Write = &mut buf;
        match cli.command {
            Command::Synth(a) => synth_cmd(&cfg, a, out),
            Command::Match(a) => match_cmd(&cfg, a, out),
            Command::Metrics(a) => metrics_cmd(cfg, a, out),
            Command::Select(a) => select_cmd(&cfg, a, out),
            Command::Uq(a) => uq_cmd(cfg, a, out),
            Command::Report(a) => report_cmd(cfg, a, out),
        }
    });
    let _ = stdout.write_all(&buf);
    result
}

fn header(cfg: &RunConfig, command: &str, options: Value) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("detreli_version".into(), json!(crate::VERSION));
    m.insert(
        "config_echo".into(),
        json!({ "command": command, "options": options, "config": cfg }),
    );
    m
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidInput(format!("json: {e}")))
}

fn write_json(path: &Path, mut head: Map<String, Value>, body: Value) -> Result<()> {
    match body {
        Value::Object(m) => head.extend(m),
        other => {
            head.insert("result".into(), other);
        }
    }
    let mut text = to_json(&head)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_pair(ann: &Path, pred: &Path, split: Split) -> Result<Dataset> {
    let mut ds = load_annotations(ann, split)?;
    load_predictions(&mut ds, pred)?;
    Ok(ds)
}

/// Reads a processor written by `select`, ignoring its header fields.
pub fn load_processor(path: &Path) -> Result<PostProcessor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if let Value::Object(m) = &mut value {
        m.remove("detreli_version");
        m.remove("config_echo");
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}

fn synth_cmd(cfg: &RunConfig, a: SynthArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let out = generate(&cfg.synth)?;
    write_atomic(&a.out[0], crate::data::annotations_to_json(&out.dataset).as_bytes())?;
    write_atomic(&a.out[1], crate::data::predictions_to_json(&out.dataset).as_bytes())?;
    if let Some(p) = &a.difficulty {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(["image_id", "difficulty"]).map_err(csv_err)?;
        for (im, d) in out.dataset.images.iter().zip(&out.difficulty) {
            w.write_record([im.image_id.to_string(), d.to_string()]).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        write_atomic(p, &bytes)?;
    }
    let _ = writeln!(
        stdout,
        "wrote {} images, {} objects",
        out.dataset.images.len(),
        out.dataset.num_objects()
    );
    Ok(())
}

fn match_cmd(cfg: &RunConfig, a: MatchArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let ds = load_pair(&a.data.ann, &a.data.pred, Split::Test)?;
    let splits = optimal_splits(&ds, &cfg.matching)?;
    let images: Vec<Value> = ds
        .images
        .iter()
        .zip(&splits)
        .map(|(im, m)| {
            let q = |p: &usize| im.detections[*p].query_index;
            json!({
                "image_id": im.image_id,
                "pairs": m.pairs.iter().map(|p| json!({
                    "object_id": im.ground_truth[p.object_index].object_id,
                    "query_index": im.detections[p.query_index].query_index,
                    "cost": p.cost,
                })).collect::<Vec<_>>(),
                "positives": m.positives.iter().map(q).collect::<Vec<_>>(),
                "negatives": m.negatives.iter().map(q).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(&a.out, header(cfg, "match", json!({})), json!({ "images": images }))?;
    let _ = writeln!(stdout, "matched {} images", ds.images.len());
    Ok(())
}

fn metrics_cmd(mut cfg: RunConfig, a: MetricsArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    if let Some(b) = a.bins {
        cfg.binning.num_bins = b;
    }
    if let Some(d) = &a.deltas {
        cfg.oce.deltas = d.clone();
    }
    if let Some(t) = &a.taus {
        cfg.tp.iou_thresholds = t.clone();
    }
    cfg.validate().map_err(usage)?;
    if !(0.0..1.0).contains(&a.tau) {
        return Err(Failure::Usage(format!("--tau {} outside [0, 1)", a.tau)));
    }
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(Failure::Usage(format!("--iou {} outside [0, 1]", a.iou)));
    }
    if a.csv.is_some() && matches!(a.metric, MetricName::Perf | MetricName::All) {
        return Err(Failure::Usage("--csv needs a single calibration metric".into()));
    }
    let processor = a.proc.as_deref().map(load_processor).transpose().map_err(usage)?;

    let ds = load_pair(&a.data.ann, &a.data.pred, Split::Test)?;
    let subset = match &processor {
        Some(p) => p.apply_dataset(&ds),
        None => Subset::full(&ds),
    };
    let calib = |m: MetricName| -> Result<CalibrationReport> {
        match m {
            MetricName::Oce => oce(&ds, &subset, &cfg.oce),
            MetricName::OceMax => oce(
                &ds,
                &subset,
                &OceConfig {
                    variant: OceVariant::Max,
                    ..cfg.oce.clone()
                },
            ),
            MetricName::DEce => d_ece(&ds, &subset, &cfg.binning, &cfg.tp),
            MetricName::LaEce => la_ece(&ds, &subset, &cfg.binning, a.tau),
            MetricName::LaEce0 => la_ece0(&ds, &subset, &cfg.binning),
            MetricName::Perf | MetricName::All => unreachable!("not a calibration metric"),
        }
    };
    let body = match a.metric {
        MetricName::Perf => json!(performance_summary(&ds, &subset, a.iou)?),
        MetricName::All => {
            let mut m = Map::new();
            for (name, metric) in [
                ("oce", MetricName::Oce),
                ("oce_max", MetricName::OceMax),
                ("d_ece", MetricName::DEce),
                ("la_ece", MetricName::LaEce),
                ("la_ece0", MetricName::LaEce0),
            ] {
                m.insert(name.into(), json!(calib(metric)?));
            }
            // AP and LRP are undefined on datasets without objects
            m.insert(
                "perf".into(),
                match performance_summary(&ds, &subset, a.iou) {
                    Ok(p) => json!(p),
                    Err(e) => json!({ "undefined": e.to_string() }),
                },
            );
            Value::Object(m)
        }
        metric => {
            let report = calib(metric)?;
            if let Some(p) = &a.csv {
                let mut bytes = Vec::new();
                report.write_csv(&mut bytes)?;
                write_atomic(p, &bytes)?;
            }
            json!(report)
        }
    };
    let options = json!({
        "metric": format!("{:?}", a.metric),
        "tau": a.tau,
        "iou": a.iou,
        "processor": processor,
    });
    write_json(&a.out, header(&cfg, "metrics", options), body.clone())?;
    if let Some(v) = body.get("value") {
        let _ = writeln!(stdout, "{v}");
    }
    Ok(())
}

fn select_cmd(cfg: &RunConfig, a: SelectArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let val = load_pair(&a.data.ann, &a.data.pred, Split::Validation)?;
    let fitted = match a.objective {
        Objective::Oce => fit_optimal(a.family, &val, &cfg.grid, &cfg.oce)?,
        Objective::Pcc => fit_by_pcc(a.family, &val, &cfg.grid, &cfg.uq)?,
    };
    let options = json!({ "family": a.family.name(), "objective": format!("{:?}", a.objective).to_lowercase() });
    write_json(&a.out, header(cfg, "select", options), json!(fitted))?;
    let _ = writeln!(stdout, "{} {}", fitted.kind.family().name(), fitted.kind.param());
    Ok(())
}

fn uq_cmd(mut cfg: RunConfig, a: UqArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    if let Some(l) = a.lambda {
        cfg.uq.lambda = l;
    }
    if let Some(s) = a.neg_strategy {
        cfg.uq.negative_strategy = s;
    }
    cfg.uq.validate().map_err(usage)?;
    let processor = load_processor(&a.proc).map_err(usage)?;
    if !processor.is_fitted() {
        return Err(Failure::Usage(format!(
            "{} is not a fitted processor",
            a.proc.display()
        )));
    }
    let ds = load_pair(&a.data.ann, &a.data.pred, Split::Test)?;
    let scores: Vec<_> = {
        use rayon::prelude::*;
        ds.images
            .par_iter()
            .map(|im| contrastive_conf(im, &processor, &cfg.uq))
            .collect::<Result<_>>()?
    };
    let head = header(&cfg, "uq", json!({ "processor": processor }));
    let mut text = serde_json::to_string(&head).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    for s in &scores {
        text.push_str(&serde_json::to_string(s).map_err(|e| Error::InvalidInput(e.to_string()))?);
        text.push('\n');
    }
    write_atomic(&a.out, text.as_bytes())?;
    let _ = writeln!(stdout, "scored {} images", scores.len());
    Ok(())
}

fn report_cmd(mut cfg: RunConfig, a: ReportArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    if let Some(l) = a.lambda {
        cfg.uq.lambda = l;
    }
    cfg.uq.validate().map_err(usage)?;
    let processors = if a.proc.is_empty() {
        None
    } else {
        Some(
            a.proc
                .iter()
                .map(|p| load_processor(p))
                .collect::<Result<Vec<_>>>()
                .map_err(usage)?,
        )
    };
    let test = load_pair(&a.ann, &a.pred, Split::Test)?;
    let validation = match (&a.val_ann, &a.val_pred) {
        (Some(ann), Some(pred)) => Some(load_pair(ann, pred, Split::Validation)?),
        _ => None,
    };
    let mut models = Vec::with_capacity(a.model_pred.len());
    for p in &a.model_pred {
        models.push(load_pair(&a.ann, p, Split::Test)?);
    }
    let settings = cfg.settings();
    let report = build_report(&ReportInputs {
        test: &test,
        validation: validation.as_ref(),
        models: &models,
        processors,
        settings: &settings,
        uq: cfg.uq,
    })?;
    let options = json!({ "validation": validation.is_some(), "models": models.len() });
    report.write_dir(&a.out_dir, header(&cfg, "report", options))?;
    let _ = writeln!(stdout, "wrote report to {}", a.out_dir.display());
    Ok(())
}
