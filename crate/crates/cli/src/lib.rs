//! Command-line front end: synthesize or load a cohort, train with
//! cross-validation, evaluate, explain and render figures.

mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use riskstrat_core::eval::EvalReport;
use riskstrat_core::explain::{
    exact_shap, global_importance, sampled_shap, Attribution, BackgroundSet, GlobalImportance,
    MAX_EXACT_FEATURES,
};
use riskstrat_core::ingest::{encode, impute_missing, load_cohort, Cohort, FeatureSchema, DEFAULT_LABEL};
use riskstrat_core::model::{cross_validate, train, RiskModel, TrainConfig};
use riskstrat_core::report::{
    render_calibration, render_roc, render_summary, render_waterfall, FigureKind, FigureSpec,
};
use riskstrat_core::synth::{default_replica, generate_cohort, SynthConfig};

pub use error::{CliError, ErrorClass};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Seed used when neither `--seed` nor `RISKSTRAT_SEED` is given.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "riskstrat", version, about = "Explainable risk stratification on tabular cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort CSV plus its true-probability sidecar.
    Synth(SynthArgs),
    /// Fit the risk model on the whole cohort and save it as JSON.
    Train(DataArgs),
    /// Cross-validate and write the evaluation report.
    Evaluate(DataArgs),
    /// Explain one row with a saved model.
    Explain(ExplainArgs),
    /// Render the four figures from saved artifacts.
    Report(ReportArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Seed for synthesis, fold assignment and background sampling [default: 42]
    #[arg(long, env = "RISKSTRAT_SEED")]
    pub seed: Option<u64>,
    /// Directory that receives every output file.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Prefix of output file names.
    #[arg(long, default_value = "riskstrat")]
    pub run_id: String,
}

impl CommonArgs {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.out_dir.join(format!("{}_{suffix}", self.run_id))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cohort size [default: the replica's 4000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Added to the true logit when drawing labels.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Cohort CSV with a header row.
    #[arg(long, conflicts_with = "synth")]
    pub input: Option<PathBuf>,
    /// Use the synthetic replica cohort instead of a file.
    #[arg(long)]
    pub synth: bool,
    /// Replica size when --synth is given.
    #[arg(long, requires = "synth")]
    pub n: Option<usize>,
    /// Miscalibration shift for the replica labels.
    #[arg(long, requires = "synth", allow_negative_numbers = true)]
    pub shift: Option<f64>,
    /// Name of the binary outcome column.
    #[arg(long, default_value = DEFAULT_LABEL)]
    pub label_column: String,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// L2 penalty strength.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Equal-width calibration bins.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainOptions {
    /// Row to explain (0-based).
    #[arg(long, default_value_t = 0)]
    pub instance: usize,
    /// Background rows drawn from the cohort.
    #[arg(long, default_value_t = riskstrat_core::explain::DEFAULT_BACKGROUND_SIZE)]
    pub background_size: usize,
    /// Use permutation sampling with this many permutations instead of exact enumeration.
    #[arg(long)]
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Saved model JSON [default: <out-dir>/<run-id>_model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub explain: ExplainOptions,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Saved model JSON [default: <out-dir>/<run-id>_model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Saved evaluation JSON [default: <out-dir>/<run-id>_eval.json]
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Saved attribution JSON [default: <out-dir>/<run-id>_attribution.json]
    #[arg(long)]
    pub attribution: Option<PathBuf>,
    #[arg(long, default_value_t = riskstrat_core::explain::DEFAULT_BACKGROUND_SIZE)]
    pub background_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub explain: ExplainOptions,
}

/// Runs a parsed command, writing human-readable progress to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a, out).map(|_| ()),
        Command::Explain(a) => cmd_explain(a, out).map(|_| ()),
        Command::Report(a) => cmd_report(a, out),
        Command::Pipeline(a) => cmd_pipeline(a, out).map(|_| ()),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    // progress output is best effort; a closed stdout must not fail the run
    let _ = writeln!(out, "{line}");
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| CliError::Write {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(err)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(err)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn synth_config(seed: u64, n: Option<usize>, shift: Option<f64>) -> SynthConfig {
    let mut config = default_replica().with_seed(seed);
    if let Some(n) = n {
        config = config.with_n(n);
    }
    if let Some(shift) = shift {
        config = config.with_shift(shift);
    }
    config
}

/// Loads or synthesizes the cohort named by the source flags.
pub fn load_source(source: &SourceArgs, seed: u64) -> Result<Cohort> {
    match (&source.input, source.synth) {
        (Some(path), false) => {
            let schema = FeatureSchema::new(
                FeatureSchema::survey().features().to_vec(),
                source.label_column.clone(),
            )?;
            Ok(load_cohort(path, &schema)?)
        }
        (None, true) => Ok(generate_cohort(&synth_config(seed, source.n, source.shift))?.cohort),
        _ => Err(CliError::Usage("give either --input <csv> or --synth".into())),
    }
}

fn train_config(model: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        l2_lambda: model.lambda,
        folds: model.folds,
        seed,
        ..TrainConfig::default()
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(CliError::Usage(format!("--bins must be at least 2, got {bins}")));
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let config = synth_config(args.common.seed(), args.n, Some(args.shift));
    let synth = generate_cohort(&config)?;
    let mut csv = Vec::new();
    synth.cohort.write_csv(&mut csv)?;
    let mut truth = Vec::new();
    synth
        .write_truth_csv(&mut truth)
        .map_err(|e| CliError::Ingest(e.into()))?;
    let cohort_path = args.common.path("cohort.csv");
    let truth_path = args.common.path("truth.csv");
    write_atomic(&cohort_path, &csv)?;
    write_atomic(&truth_path, &truth)?;
    say(out, format_args!("wrote {} rows to {}", config.n, cohort_path.display()));
    say(out, format_args!("wrote true probabilities to {}", truth_path.display()));
    Ok(())
}

pub fn cmd_train(args: &DataArgs, out: &mut dyn Write) -> Result<RiskModel> {
    let seed = args.common.seed();
    let cohort = load_source(&args.source, seed)?;
    let matrix = encode(&impute_missing(&cohort)?)?;
    let model = train(&matrix, &train_config(&args.model, seed))?;
    let path = args.common.path("model.json");
    write_atomic(&path, model.to_json()?.as_bytes())?;
    if let Some(fit) = model.fit_summary() {
        say(
            out,
            format_args!(
                "trained on {} rows: {} iterations, stop = {:?}, loss = {:.6}",
                matrix.n_rows(),
                fit.iterations,
                fit.stop,
                fit.loss
            ),
        );
    }
    say(out, format_args!("wrote {}", path.display()));
    Ok(model)
}

pub fn cmd_evaluate(args: &DataArgs, out: &mut dyn Write) -> Result<EvalReport> {
    check_bins(args.model.bins)?;
    let seed = args.common.seed();
    let cohort = load_source(&args.source, seed)?;
    let matrix = encode(&impute_missing(&cohort)?)?;
    let cv = cross_validate(&matrix, &train_config(&args.model, seed))?;
    let report = EvalReport::from_cv(&cv, args.model.bins)?;
    let path = args.common.path("eval.json");
    write_atomic(&path, json(report.to_json())?.as_bytes())?;
    say(
        out,
        format_args!(
            "{}-fold out-of-fold AUC {:.4}, Brier {:.4}",
            cv.folds.len(),
            report.auc,
            report.brier
        ),
    );
    say(out, format_args!("wrote {}", path.display()));
    Ok(report)
}

fn json(result: serde_json::Result<String>) -> Result<String> {
    result.map_err(|e| CliError::Usage(format!("serialization failed: {e}")))
}

fn check_schema(model: &RiskModel, cohort: &Cohort) -> Result<()> {
    let expected = model.recipe().feature_names();
    let got = cohort.schema().feature_names();
    if expected != got {
        return Err(CliError::SchemaMismatch {
            model: expected,
            cohort: got,
        });
    }
    Ok(())
}

fn explain_row(
    model: &RiskModel,
    records: &[Vec<f64>],
    options: &ExplainOptions,
    seed: u64,
) -> Result<(Attribution, BackgroundSet)> {
    let target = records.get(options.instance).ok_or(CliError::IndexOutOfRange {
        index: options.instance,
        len: records.len(),
    })?;
    if options.background_size == 0 {
        return Err(CliError::Usage("--background-size must be at least 1".into()));
    }
    let background = BackgroundSet::sample(records, options.background_size, seed)?;
    let attribution = match options.permutations {
        Some(n) => sampled_shap(model, target, &background, n, seed)?,
        None if model.recipe().n_features() <= MAX_EXACT_FEATURES => {
            exact_shap(model, target, &background)?
        }
        None => sampled_shap(model, target, &background, 2000, seed)?,
    };
    Ok((attribution, background))
}

pub fn cmd_explain(args: &ExplainArgs, out: &mut dyn Write) -> Result<Attribution> {
    let seed = args.common.seed();
    let model_path = args.model.clone().unwrap_or_else(|| args.common.path("model.json"));
    let model = RiskModel::from_json(&read_text(&model_path)?)?;
    let cohort = impute_missing(&load_source(&args.source, seed)?)?;
    check_schema(&model, &cohort)?;
    let records = cohort.complete_records()?;
    let (attribution, _) = explain_row(&model, &records, &args.explain, seed)?;
    write_explanation(&args.common, &attribution, out)?;
    Ok(attribution)
}

fn write_explanation(common: &CommonArgs, attribution: &Attribution, out: &mut dyn Write) -> Result<()> {
    let path = common.path("attribution.json");
    write_atomic(&path, json(attribution.to_json())?.as_bytes())?;
    let svg_path = common.out_dir.join(FigureKind::Waterfall.file_name(&common.run_id));
    write_atomic(&svg_path, render_waterfall(attribution, &FigureSpec::new(FigureKind::Waterfall)).as_bytes())?;
    say(
        out,
        format_args!(
            "E[f(X)] = {:.4}, f(x) = {:.4}; wrote {} and {}",
            attribution.base_value,
            attribution.prediction,
            path.display(),
            svg_path.display()
        ),
    );
    Ok(())
}

fn importance(model: &RiskModel, records: &[Vec<f64>], size: usize, seed: u64) -> Result<GlobalImportance> {
    if size == 0 {
        return Err(CliError::Usage("--background-size must be at least 1".into()));
    }
    let background = BackgroundSet::sample(records, size, seed)?;
    Ok(global_importance(model, records, &background)?)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let seed = args.common.seed();
    let model_path = args.model.clone().unwrap_or_else(|| args.common.path("model.json"));
    let eval_path = args.eval.clone().unwrap_or_else(|| args.common.path("eval.json"));
    let attribution_path = args
        .attribution
        .clone()
        .unwrap_or_else(|| args.common.path("attribution.json"));

    let model = RiskModel::from_json(&read_text(&model_path)?)?;
    let eval_text = read_text(&eval_path)?;
    let report: EvalReport = serde_json::from_str(&eval_text).map_err(|source| CliError::Json {
        path: eval_path.display().to_string(),
        source,
    })?;
    let attribution = Attribution::from_json(&read_text(&attribution_path)?).map_err(|source| CliError::Json {
        path: attribution_path.display().to_string(),
        source,
    })?;
    let cohort = impute_missing(&load_source(&args.source, seed)?)?;
    check_schema(&model, &cohort)?;
    let records = cohort.complete_records()?;
    let gi = importance(&model, &records, args.background_size, seed)?;
    let written = write_figures(&args.common, &attribution, &gi, &report)?;
    for p in written {
        say(out, format_args!("wrote {}", p.display()));
    }
    Ok(())
}

fn write_figures(
    common: &CommonArgs,
    attribution: &Attribution,
    gi: &GlobalImportance,
    report: &EvalReport,
) -> Result<Vec<PathBuf>> {
    let figures = [
        (FigureKind::Waterfall, render_waterfall(attribution, &FigureSpec::new(FigureKind::Waterfall))),
        (FigureKind::Summary, render_summary(gi, &FigureSpec::new(FigureKind::Summary))),
        (FigureKind::Roc, render_roc(&report.roc_curve(), &FigureSpec::new(FigureKind::Roc))),
        (
            FigureKind::Calibration,
            render_calibration(&report.calibration_curve(), &FigureSpec::new(FigureKind::Calibration)),
        ),
    ];
    let mut written = Vec::new();
    for (kind, svg) in figures {
        let path = common.out_dir.join(kind.file_name(&common.run_id));
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Everything a pipeline run produced, for callers that keep going.
#[derive(Debug)]
pub struct PipelineOutput {
    pub model: RiskModel,
    pub report: EvalReport,
    pub attribution: Attribution,
    pub importance: GlobalImportance,
    pub files: Vec<PathBuf>,
}

pub fn cmd_pipeline(args: &PipelineArgs, out: &mut dyn Write) -> Result<PipelineOutput> {
    check_bins(args.model.bins)?;
    let seed = args.common.seed();
    let cohort = impute_missing(&load_source(&args.source, seed)?)?;
    let records = cohort.complete_records()?;
    if args.explain.instance >= records.len() {
        return Err(CliError::IndexOutOfRange {
            index: args.explain.instance,
            len: records.len(),
        });
    }
    let matrix = encode(&cohort)?;
    let config = train_config(&args.model, seed);

    let cv = cross_validate(&matrix, &config)?;
    let report = EvalReport::from_cv(&cv, args.model.bins)?;
    let model = train(&matrix, &config)?;
    let (attribution, background) = explain_row(&model, &records, &args.explain, seed)?;
    let gi = global_importance(&model, &records, &background)?;

    let mut files = Vec::new();
    for (suffix, text) in [
        ("model.json", model.to_json()?),
        ("eval.json", json(report.to_json())?),
        ("attribution.json", json(attribution.to_json())?),
    ] {
        let path = args.common.path(suffix);
        write_atomic(&path, text.as_bytes())?;
        files.push(path);
    }
    files.extend(write_figures(&args.common, &attribution, &gi, &report)?);

    let ranking = gi.ranking();
    let top: Vec<&str> = ranking
        .iter()
        .take(2)
        .map(|&k| gi.feature_names[k].as_str())
        .collect();
    say(out, format_args!("rows            {}", matrix.n_rows()));
    say(out, format_args!("out-of-fold AUC {:.4}", report.auc));
    say(out, format_args!("Brier score     {:.4}", report.brier));
    say(out, format_args!("top features    {}", top.join(", ")));
    say(
        out,
        format_args!(
            "instance {}      E[f(X)] = {:.4} -> f(x) = {:.4}",
            args.explain.instance, attribution.base_value, attribution.prediction
        ),
    );
    for p in &files {
        say(out, format_args!("wrote {}", p.display()));
    }
    Ok(PipelineOutput {
        model,
        report,
        attribution,
        importance: gi,
        files,
    })
}
