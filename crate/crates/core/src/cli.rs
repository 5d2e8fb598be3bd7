//! Command-line front end: `bgn <command> [flags]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bann::{self, format_number, BannModel};
use crate::bounds::bound_chain;
use crate::dataset::{load_csv, split, standardize, Dataset, SplitSpec};
use crate::error::{DataError, ExplainError, ModelError, TrainError};
use crate::explain::{background_sample, importance_report, report_to_dot, report_to_table};
use crate::lasso::SparsityTarget;
use crate::trainer::{train, TrainConfig};
use crate::tree::{fit_tree, render_tree, tree_mse, TreeConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bgn", version, about = "Greedy binary activated networks for tabular regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, standardize and train a network; writes model, trace and manifest.
    Train(TrainArgs),
    /// Mean squared error of a model file on a data file.
    Eval(EvalArgs),
    /// Per-layer lower bounds on the training error of a model.
    Bounds(EvalArgs),
    /// Relative SHAP importance of features and neurons.
    Explain(ExplainArgs),
    /// Closed-form equation of a single-hidden-layer model.
    Equation(EquationArgs),
    /// Depth-limited regression tree baseline.
    Tree(TreeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the label column.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.70)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub valid_frac: f64,
}

impl DataArgs {
    fn spec(&self) -> SplitSpec {
        SplitSpec { train_fraction: self.train_frac, valid_fraction: self.valid_frac, seed: self.seed }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Maximum neurons per hidden layer.
    #[arg(long, default_value_t = 1000)]
    pub max_width: usize,
    /// Maximum number of hidden layers.
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    /// Maximum non-zero input weights per neuron.
    #[arg(long = "d0star", default_value_t = 2)]
    pub d0star: usize,
    /// Neurons without validation improvement before a layer stops.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Disable random neuron replacement.
    #[arg(long)]
    pub no_improvement1: bool,
    /// Output directory.
    #[arg(long, default_value = "bgn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Portion {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Portion of the seeded split to use.
    #[arg(long, value_enum, default_value_t = Portion::Train)]
    pub split: Portion,
    /// Directory for the run manifest.
    #[arg(long, default_value = "bgn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Dot,
    Table,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Portion of the seeded split to explain.
    #[arg(long, value_enum, default_value_t = Portion::Test)]
    pub split: Portion,
    /// Training rows sampled as the Shapley background.
    #[arg(long, default_value_t = 64)]
    pub background_size: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Dot)]
    pub format: ReportFormat,
    /// Directory for the report and run manifest.
    #[arg(long, default_value = "bgn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EquationArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Significant digits of printed constants.
    #[arg(long, default_value_t = 3)]
    pub digits: usize,
    /// Directory for the run manifest.
    #[arg(long, default_value = "bgn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TreeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    /// Output directory.
    #[arg(long, default_value = "bgn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub features: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset: Option<DatasetInfo>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub duration_seconds: f64,
    pub version: String,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::new(EXIT_DATA, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::new(EXIT_DATA, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::InvalidConfig(_) => EXIT_USAGE,
            TrainError::TooFewExamples => EXIT_DATA,
            _ => EXIT_DEGENERATE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        CliError::new(EXIT_DATA, e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn fmt6(v: f64) -> String {
    format_number(v, Some(6))
}

fn checksum(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, text: &str) -> CliResult<String> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot write {}: {e}", path.display())))?;
    Ok(path.display().to_string())
}

fn read_model(path: &Path) -> CliResult<BannModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_DATA, format!("cannot read model {}: {e}", path.display())))?;
    bann::deserialize(&text).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

struct Loaded {
    info: DatasetInfo,
    raw: Dataset,
}

fn load(args: &DataArgs) -> CliResult<Loaded> {
    let raw = load_csv(&args.data, &args.target)?;
    args.spec().validate()?;
    let info = DatasetInfo {
        path: args.data.display().to_string(),
        sha256: checksum(&args.data)?,
        rows: raw.len(),
        features: raw.n_features(),
    };
    Ok(Loaded { info, raw })
}

fn portion(raw: &Dataset, args: &DataArgs, which: Portion) -> CliResult<Dataset> {
    if which == Portion::All {
        return Ok(raw.clone());
    }
    let (tr, va, te) = split(raw, &args.spec())?;
    Ok(match which {
        Portion::Train => tr,
        Portion::Valid => va,
        _ => te,
    })
}

/// Checks that a data file carries the columns a model was trained on.
fn check_compatible(model: &BannModel, data: &Dataset) -> CliResult<()> {
    if model.input_dim() != data.n_features() {
        return Err(CliError::new(
            EXIT_DATA,
            format!(
                "model expects {} features ({}), data has {} ({})",
                model.input_dim(),
                model.feature_names.join(", "),
                data.n_features(),
                data.feature_names.join(", ")
            ),
        ));
    }
    if model.feature_names != data.feature_names {
        return Err(CliError::new(
            EXIT_DATA,
            format!(
                "feature columns differ: model has [{}], data has [{}]",
                model.feature_names.join(", "),
                data.feature_names.join(", ")
            ),
        ));
    }
    Ok(())
}

fn finish(
    command: &str,
    flags: &impl Serialize,
    seed: Option<u64>,
    dataset: Option<DatasetInfo>,
    out: &Path,
    mut outputs: Vec<String>,
    metrics: BTreeMap<String, f64>,
    start: Instant,
) -> CliResult<()> {
    let path = out.join(format!("{command}.manifest.json"));
    outputs.push(path.display().to_string());
    let manifest = RunManifest {
        command: command.to_string(),
        flags: serde_json::to_value(flags).expect("flags serialize"),
        seed,
        dataset,
        outputs,
        metrics,
        duration_seconds: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&path, &text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = TrainConfig {
        max_width: args.max_width,
        max_hidden_layers: args.max_depth,
        sparsity: SparsityTarget::new(args.d0star),
        patience: args.patience,
        seed: args.data.seed,
        improvement1_enabled: !args.no_improvement1,
        ..TrainConfig::default()
    };
    let Loaded { info, raw } = load(&args.data)?;
    config.validate(raw.n_features())?;
    let (tr, va, te) = split(&raw, &args.data.spec())?;
    let (tr, rest) = standardize(&tr, &[va, te]);
    let (va, te) = (&rest[0], &rest[1]);
    let (model, trace) = train(&tr, va, &config)?;
    if model.n_neurons() == 0 {
        return Err(CliError::new(
            EXIT_DEGENERATE,
            "training is degenerate: no neuron reduces the training error",
        ));
    }
    let test_mse = model.mse(te)?;
    let outputs = vec![
        write_file(&args.out.join("model.json"), &bann::serialize(&model))?,
        write_file(&args.out.join("trace.json"), &trace.to_json())?,
    ];
    let retained = model.retained_features();
    println!("train mse: {}", fmt6(model.metadata.train_mse));
    println!("valid mse: {}", fmt6(model.metadata.valid_mse));
    println!("test mse:  {}", fmt6(test_mse));
    println!(
        "depth: {}  widths: {:?}  neurons: {}",
        model.depth(),
        model.widths(),
        model.n_neurons()
    );
    println!(
        "retained features: {} of {} ({})",
        retained.len(),
        model.input_dim(),
        retained.iter().map(|&j| model.feature_names[j].as_str()).collect::<Vec<_>>().join(", ")
    );
    let metrics = BTreeMap::from([
        ("train_mse".to_string(), model.metadata.train_mse),
        ("valid_mse".to_string(), model.metadata.valid_mse),
        ("test_mse".to_string(), test_mse),
    ]);
    finish("train", args, Some(args.data.seed), Some(info), &args.out, outputs, metrics, start)
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = read_model(&args.model)?;
    let Loaded { info, raw } = load(&args.data)?;
    check_compatible(&model, &raw)?;
    let data = portion(&raw, &args.data, args.split)?;
    let mse = model.mse(&data)?;
    println!("mse: {}", fmt6(mse));
    let metrics = BTreeMap::from([("mse".to_string(), mse)]);
    finish("eval", args, Some(args.data.seed), Some(info), &args.out, Vec::new(), metrics, start)
}

fn cmd_bounds(args: &EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = read_model(&args.model)?;
    let Loaded { info, raw } = load(&args.data)?;
    check_compatible(&model, &raw)?;
    let data = portion(&raw, &args.data, args.split)?;
    let chain = bound_chain(&model, &data)?;
    print!("{}", chain.to_table());
    let mut metrics = BTreeMap::from([("train_mse".to_string(), chain.train_mse)]);
    for l in &chain.levels {
        let key = l.layer.map_or("bound_output".to_string(), |k| format!("bound_layer_{k}"));
        metrics.insert(key, l.bound);
    }
    finish("bounds", args, Some(args.data.seed), Some(info), &args.out, Vec::new(), metrics, start)
}

fn cmd_explain(args: &ExplainArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = read_model(&args.model)?;
    let Loaded { info, raw } = load(&args.data)?;
    check_compatible(&model, &raw)?;
    let explain_set = portion(&raw, &args.data, args.split)?;
    let train_part = portion(&raw, &args.data, Portion::Train)?;
    let background = background_sample(&train_part, args.background_size, args.data.seed);
    let report = importance_report(&model, &explain_set, &background)?;
    let (text, ext) = match args.format {
        ReportFormat::Json => (serde_json::to_string_pretty(&report).expect("report serializes") + "\n", "json"),
        ReportFormat::Table => (report_to_table(&report, &model), "txt"),
        ReportFormat::Dot => match report_to_dot(&report, &model) {
            Ok(dot) => (dot, "dot"),
            Err(_) => {
                log::warn!("dot output needs a single hidden layer; writing a table instead");
                eprintln!("warning: model has {} hidden layers; falling back to a table", model.depth());
                (report_to_table(&report, &model), "txt")
            }
        },
    };
    print!("{text}");
    let outputs = vec![write_file(&args.out.join(format!("explain.{ext}")), &text)?];
    let metrics = report
        .feature_names
        .iter()
        .zip(&report.feature_rsi)
        .map(|(n, r)| (format!("rsi_{n}"), *r))
        .collect();
    finish("explain", args, Some(args.data.seed), Some(info), &args.out, outputs, metrics, start)
}

fn cmd_equation(args: &EquationArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = read_model(&args.model)?;
    match bann::render_equation(&model, Some(args.digits)) {
        Ok(eq) => println!("{eq}"),
        Err(ModelError::NotSingleLayer(depth)) => {
            eprintln!("warning: model has {depth} hidden layers; printing the layered form");
            print!("{}", bann::render_layered(&model, Some(args.digits)));
        }
        Err(e) => return Err(e.into()),
    }
    finish("equation", args, None, None, &args.out, Vec::new(), BTreeMap::new(), start)
}

fn cmd_tree(args: &TreeArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = TreeConfig {
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        seed: args.data.seed,
    };
    if config.max_depth == 0 || config.min_samples_leaf == 0 {
        return Err(CliError::new(EXIT_USAGE, "--max-depth and --min-samples-leaf must be at least 1"));
    }
    let Loaded { info, raw } = load(&args.data)?;
    let (tr, va, te) = split(&raw, &args.data.spec())?;
    let tree = fit_tree(&tr, &config)?;
    let (train_mse, valid_mse, test_mse) = (tree_mse(&tree, &tr)?, tree_mse(&tree, &va)?, tree_mse(&tree, &te)?);
    print!("{}", render_tree(&tree, &raw.feature_names));
    println!("train mse: {}", fmt6(train_mse));
    println!("valid mse: {}", fmt6(valid_mse));
    println!("test mse:  {}", fmt6(test_mse));
    let text = serde_json::to_string_pretty(&tree).expect("tree serializes") + "\n";
    let outputs = vec![write_file(&args.out.join("tree.json"), &text)?];
    let metrics = BTreeMap::from([
        ("train_mse".to_string(), train_mse),
        ("valid_mse".to_string(), valid_mse),
        ("test_mse".to_string(), test_mse),
    ]);
    finish("tree", args, Some(args.data.seed), Some(info), &args.out, outputs, metrics, start)
}

fn init_logging() {
    let level = match std::env::var("BGN_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Equation(a) => cmd_equation(a),
        Command::Tree(a) => cmd_tree(a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_target_is_usage_error() {
        assert_eq!(run(["bgn", "train", "--data", "x.csv"]), EXIT_USAGE);
        assert_eq!(run(["bgn", "train", "--help"]), EXIT_OK);
    }

    #[test]
    fn train_error_codes() {
        assert_eq!(CliError::from(TrainError::InvalidConfig("x".into())).code, EXIT_USAGE);
        assert_eq!(CliError::from(TrainError::ZeroDirection).code, EXIT_DEGENERATE);
    }
}
