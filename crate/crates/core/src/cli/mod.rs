//! The `tomo` command line.
//!
//! Options resolve as flag, then config file, then built-in default. The
//! config file is one JSON object; a key may sit at the top level or inside
//! a section named after the task (`"density": {"epochs": 20}`), and the
//! section wins. Every result file embeds the resolved options and seed.
//! Logs go to stderr; stdout carries one JSON manifest of produced files.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error.

mod commands;
pub mod files;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use files::{Artifact, RunInfo};

pub use commands::render_volume_tokens;

pub const CACHE_DIR_ENV: &str = "TOMO_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

pub(crate) fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "tomo", version, about = "Tomosynthesis embedding analysis toolkit")]
struct Cli {
    /// JSON file with option defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Leave timestamps out of result files.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Phantom(PhantomArgs),
    /// DICOMweb retrieval and synthetic cohorts.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Write token tensors for every view of a manifest.
    Embed(EmbedArgs),
    /// Linear density probe.
    #[command(subcommand)]
    Density(DensityCommand),
    /// Five-year discrete-time risk head.
    #[command(subcommand)]
    Risk(RiskCommand),
    /// Lesion detection on phantom volumes.
    #[command(subcommand)]
    Detect(DetectCommand),
    /// Paired tests and subgroup tables over prediction files.
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Debug, Subcommand)]
enum IngestCommand {
    /// Pull manifest volumes through the local cache.
    Fetch(FetchArgs),
    /// Same as `tomo phantom`.
    Phantom(PhantomArgs),
}

#[derive(Debug, Subcommand)]
enum DensityCommand {
    Train(DensityTrainArgs),
    Eval(DensityEvalArgs),
}

#[derive(Debug, Subcommand)]
enum RiskCommand {
    Train(RiskTrainArgs),
    Eval(RiskEvalArgs),
}

#[derive(Debug, Subcommand)]
enum DetectCommand {
    Train(DetectTrainArgs),
    Predict(DetectPredictArgs),
    Eval(DetectEvalArgs),
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Paired comparison of two prediction files.
    Compare(CompareArgs),
    /// Accuracy by demographic group.
    Subgroup(SubgroupArgs),
}

#[derive(Debug, Args)]
pub(crate) struct PhantomArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_exams: Option<usize>,
    #[arg(long)]
    pub n_slices: Option<u32>,
    #[arg(long)]
    pub lesion_rate: Option<f64>,
    #[arg(long)]
    pub censor_rate: Option<f64>,
    #[arg(long)]
    pub risk_coef: Option<f64>,
    /// Also render every volume into a PACS directory tree.
    #[arg(long)]
    pub volumes: bool,
}

#[derive(Debug, Args)]
pub(crate) struct FetchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub capacity_bytes: Option<u64>,
    #[arg(long)]
    pub prefetch_depth: Option<usize>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub token: Option<String>,
    /// Restrict requests to these studies (repeatable).
    #[arg(long = "allow-study")]
    pub allow_study: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct EmbedArgs {
    /// `synthetic` or `phantom`.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub grid_side: Option<usize>,
    #[arg(long)]
    pub n_slices: Option<usize>,
    #[arg(long)]
    pub density_separation: Option<f64>,
    #[arg(long)]
    pub risk_separation: Option<f64>,
    #[arg(long)]
    pub exam_noise: Option<f64>,
    #[arg(long)]
    pub token_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub(crate) struct DensityTrainArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub fraction_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct EvalCommon {
    #[arg(long)]
    pub split: Option<String>,
    /// Overrides the store recorded at training time.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-case predictions for `tomo stats`.
    #[arg(long)]
    pub preds_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct DensityEvalArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub common: EvalCommon,
}

#[derive(Debug, Args)]
pub(crate) struct RiskTrainArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Manifest with outcomes and splits.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct RiskEvalArgs {
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// `auroc` or `loss`.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Add per-density-category tables.
    #[arg(long)]
    pub by_density: bool,
    #[arg(long)]
    pub min_events: Option<usize>,
    /// Year whose risk goes into the predictions file.
    #[arg(long)]
    pub preds_year: Option<usize>,
    #[command(flatten)]
    pub common: EvalCommon,
}

#[derive(Debug, Args)]
pub(crate) struct DetectTrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for phantom rendering.
    #[arg(long)]
    pub render_seed: Option<u64>,
    #[arg(long)]
    pub token_dim: Option<usize>,
    #[arg(long)]
    pub embed_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cls_box_ratio: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct DetectPredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub render_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the split's ground truth here.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct DetectEvalArgs {
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Comma-separated false-positive rates.
    #[arg(long)]
    pub fp: Option<String>,
    /// Count lesion- and detection-free volumes of this manifest split too.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct CompareArgs {
    #[arg(long)]
    pub preds_a: Option<PathBuf>,
    #[arg(long)]
    pub preds_b: Option<PathBuf>,
    /// `mcnemar` or `delong`.
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct SubgroupArgs {
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub demo: Option<PathBuf>,
    /// `race` or `age`.
    #[arg(long)]
    pub key: Option<String>,
    /// Race categories reported separately (repeatable).
    #[arg(long = "category")]
    pub categories: Vec<String>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-invocation state: option resolution and the list of files written.
pub(crate) struct Ctx {
    task: String,
    file: serde_json::Map<String, serde_json::Value>,
    resolved: BTreeMap<String, serde_json::Value>,
    deterministic: bool,
    seed: Option<u64>,
    produced: Vec<PathBuf>,
}

impl Ctx {
    fn new(task: &str, file: serde_json::Map<String, serde_json::Value>, deterministic: bool) -> Self {
        Self { task: task.into(), file, resolved: BTreeMap::new(), deterministic, seed: None, produced: Vec::new() }
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        let section = self.task.split(' ').next().unwrap_or_default();
        let value =
            self.file.get(section).and_then(|s| s.get(key)).or_else(|| self.file.get(key).filter(|v| !v.is_object()));
        value
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("config key {key:?}: {e}"))))
            .transpose()
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        self.resolved.insert(key.into(), serde_json::to_value(value).expect("plain option value"));
    }

    pub fn opt<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.lookup(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn get<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn require<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.opt(key, flag)?.ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Parse a string option into a typed value, as a usage error.
    pub fn parse<T: std::str::FromStr>(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.get(key, flag, default.to_string())?;
        s.parse().map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))
    }

    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let s = self.get("seed", flag, 0)?;
        self.seed = Some(s);
        Ok(s)
    }

    fn run_info(&self) -> RunInfo {
        let created_at = if self.deterministic {
            None
        } else {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        RunInfo {
            tool: "tomo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            task: self.task.clone(),
            seed: self.seed,
            config: self.resolved.clone(),
            created_at,
        }
    }

    /// Write `result` wrapped with the run block.
    pub fn write_artifact<T: Serialize>(&mut self, path: &Path, result: &T) -> Result<(), CliError> {
        let artifact = Artifact { run: self.run_info(), result };
        let mut bytes = serde_json::to_vec_pretty(&artifact).map_err(data)?;
        bytes.push(b'\n');
        self.write_bytes(path, &bytes)
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
        crate::embeddings::atomic_write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        self.produced.push(path.to_path_buf());
        Ok(())
    }

    fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "task": self.task,
            "seed": self.seed,
            "config": self.resolved,
            "files": self.produced.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }
}

fn load_config(path: Option<&Path>) -> Result<serde_json::Map<String, serde_json::Value>, CliError> {
    let Some(path) = path else { return Ok(Default::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(serde_json::Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

fn task_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Phantom(_) | Command::Ingest(IngestCommand::Phantom(_)) => "phantom",
        Command::Ingest(IngestCommand::Fetch(_)) => "ingest fetch",
        Command::Embed(_) => "embed",
        Command::Density(DensityCommand::Train(_)) => "density train",
        Command::Density(DensityCommand::Eval(_)) => "density eval",
        Command::Risk(RiskCommand::Train(_)) => "risk train",
        Command::Risk(RiskCommand::Eval(_)) => "risk eval",
        Command::Detect(DetectCommand::Train(_)) => "detect train",
        Command::Detect(DetectCommand::Predict(_)) => "detect predict",
        Command::Detect(DetectCommand::Eval(_)) => "detect eval",
        Command::Stats(StatsCommand::Compare(_)) => "stats compare",
        Command::Stats(StatsCommand::Subgroup(_)) => "stats subgroup",
    }
}

fn dispatch(ctx: &mut Ctx, cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Phantom(a) | Command::Ingest(IngestCommand::Phantom(a)) => commands::phantom(ctx, a),
        Command::Ingest(IngestCommand::Fetch(a)) => commands::fetch(ctx, a),
        Command::Embed(a) => commands::embed(ctx, a),
        Command::Density(DensityCommand::Train(a)) => commands::density_train(ctx, a),
        Command::Density(DensityCommand::Eval(a)) => commands::density_eval(ctx, a),
        Command::Risk(RiskCommand::Train(a)) => commands::risk_train(ctx, a),
        Command::Risk(RiskCommand::Eval(a)) => commands::risk_eval(ctx, a),
        Command::Detect(DetectCommand::Train(a)) => commands::detect_train(ctx, a),
        Command::Detect(DetectCommand::Predict(a)) => commands::detect_predict(ctx, a),
        Command::Detect(DetectCommand::Eval(a)) => commands::detect_eval(ctx, a),
        Command::Stats(StatsCommand::Compare(a)) => commands::stats_compare(ctx, a),
        Command::Stats(StatsCommand::Subgroup(a)) => commands::stats_subgroup(ctx, a),
    }
}

/// Parse `args` (program name first), execute, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(manifest) => {
            println!("{}", serde_json::to_string_pretty(&manifest).expect("json value"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    let file = load_config(cli.config.as_deref())?;
    let mut ctx = Ctx::new(task_name(&cli.command), file, cli.deterministic);
    match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(data)?;
            pool.install(|| dispatch(&mut ctx, cli.command))?;
        }
        None => dispatch(&mut ctx, cli.command)?,
    }
    Ok(ctx.manifest())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(config: &str, task: &str) -> Ctx {
        let serde_json::Value::Object(m) = serde_json::from_str(config).unwrap() else { panic!() };
        Ctx::new(task, m, true)
    }

    #[test]
    fn precedence_flag_config_default() {
        let mut c = ctx(r#"{"epochs": 5, "lr": 0.5, "density": {"epochs": 9}}"#, "density train");
        assert_eq!(c.get("epochs", None, 1usize).unwrap(), 9);
        assert_eq!(c.get("epochs", Some(3usize), 1).unwrap(), 3);
        assert_eq!(c.get("lr", None, 0.1).unwrap(), 0.5);
        assert_eq!(c.get("batch_size", None, 64usize).unwrap(), 64);
        assert_eq!(c.resolved["batch_size"], serde_json::json!(64));
    }

    #[test]
    fn bad_config_type_is_usage() {
        let mut c = ctx(r#"{"epochs": "many"}"#, "risk train");
        assert_eq!(c.get("epochs", None, 1usize).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_flag_is_usage() {
        assert_eq!(run(["tomo", "phantom", "--bogus"]), 2);
        assert_eq!(run(["tomo", "--version"]), 0);
    }
}
