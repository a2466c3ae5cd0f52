//! The `pretrial` command line.
//!
//! Every subcommand wraps one library operation. Results go to stdout (or
//! the file named by `--out`), diagnostics to stderr. Exit codes: 0 on
//! success, 1 when an input fails validation, 2 on a usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pretrial_core::data::{infer_schema, parse_dataset, CaseRecord, DatasetSchema, Outcome};
use thiserror::Error;

mod cmd;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "pretrial", version, about = "Pretrial risk assessment toolkit: PSA scoring, handoff trees, audits")]
pub struct Cli {
    /// More diagnostics on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Comma-separated rows with a header.
    Table,
    /// Human-readable summary.
    Text,
    /// JSON document (one object per line for per-case output).
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one PSA questionnaire and render the court report.
    Score(cmd::psa::ScoreArgs),
    /// Summarize a dataset, or list a model's leaves (optionally against a holdout).
    Report(cmd::data::ReportArgs),
    /// Generate a synthetic population as CSV.
    Synth(cmd::data::SynthArgs),
    /// Fit a handoff tree.
    Train(cmd::model::TrainArgs),
    /// Fit a handoff forest.
    TrainForest(cmd::model::TrainForestArgs),
    /// Predict cases with a tree or forest model.
    Predict(cmd::model::PredictArgs),
    /// Fairness audit of PSA or model predictions, or the calibration/error-rate tradeoff demo.
    Audit(cmd::audit::AuditArgs),
    /// Release-all baseline, offense rates by score and policy comparison.
    Evaluate(cmd::audit::EvaluateArgs),
    /// Run the HTTP decision service.
    Serve(cmd::serve::ServeArgs),
}

/// Dataset file plus its optional schema.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Dataset schema (TOML). Inferred from the header when omitted.
    #[arg(long, value_name = "TOML")]
    pub schema: Option<PathBuf>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Vec<CaseRecord>, CliError> {
        load_dataset(&self.data, self.schema.as_deref())
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Read { path: path.to_path_buf(), message: e.to_string() })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Write { path: path.to_path_buf(), message: e.to_string() })
}

pub(crate) fn load_dataset(path: &Path, schema: Option<&Path>) -> Result<Vec<CaseRecord>, CliError> {
    let text = read(path)?;
    let schema = match schema {
        Some(p) => DatasetSchema::from_toml_str(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => infer_schema(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
    };
    parse_dataset(text.as_bytes(), &schema).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn parse_outcome(s: &str) -> Result<Outcome, String> {
    s.parse::<Outcome>().map_err(|e| e.to_string())
}

/// Output sinks handed to each subcommand.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub verbose: u8,
}

impl Io<'_> {
    pub(crate) fn emit(&mut self, text: &str) -> Result<(), CliError> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Write { path: "<stdout>".into(), message: e.to_string() })
    }

    pub(crate) fn note(&mut self, text: &str) {
        let _ = writeln!(self.err, "{text}");
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let mut io = Io { out, err, verbose: cli.verbose };
    let result = match cli.command {
        Command::Score(a) => cmd::psa::score(a, &mut io),
        Command::Report(a) => cmd::data::report(a, &mut io),
        Command::Synth(a) => cmd::data::synth(a, &mut io),
        Command::Train(a) => cmd::model::train(a, &mut io),
        Command::TrainForest(a) => cmd::model::train_forest(a, &mut io),
        Command::Predict(a) => cmd::model::predict(a, &mut io),
        Command::Audit(a) => cmd::audit::audit(a, &mut io),
        Command::Evaluate(a) => cmd::audit::evaluate(a, &mut io),
        Command::Serve(a) => cmd::serve::serve(a, &mut io),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Writes CSV rows to a string.
pub(crate) fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}
