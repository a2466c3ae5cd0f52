use std::path::{Path, PathBuf};

use clap::Args;
use pretrial_core::psa::{assess, render_court_report, CaseInput, ExclusionConfig, PsaConfig, SmoothingMode};

use crate::{csv_string, invalid, read, CliError, Format, Io};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Case file (TOML, schema psa-case/v1): factor responses, booked offenses, report header.
    #[arg(long, value_name = "TOML")]
    pub factors: PathBuf,
    /// PSA weights, scales and framework matrix (TOML). Built-in table when omitted.
    #[arg(long, value_name = "TOML")]
    pub psa_config: Option<PathBuf>,
    /// Step-two exclusion rules (TOML). Exclusions are off unless this is given.
    #[arg(long, value_name = "TOML")]
    pub exclusions: Option<PathBuf>,
    /// Replace the age cliff with a linear ramp from 21 to 25.
    #[arg(long)]
    pub smooth_age: bool,
    /// Output format; defaults to the rendered court report.
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

pub(crate) fn load_psa_config(path: Option<&Path>) -> Result<PsaConfig, CliError> {
    match path {
        Some(p) => PsaConfig::from_toml_str(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display()))),
        None => Ok(PsaConfig::default()),
    }
}

pub fn score(args: ScoreArgs, io: &mut Io) -> Result<(), CliError> {
    let case = CaseInput::from_toml_str(&read(&args.factors)?)
        .map_err(|e| invalid(format!("{}: {e}", args.factors.display())))?;
    let mut config = load_psa_config(args.psa_config.as_deref())?;
    config.exclusions = match &args.exclusions {
        Some(p) => {
            let mut ex = ExclusionConfig::from_toml_str(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            ex.enabled = true;
            ex
        }
        None => ExclusionConfig::disabled(),
    };
    if args.smooth_age {
        config.smoothing = SmoothingMode::DEFAULT_RAMP;
    }
    case.factors.validate().map_err(invalid)?;
    let a = assess(&case.factors, &case.offenses, &config).map_err(invalid)?;
    let text = match args.format {
        Format::Text => render_court_report(&a, &case.factors, &case.metadata, &case.offenses, &config.matrix),
        Format::Json => serde_json::to_string_pretty(&a).expect("assessment serializes") + "\n",
        Format::Table => csv_string(
            &[
                "raw_fta",
                "raw_nca",
                "raw_nvca",
                "scaled_fta",
                "scaled_nca",
                "nvca_flag",
                "recommendation",
                "step2_applied",
                "exclusion",
            ],
            [vec![
                a.raw_fta.to_string(),
                a.raw_nca.to_string(),
                a.raw_nvca.to_string(),
                a.scaled_fta.to_string(),
                a.scaled_nca.to_string(),
                a.nvca_flag.to_string(),
                a.recommendation.to_string(),
                a.step2_applied.to_string(),
                a.exclusion.clone().unwrap_or_default(),
            ]],
        ),
    };
    io.emit(&text)
}
