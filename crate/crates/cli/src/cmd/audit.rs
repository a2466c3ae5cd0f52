use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pretrial_core::data::{CaseRecord, Outcome, PopulationSpec};
use pretrial_core::evaluation::{
    baseline_release_all, compare_policies, false_positive_framing, policy_table, rates_by_score, score_records,
    Decision, DetainAll, ForestPolicy, HandoffFallback, Policy, PsaMatrixPolicy, ReleaseAll, ScoreRow, TreePolicy,
};
use pretrial_core::fairness::{
    audit as run_audit, equal_width_edges, psa_scale_edges, tradeoff_demo, AuditCase, TradeoffReport, TradeoffSpec,
    DEFAULT_MIN_BIN_COUNT,
};
use pretrial_core::psa::PsaConfig;
use pretrial_service::Model;

use super::model::load_model;
use super::psa::load_psa_config;
use crate::{csv_string, invalid, opt, parse_outcome, read, CliError, Format, Io};

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Dataset CSV to audit.
    #[arg(long, value_name = "CSV", required_unless_present = "tradeoff", conflicts_with = "tradeoff")]
    pub data: Option<PathBuf>,
    /// Dataset schema (TOML). Inferred when omitted.
    #[arg(long, value_name = "TOML")]
    pub schema: Option<PathBuf>,
    /// Protected attribute defining the groups. All protected attributes combined when omitted.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, value_parser = parse_outcome, default_value = "FTA")]
    pub outcome: Outcome,
    /// Audit this tree or forest instead of the PSA.
    #[arg(long, value_name = "JSON")]
    pub model: Option<PathBuf>,
    /// PSA configuration (TOML). Built-in table when omitted.
    #[arg(long, value_name = "TOML")]
    pub psa_config: Option<PathBuf>,
    /// Calibration bins holding fewer cases are left out of the gap.
    #[arg(long, default_value_t = DEFAULT_MIN_BIN_COUNT)]
    pub min_bin_count: usize,
    /// Run the calibration versus error-rate demo on this population spec (TOML).
    #[arg(long, value_name = "TOML")]
    pub tradeoff: Option<PathBuf>,
    /// Scorer AUC for the demo.
    #[arg(long, default_value_t = 0.7)]
    pub auc: f64,
    /// Cases drawn per group for the demo.
    #[arg(long, default_value_t = 20_000)]
    pub n_per_group: usize,
    /// Demo scores at or above this are flagged high risk.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Demo seed; overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn group_of(r: &CaseRecord, attr: Option<&str>) -> Result<String, CliError> {
    match attr {
        None => Ok(r.group_key()),
        Some(a) => r
            .protected
            .get(a)
            .cloned()
            .ok_or_else(|| invalid(format!("case {}: no protected attribute {a:?}", r.case_id))),
    }
}

fn psa_cases(records: &[&CaseRecord], outcome: Outcome, config: &PsaConfig, group: Option<&str>) -> Result<Vec<AuditCase>, CliError> {
    let owned: Vec<CaseRecord> = records.iter().map(|r| (*r).clone()).collect();
    let scored = score_records(&owned, config).map_err(invalid)?;
    let policy = PsaMatrixPolicy { config: config.clone() };
    owned
        .iter()
        .zip(&scored)
        .map(|(r, s)| {
            let scale = if outcome == Outcome::Fta { s.scaled_fta } else { s.scaled_nca };
            let detain = policy.decide(r).map_err(invalid)? == Decision::Detain;
            Ok(AuditCase {
                score: f64::from(scale.unwrap_or_default()),
                prediction: Some(detain),
                outcome: r.outcomes.get(outcome).unwrap_or_default(),
                group: group_of(r, group)?,
            })
        })
        .collect()
}

fn model_cases(records: &[&CaseRecord], outcome: Outcome, model: &Model, group: Option<&str>) -> Result<Vec<AuditCase>, CliError> {
    records
        .iter()
        .map(|r| {
            let s = model
                .predict(&r.model_features(model.include_protected()))
                .map_err(|e| invalid(format!("case {}: {e}", r.case_id)))?;
            let prediction = match s.label {
                pretrial_core::tree::RiskLabel::HighRisk => Some(true),
                pretrial_core::tree::RiskLabel::VeryLowRisk => Some(false),
                pretrial_core::tree::RiskLabel::Handoff => None,
            };
            Ok(AuditCase {
                score: if s.n == 0 { 0.0 } else { s.k as f64 / s.n as f64 },
                prediction,
                outcome: r.outcomes.get(outcome).unwrap_or_default(),
                group: group_of(r, group)?,
            })
        })
        .collect()
}

pub fn audit(args: AuditArgs, io: &mut Io) -> Result<(), CliError> {
    if let Some(path) = &args.tradeoff {
        let pop = PopulationSpec::from_toml_str(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut spec = TradeoffSpec::from_population(&pop, args.auc, args.n_per_group, args.threshold);
        spec.min_bin_count = args.min_bin_count;
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        let report = tradeoff_demo(&spec).map_err(invalid)?;
        return io.emit(&render_tradeoff(&report, args.format));
    }
    let path = args.data.as_ref().expect("clap requires --data or --tradeoff");
    let all = crate::load_dataset(path, args.schema.as_deref())?;
    let records: Vec<&CaseRecord> =
        all.iter().filter(|r| r.released && r.outcomes.get(args.outcome).is_some()).collect();
    if records.len() < all.len() {
        io.note(&format!("auditing {} of {} records (released with {} observed)", records.len(), all.len(), args.outcome));
    }
    let group = args.group.as_deref();
    let report = match &args.model {
        Some(m) => {
            let model = load_model(m)?;
            let cases = model_cases(&records, args.outcome, &model, group)?;
            run_audit(&cases, &equal_width_edges(10), args.min_bin_count).map_err(invalid)?
        }
        None => {
            let config = load_psa_config(args.psa_config.as_deref())?;
            let cases = psa_cases(&records, args.outcome, &config, group)?;
            let mut r = run_audit(&cases, &psa_scale_edges(), args.min_bin_count).map_err(invalid)?;
            r.calibrate_against_pooled();
            r
        }
    };
    let text = match args.format {
        Format::Json => report.to_json() + "\n",
        Format::Table => report.to_csv(),
        Format::Text => {
            let mut t = String::new();
            for (g, a) in &report.groups {
                t += &format!(
                    "{g}: {} cases, AUC {}, FPR {}, FNR {}, abstention {}, calibration gap {}\n",
                    a.count,
                    opt(a.auc),
                    opt(a.fpr),
                    opt(a.fnr),
                    opt(a.abstention_rate),
                    opt(a.max_calibration_gap)
                );
            }
            t += &format!(
                "gaps: FPR {}, FNR {}, abstention {}, calibration {} (bins with at least {} cases)\n",
                opt(report.max_fpr_gap),
                opt(report.max_fnr_gap),
                opt(report.max_abstention_gap),
                opt(report.max_calibration_gap),
                report.min_bin_count
            );
            t
        }
    };
    io.emit(&text)
}

fn render_tradeoff(r: &TradeoffReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
        Format::Table => csv_string(
            &["group", "base_rate", "n", "auc", "fpr", "fnr", "expected_fpr", "expected_fnr", "max_calibration_gap"],
            r.groups.iter().map(|g| {
                vec![
                    g.name.clone(),
                    format!("{:.4}", g.base_rate),
                    g.n.to_string(),
                    opt(g.auc),
                    opt(g.fpr),
                    opt(g.fnr),
                    opt(g.expected_fpr),
                    opt(g.expected_fnr),
                    opt(g.max_calibration_gap),
                ]
            }),
        ),
        Format::Text => {
            let mut t = String::new();
            for g in &r.groups {
                t += &format!(
                    "{} (base rate {:.3}, n {}): AUC {}, FPR {} (expected {}), FNR {} (expected {}), calibration gap {}\n",
                    g.name,
                    g.base_rate,
                    g.n,
                    opt(g.auc),
                    opt(g.fpr),
                    opt(g.expected_fpr),
                    opt(g.fnr),
                    opt(g.expected_fnr),
                    opt(g.max_calibration_gap)
                );
            }
            t += &format!(
                "FPR gap {} (sigma {}), FNR gap {}, calibration gap {}\n",
                opt(r.fpr_gap),
                opt(r.fpr_gap_sigma),
                opt(r.fnr_gap),
                opt(r.max_calibration_gap)
            );
            for n in &r.notes {
                t += &format!("note: {n}\n");
            }
            t
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fallback {
    Release,
    Detain,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset CSV with PSA factors and outcomes.
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Dataset schema (TOML). Inferred when omitted.
    #[arg(long, value_name = "TOML")]
    pub schema: Option<PathBuf>,
    /// Also compare this tree or forest.
    #[arg(long, value_name = "JSON")]
    pub model: Option<PathBuf>,
    /// PSA configuration (TOML). Built-in table when omitted.
    #[arg(long, value_name = "TOML")]
    pub psa_config: Option<PathBuf>,
    /// Outcome for the release-all baseline.
    #[arg(long, value_parser = parse_outcome, default_value = "FTA")]
    pub outcome: Outcome,
    /// How handed-off cases are resolved when counting a model's detentions.
    #[arg(long, value_enum, default_value = "release")]
    pub fallback: Fallback,
    /// Print offense rates by PSA score instead of the policy comparison (table format).
    #[arg(long)]
    pub rates: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn score_table(rows: &[ScoreRow]) -> String {
    let mut out = Vec::new();
    for r in rows {
        for o in [Outcome::Fta, Outcome::Nca, Outcome::Nvca] {
            let c = r.cell(o);
            out.push(vec![o.to_string(), r.score.to_string(), c.count.to_string(), c.positives.to_string(), opt(c.rate)]);
        }
    }
    csv_string(&["outcome", "score", "released", "positives", "rate"], out)
}

pub fn evaluate(args: EvaluateArgs, io: &mut Io) -> Result<(), CliError> {
    let records = crate::load_dataset(&args.data, args.schema.as_deref())?;
    let config = load_psa_config(args.psa_config.as_deref())?;
    let model = args.model.as_deref().map(load_model).transpose()?;
    let scored_psa = records.iter().all(|r| r.psa_factors.is_some());
    if !scored_psa {
        io.note("some records lack PSA factors; the PSA policy and score table are skipped");
    }

    let baseline = baseline_release_all(&records, args.outcome).map_err(invalid)?;
    let rows = if scored_psa {
        let released: Vec<CaseRecord> = records.iter().filter(|r| r.released).cloned().collect();
        rates_by_score(&score_records(&released, &config).map_err(invalid)?).map_err(invalid)?
    } else {
        Vec::new()
    };

    let psa = PsaMatrixPolicy { config };
    let mut policies: Vec<&dyn Policy> = vec![&ReleaseAll, &DetainAll];
    if scored_psa {
        policies.push(&psa);
    }
    let (tree_policy, forest_policy);
    match &model {
        Some(Model::Tree(t)) => {
            tree_policy = TreePolicy { tree: t };
            policies.push(&tree_policy);
        }
        Some(Model::Forest(f)) => {
            forest_policy = ForestPolicy { forest: f };
            policies.push(&forest_policy);
        }
        None => {}
    }
    let fallback = match args.fallback {
        Fallback::Release => HandoffFallback::Release,
        Fallback::Detain => HandoffFallback::Detain,
    };
    let results = compare_policies(&records, &policies, fallback).map_err(invalid)?;
    if let Some(c) = results.first().and_then(|r| r.caveat.as_ref()) {
        io.note(&format!("caveat: {c}"));
    }
    let framing = false_positive_framing(&rows);

    let text = match args.format {
        Format::Table if args.rates => score_table(&rows),
        Format::Table => policy_table(&results),
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::json!({
                "outcome": args.outcome,
                "release_all_non_offense_rate": baseline,
                "policies": results,
                "rates_by_score": rows,
                "framing": framing,
            }))
            .expect("results serialize")
                + "\n"
        }
        Format::Text => {
            let mut t = format!(
                "Releasing everyone: {:.1}% of released defendants did NOT {}.\n",
                baseline * 100.0,
                match args.outcome {
                    Outcome::Fta => "fail to appear",
                    Outcome::Nca => "commit new criminal activity",
                    Outcome::Nvca => "commit new violent criminal activity",
                }
            );
            for r in &results {
                t += &format!(
                    "{}: detains {:.1}%, hands off {:.1}%, released {} rate {}\n",
                    r.policy,
                    r.detention_rate * 100.0,
                    r.handoff_rate * 100.0,
                    args.outcome,
                    opt(r.released_rates.get(&args.outcome).copied().flatten())
                );
            }
            for f in &framing {
                t += &f.sentence();
                t += "\n";
            }
            t
        }
    };
    io.emit(&text)
}
