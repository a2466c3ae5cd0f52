use std::path::PathBuf;

use clap::Args;
use pretrial_core::data::{summarize, synthesize_population, write_dataset, Outcome, PopulationSpec, RateCount};
use pretrial_core::tree::LeafRow;
use pretrial_service::{LeafListing, Model};

use super::model::load_model;
use crate::{csv_string, invalid, load_dataset, opt, read, write_file, CliError, Format, Io};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Population spec (TOML, schema population-spec/v1).
    #[arg(long, value_name = "TOML")]
    pub spec: PathBuf,
    /// Number of defendants.
    #[arg(long)]
    pub n: usize,
    /// Random seed; overrides the seed in the spec.
    #[arg(long)]
    pub seed: u64,
    /// Output CSV. Written to stdout when omitted.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
    /// Also write the dataset schema (TOML) here.
    #[arg(long, value_name = "TOML")]
    pub schema_out: Option<PathBuf>,
}

pub fn synth(args: SynthArgs, io: &mut Io) -> Result<(), CliError> {
    let mut spec = PopulationSpec::from_toml_str(&read(&args.spec)?)
        .map_err(|e| invalid(format!("{}: {e}", args.spec.display())))?;
    spec.seed = args.seed;
    let records = synthesize_population(&spec, args.n).map_err(invalid)?;
    let schema = spec.dataset_schema();
    let mut buf = Vec::new();
    write_dataset(&records, &schema, &mut buf).map_err(invalid)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    match &args.out {
        Some(p) => {
            write_file(p, &text)?;
            if io.verbose > 0 {
                io.note(&format!("wrote {} records to {}", records.len(), p.display()));
            }
        }
        None => io.emit(&text)?,
    }
    if let Some(p) = &args.schema_out {
        write_file(p, &schema.to_toml_string())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Dataset CSV to summarize.
    #[arg(long, value_name = "CSV", required_unless_present = "model", conflicts_with = "model")]
    pub data: Option<PathBuf>,
    /// Dataset schema (TOML) for --data or --holdout. Inferred when omitted.
    #[arg(long, value_name = "TOML")]
    pub schema: Option<PathBuf>,
    /// Tree or forest model whose leaves to list.
    #[arg(long, value_name = "JSON")]
    pub model: Option<PathBuf>,
    /// Holdout CSV: compare each tree leaf's training rate with its holdout rate.
    #[arg(long, value_name = "CSV", requires = "model")]
    pub holdout: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn rate_row(group: &str, o: Outcome, r: &RateCount) -> Vec<String> {
    vec![group.to_string(), o.to_string(), r.eligible.to_string(), r.positives.to_string(), opt(r.rate)]
}

pub fn report(args: ReportArgs, io: &mut Io) -> Result<(), CliError> {
    if let Some(path) = &args.data {
        let records = load_dataset(path, args.schema.as_deref())?;
        let s = summarize(&records).map_err(invalid)?;
        let text = match args.format {
            Format::Json => serde_json::to_string_pretty(&s).expect("summary serializes") + "\n",
            Format::Table => {
                let mut rows: Vec<Vec<String>> = s.base_rates.iter().map(|(o, r)| rate_row("all", *o, r)).collect();
                for (g, rates) in &s.groups {
                    rows.extend(rates.iter().map(|(o, r)| rate_row(g, *o, r)));
                }
                csv_string(&["group", "outcome", "eligible", "positives", "rate"], rows)
            }
            Format::Text => {
                let mut t = format!("{} records, {} released\n", s.total, s.released);
                for (o, r) in &s.base_rates {
                    t += &format!("{o} base rate {} ({} of {})\n", opt(r.rate), r.positives, r.eligible);
                }
                for (g, rates) in &s.groups {
                    for (o, r) in rates {
                        t += &format!("  {g}: {o} {} ({} of {})\n", opt(r.rate), r.positives, r.eligible);
                    }
                }
                t
            }
        };
        return io.emit(&text);
    }
    let path = args.model.as_ref().expect("clap requires --data or --model");
    let model = load_model(path)?;
    if let Some(holdout) = &args.holdout {
        let Model::Tree(tree) = &model else {
            return Err(CliError::Invalid("--holdout needs a single tree model".into()));
        };
        let records = load_dataset(holdout, args.schema.as_deref())?;
        let rows = tree.validate_rates(&records).map_err(invalid)?;
        let text = match args.format {
            Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
            Format::Table => csv_string(
                &["leaf_id", "label", "train_n", "train_p", "holdout_n", "holdout_k", "holdout_p", "gap", "flagged"],
                rows.iter().map(|r| {
                    vec![
                        r.leaf_id.to_string(),
                        r.label.to_string(),
                        r.train_n.to_string(),
                        format!("{:.4}", r.train_p),
                        r.holdout_n.to_string(),
                        r.holdout_k.to_string(),
                        opt(r.holdout_p),
                        opt(r.gap),
                        r.flagged.to_string(),
                    ]
                }),
            ),
            Format::Text => rows
                .iter()
                .map(|r| {
                    format!(
                        "leaf {} ({}): train {:.3} on {}, holdout {} on {}{}\n",
                        r.leaf_id,
                        r.label,
                        r.train_p,
                        r.train_n,
                        opt(r.holdout_p),
                        r.holdout_n,
                        if r.flagged { "  FLAGGED" } else { "" }
                    )
                })
                .collect(),
        };
        return io.emit(&text);
    }
    let listing = model.leaves();
    let tagged: Vec<(Option<usize>, &LeafRow)> = match &listing {
        LeafListing::Tree { leaves } => leaves.iter().map(|l| (None, l)).collect(),
        LeafListing::Forest { trees } => {
            trees.iter().enumerate().flat_map(|(i, ls)| ls.iter().map(move |l| (Some(i), l))).collect()
        }
    };
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&listing).expect("leaves serialize") + "\n",
        Format::Table => csv_string(
            &["tree", "leaf_id", "label", "n", "k", "positive_rate", "error_rate", "region"],
            tagged.iter().map(|(t, l)| {
                vec![
                    t.map(|t| t.to_string()).unwrap_or_default(),
                    l.stats.leaf_id.to_string(),
                    l.stats.label.to_string(),
                    l.stats.n.to_string(),
                    l.stats.k.to_string(),
                    format!("{:.4}", l.stats.positive_rate),
                    opt(l.stats.error_rate),
                    l.description.clone(),
                ]
            }),
        ),
        Format::Text => tagged
            .iter()
            .map(|(t, l)| {
                let prefix = t.map(|t| format!("tree {t} ")).unwrap_or_default();
                let err = l.stats.error_rate.map(|e| format!(", error rate {e:.3}")).unwrap_or_default();
                format!(
                    "{prefix}leaf {}: {} on {} cases (rate {:.3}{err}) where {}\n",
                    l.stats.leaf_id, l.stats.label, l.stats.n, l.stats.positive_rate, l.description
                )
            })
            .collect(),
    };
    io.emit(&text)
}
