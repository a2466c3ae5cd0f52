use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use pretrial_core::data::{filter_training_eligible, CaseRecord, FeatureMap, FeatureValue, Outcome};
use pretrial_core::forest::{ForestConfig, HandoffForest};
use pretrial_core::tree::{FeatureKindSpec, FeatureSpec, HandoffTree, RiskLabel, TreeConfig};
use pretrial_service::Model;

use crate::{csv_string, invalid, opt, parse_outcome, read, write_file, CliError, DataArgs, Format, Io};

pub(crate) fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::from_json(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Outcome to predict: FTA, NCA or NVCA.
    #[arg(long, value_parser = parse_outcome, default_value = "FTA")]
    pub target: Outcome,
    /// Smallest leaf that may carry a label.
    #[arg(long)]
    pub min_cluster: usize,
    /// Largest false positive rate a HighRisk leaf may have.
    #[arg(long)]
    pub max_fpr: f64,
    /// Largest false negative rate a VeryLowRisk leaf may have.
    #[arg(long)]
    pub max_fnr: f64,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    /// Preferred split features, most preferred first (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub priority: Vec<String>,
    /// Offer protected attributes as split candidates.
    #[arg(long)]
    pub include_protected: bool,
    /// Splits this close in impurity decrease count as tied.
    #[arg(long, default_value_t = 0.01)]
    pub tie_epsilon: f64,
    /// Smallest weighted impurity decrease worth a split.
    #[arg(long, default_value_t = 0.0)]
    pub min_impurity_decrease: f64,
    /// Model file to write (JSON).
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

impl TreeArgs {
    fn config(&self, seed: u64) -> TreeConfig {
        let mut c = TreeConfig::new(self.target, self.min_cluster, self.max_fpr, self.max_fnr);
        c.max_depth = self.max_depth;
        c.feature_priority = self.priority.clone();
        c.include_protected = self.include_protected;
        c.impurity_tie_epsilon = self.tie_epsilon;
        c.min_impurity_decrease = self.min_impurity_decrease;
        c.seed = seed;
        c
    }

    /// Released records with the target observed; the rest are reported and dropped.
    fn training_records(&self, io: &mut Io) -> Result<Vec<CaseRecord>, CliError> {
        let all = self.data.load()?;
        let kept = filter_training_eligible(&all, &[self.target]);
        if kept.len() < all.len() {
            io.note(&format!(
                "using {} of {} records (released with {} observed)",
                kept.len(),
                all.len(),
                self.target
            ));
        }
        Ok(kept)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Seed recorded in the model; fitting a single tree uses no randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn leaf_summary(tree: &HandoffTree) -> Vec<Vec<String>> {
    tree.leaf_table()
        .iter()
        .map(|l| {
            vec![
                l.stats.leaf_id.to_string(),
                l.stats.label.to_string(),
                l.stats.n.to_string(),
                l.stats.k.to_string(),
                opt(l.stats.error_rate),
                l.description.clone(),
            ]
        })
        .collect()
}

pub fn train(args: TrainArgs, io: &mut Io) -> Result<(), CliError> {
    let records = args.tree.training_records(io)?;
    let tree = HandoffTree::fit(&records, &args.tree.config(args.seed)).map_err(invalid)?;
    write_file(&args.tree.out, &tree.to_json())?;
    io.emit(&csv_string(&["leaf_id", "label", "n", "k", "error_rate", "region"], leaf_summary(&tree)))
}

#[derive(Debug, Args)]
pub struct TrainForestArgs {
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Number of member trees.
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    /// Fit every member on the full data instead of a bootstrap sample.
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Fraction of features each member may split on.
    #[arg(long, default_value_t = 1.0)]
    pub feature_fraction: f64,
    /// Largest share of members allowed to disagree with the modal label.
    #[arg(long, default_value_t = 0.25)]
    pub disagreement_max: f64,
    /// Seed for bootstrap samples and feature subsets.
    #[arg(long)]
    pub seed: u64,
}

pub fn train_forest(args: TrainForestArgs, io: &mut Io) -> Result<(), CliError> {
    let records = args.tree.training_records(io)?;
    let mut config = ForestConfig::new(args.trees, args.tree.config(args.seed), args.seed);
    config.bootstrap = !args.no_bootstrap;
    config.feature_subsample_fraction = args.feature_fraction;
    config.disagreement_max = args.disagreement_max;
    let forest = HandoffForest::fit(&records, &config).map_err(invalid)?;
    write_file(&args.tree.out, &forest.to_json())?;
    let rows = forest.trees.iter().enumerate().map(|(i, t)| {
        let leaves = t.leaves();
        let handoff = leaves.iter().filter(|l| l.label == RiskLabel::Handoff).count();
        vec![i.to_string(), leaves.len().to_string(), handoff.to_string()]
    });
    io.emit(&csv_string(&["tree", "leaves", "handoff_leaves"], rows))
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Tree or forest model (JSON).
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    /// Cases to predict (CSV with case_id and the model's feature columns).
    #[arg(long, value_name = "CSV")]
    pub case: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn model_features(model: &Model) -> Vec<FeatureSpec> {
    match model {
        Model::Tree(t) => t.features.clone(),
        Model::Forest(f) => {
            let mut seen = BTreeMap::new();
            for t in &f.trees {
                for spec in &t.features {
                    seen.entry(spec.name.clone()).or_insert_with(|| spec.clone());
                }
            }
            seen.into_values().collect()
        }
    }
}

/// Reads `case_id` plus the model's feature columns; other columns are ignored.
fn read_cases(path: &Path, features: &[FeatureSpec]) -> Result<Vec<(String, FeatureMap)>, CliError> {
    let text = read(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| invalid(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("case_id").ok_or_else(|| invalid(format!("{}: no case_id column", path.display())))?;
    let mut cols = Vec::new();
    for f in features {
        let i = col(&f.name).ok_or_else(|| invalid(format!("{}: no column {:?} (model feature)", path.display(), f.name)))?;
        cols.push((i, f));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut map = FeatureMap::new();
        for (i, f) in &cols {
            let raw = rec.get(*i).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let value = match f.kind {
                FeatureKindSpec::Numeric => FeatureValue::Numeric(raw.parse().map_err(|_| {
                    invalid(format!("{} row {}: {} = {raw:?} is not a number", path.display(), row + 2, f.name))
                })?),
                FeatureKindSpec::Categorical { .. } => FeatureValue::Categorical(raw.to_string()),
            };
            map.insert(f.name.clone(), value);
        }
        out.push((rec.get(id_col).unwrap_or("").to_string(), map));
    }
    Ok(out)
}

fn outcome_phrase(o: Outcome) -> &'static str {
    match o {
        Outcome::Fta => "fail to appear",
        Outcome::Nca => "commit new criminal activity",
        Outcome::Nvca => "commit new violent criminal activity",
    }
}

pub fn predict(args: PredictArgs, io: &mut Io) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let cases = read_cases(&args.case, &model_features(&model))?;
    let target = model.target();
    let mut rows = Vec::with_capacity(cases.len());
    for (id, features) in &cases {
        let s = model.predict(features).map_err(|e| invalid(format!("case {id}: {e}")))?;
        rows.push((id, s));
    }
    let text = match args.format {
        Format::Table => csv_string(
            &["case_id", "label", "error_rate", "support", "leaf_id", "disagreement", "path"],
            rows.iter().map(|(id, s)| {
                vec![
                    id.to_string(),
                    s.label.to_string(),
                    opt(s.error_rate),
                    s.n.to_string(),
                    s.leaf_id.map(|l| l.to_string()).unwrap_or_default(),
                    opt(s.disagreement),
                    s.path.join(" and "),
                ]
            }),
        ),
        Format::Json => rows
            .iter()
            .map(|(id, s)| {
                let mut v = serde_json::json!({
                    "case_id": id,
                    "label": s.label,
                    "support": s.n,
                    "path": s.path,
                });
                if let Some(e) = s.error_rate {
                    v["error_rate"] = e.into();
                }
                if let Some(l) = s.leaf_id {
                    v["leaf_id"] = l.into();
                }
                if let Some(d) = s.disagreement {
                    v["disagreement"] = d.into();
                }
                v.to_string() + "\n"
            })
            .collect(),
        Format::Text => rows
            .iter()
            .map(|(id, s)| {
                let path = if s.path.is_empty() { "all cases".to_string() } else { s.path.join(", ") };
                let verdict = match (s.label, s.error_rate) {
                    (RiskLabel::HighRisk, Some(e)) => format!(
                        "High Risk: {:.0}% of similar released defendants did NOT {}",
                        e * 100.0,
                        outcome_phrase(target)
                    ),
                    (RiskLabel::VeryLowRisk, Some(e)) => format!(
                        "Very Low Risk: {:.0}% of similar released defendants did {}",
                        e * 100.0,
                        outcome_phrase(target)
                    ),
                    _ => "Handoff: no prediction; the decision is left to the judge".to_string(),
                };
                format!("{id}: {verdict} ({} similar cases; path: {path})\n", s.n)
            })
            .collect(),
    };
    io.emit(&text)
}
