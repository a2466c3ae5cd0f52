//! Bagged ensembles of handoff trees.
//!
//! Each member tree routes a case to one leaf. The forest pools those
//! leaves by counts, `p* = sum(k) / sum(n)`, so well-supported leaves
//! dominate, and labels the case only if the pooled rate passes the
//! pooled threshold, the pooled support averages at least
//! `min_cluster_size` per tree and few enough members dissent from the
//! modal member label.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CaseRecord, FeatureMap};
use crate::tree::{fit_sorted, label_cluster, HandoffTree, RiskLabel, TreeConfig, TreeError};

pub const FOREST_FORMAT: &str = "handoff-forest/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree_count: usize,
    pub tree: TreeConfig,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    #[serde(default = "one")]
    pub feature_subsample_fraction: f64,
    pub high_risk_max_fpr: f64,
    pub very_low_max_fnr: f64,
    #[serde(default = "default_disagreement")]
    pub disagreement_max: f64,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn default_disagreement() -> f64 {
    0.25
}

impl ForestConfig {
    /// Forest whose pooled thresholds match the member trees'.
    pub fn new(tree_count: usize, tree: TreeConfig, seed: u64) -> Self {
        Self {
            tree_count,
            high_risk_max_fpr: tree.high_risk_max_fpr,
            very_low_max_fnr: tree.very_low_max_fnr,
            tree,
            bootstrap: true,
            feature_subsample_fraction: 1.0,
            disagreement_max: default_disagreement(),
            seed,
        }
    }

    /// One tree on the full data with every feature and no dissent gate.
    pub fn degenerate(tree: TreeConfig) -> Self {
        Self { bootstrap: false, disagreement_max: 1.0, ..Self::new(1, tree, 0) }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        self.tree.validate()?;
        if self.tree_count == 0 {
            return Err(TreeError::Config("tree_count must be at least 1".into()));
        }
        if !(self.feature_subsample_fraction > 0.0 && self.feature_subsample_fraction <= 1.0) {
            return Err(TreeError::Config("feature_subsample_fraction must be in (0, 1]".into()));
        }
        for (name, v) in [
            ("high_risk_max_fpr", self.high_risk_max_fpr),
            ("very_low_max_fnr", self.very_low_max_fnr),
            ("disagreement_max", self.disagreement_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TreeError::Config(format!("{name} = {v} is not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The leaf one member tree reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberLeaf {
    pub tree: usize,
    pub leaf_id: usize,
    pub label: RiskLabel,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPrediction {
    pub label: RiskLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    pub n: usize,
    pub k: usize,
    pub modal_label: RiskLabel,
    /// Fraction of members whose leaf label differs from the modal label.
    pub disagreement: f64,
    pub members: Vec<MemberLeaf>,
    pub feature_contributions: BTreeMap<String, f64>,
}

impl ForestPrediction {
    pub fn pooled_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.k as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffForest {
    pub format: String,
    pub config: ForestConfig,
    pub training_size: usize,
    pub trees: Vec<HandoffTree>,
}

impl HandoffForest {
    pub fn fit(records: &[CaseRecord], config: &ForestConfig) -> Result<Self, TreeError> {
        config.validate()?;
        // Eligibility, size and duplicate checks are shared with single trees.
        let tc = &config.tree;
        let mut sorted: Vec<&CaseRecord> = records.iter().collect();
        for r in &sorted {
            if !r.released || r.outcomes.get(tc.target).is_none() {
                return Err(TreeError::NotTrainingEligible {
                    case_id: r.case_id.clone(),
                    reason: "only released records with an observed outcome can be used".into(),
                });
            }
        }
        let need = 2 * tc.min_cluster_size;
        if records.len() < need {
            return Err(TreeError::TooFewRecords { got: records.len(), need });
        }
        sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let mut seen = HashSet::new();
        for r in &sorted {
            if !seen.insert(r.case_id.as_str()) {
                return Err(TreeError::DuplicateCaseId(r.case_id.clone()));
            }
        }
        let names: Vec<String> = sorted
            .iter()
            .flat_map(|r| r.model_features(tc.include_protected).into_keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if names.is_empty() {
            return Err(TreeError::NoUsableFeatures);
        }
        let per_tree = ((config.feature_subsample_fraction * names.len() as f64).ceil() as usize).clamp(1, names.len());

        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let seeds: Vec<u64> = (0..config.tree_count).map(|_| master.random()).collect();
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let sample_rows: Vec<&CaseRecord> = if config.bootstrap {
                    let mut idx: Vec<usize> = (0..sorted.len()).map(|_| rng.random_range(0..sorted.len())).collect();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| sorted[i]).collect()
                } else {
                    sorted.clone()
                };
                let allowed: Option<BTreeSet<String>> = (per_tree < names.len())
                    .then(|| sample(&mut rng, names.len(), per_tree).into_iter().map(|i| names[i].clone()).collect());
                let mut member_config = tc.clone();
                member_config.seed = s;
                fit_sorted(&sample_rows, &member_config, allowed.as_ref())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { format: FOREST_FORMAT.to_string(), config: config.clone(), training_size: records.len(), trees })
    }

    pub fn predict(&self, features: &FeatureMap) -> Result<ForestPrediction, TreeError> {
        let mut members = Vec::with_capacity(self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            let p = t.predict(features)?;
            members.push(MemberLeaf { tree: i, leaf_id: p.leaf_id, label: p.label, n: p.n, k: p.k });
        }
        let n: usize = members.iter().map(|m| m.n).sum();
        let k: usize = members.iter().map(|m| m.k).sum();
        let modal_label = modal(&members);
        let dissent = members.iter().filter(|m| m.label != modal_label).count();
        let disagreement = dissent as f64 / members.len() as f64;
        let c = &self.config;
        let min_support = c.tree.min_cluster_size * self.trees.len();
        let (mut label, mut error_rate) = label_cluster(k, n, min_support, c.high_risk_max_fpr, c.very_low_max_fnr);
        if disagreement > c.disagreement_max {
            (label, error_rate) = (RiskLabel::Handoff, None);
        }
        Ok(ForestPrediction {
            label,
            error_rate,
            n,
            k,
            modal_label,
            disagreement,
            members,
            feature_contributions: self.feature_contributions(features)?,
        })
    }

    /// Impurity decrease along each member's path, summed per feature and
    /// normalized to 1. Empty when every member is a single leaf.
    pub fn feature_contributions(&self, features: &FeatureMap) -> Result<BTreeMap<String, f64>, TreeError> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for t in &self.trees {
            for (f, d) in t.path_contributions(features)? {
                *out.entry(f).or_default() += d;
            }
        }
        let total: f64 = out.values().sum();
        if total > 0.0 {
            out.values_mut().for_each(|v| *v /= total);
        } else {
            out.clear();
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        if text.trim().is_empty() {
            return Err(TreeError::Format("empty model document".into()));
        }
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TreeError::Format(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FOREST_FORMAT) => {}
            Some(other) => {
                return Err(TreeError::Format(format!("unsupported format {other:?}, expected {FOREST_FORMAT:?}")))
            }
            None => return Err(TreeError::Format("missing format tag".into())),
        }
        let forest: HandoffForest = serde_json::from_value(value).map_err(|e| TreeError::Format(e.to_string()))?;
        forest.config.validate()?;
        if forest.trees.is_empty() {
            return Err(TreeError::Format("forest has no trees".into()));
        }
        Ok(forest)
    }
}

/// Most common member label; ties prefer Handoff, then HighRisk.
fn modal(members: &[MemberLeaf]) -> RiskLabel {
    let order = [RiskLabel::Handoff, RiskLabel::HighRisk, RiskLabel::VeryLowRisk];
    let count = |l: RiskLabel| members.iter().filter(|m| m.label == l).count();
    let best = order.iter().map(|&l| count(l)).max().unwrap_or(0);
    order.into_iter().find(|&l| count(l) == best).unwrap_or(RiskLabel::Handoff)
}
