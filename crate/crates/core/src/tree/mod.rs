//! Handoff trees: decision trees that abstain.
//!
//! A tree is grown top-down on released defendants by greedy binary
//! splits that minimize weighted Gini impurity. Each leaf keeps its
//! support `n` and positive count `k`. A leaf is labeled
//!
//! * `HighRisk` when `n >= min_cluster_size` and its false positive rate
//!   `1 - k/n` is at most `high_risk_max_fpr`,
//! * `VeryLowRisk` when `n >= min_cluster_size` and its false negative
//!   rate `k/n` is at most `very_low_max_fnr`,
//! * `Handoff` otherwise: the model gives no answer and the case goes to
//!   a human decider.
//!
//! If a leaf qualifies for both labels the one with the smaller error
//! rate wins (ties go to `HighRisk`). Labels never influence the shape
//! of the tree, only the thresholds' reading of each leaf.

mod fit;
mod inspect;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureMap, FeatureValue, Outcome};

pub use inspect::{LeafRow, LeafValidation, Region, RegionBound};
pub(crate) use fit::fit_sorted;

pub const TREE_FORMAT: &str = "handoff-tree/v1";

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("case {case_id} is not training-eligible: {reason}")]
    NotTrainingEligible { case_id: String, reason: String },
    #[error("too few records: {got}, need at least {need} (2 x min_cluster_size)")]
    TooFewRecords { got: usize, need: usize },
    #[error("no usable features")]
    NoUsableFeatures,
    #[error("duplicate case id {0}")]
    DuplicateCaseId(String),
    #[error("feature {feature}: {message}")]
    Feature { feature: String, message: String },
    #[error("missing feature value {0:?}")]
    MissingFeature(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model format: {0}")]
    Format(String),
}

/// Hyperparameters of a handoff tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub target: Outcome,
    /// Smallest leaf allowed to carry a label.
    pub min_cluster_size: usize,
    pub max_depth: usize,
    /// Largest false positive rate tolerated for a `HighRisk` label.
    pub high_risk_max_fpr: f64,
    /// Largest false negative rate tolerated for a `VeryLowRisk` label.
    pub very_low_max_fnr: f64,
    /// Features preferred for splitting, most preferred first.
    #[serde(default)]
    pub feature_priority: Vec<String>,
    /// Offer protected attributes (race, gender) as split candidates.
    #[serde(default)]
    pub include_protected: bool,
    /// Splits whose impurity reductions differ by at most this much count
    /// as equivalent, and the preferred feature wins.
    #[serde(default = "default_tie_epsilon")]
    pub impurity_tie_epsilon: f64,
    /// Smallest impurity decrease, weighted by the node's share of the
    /// training set, worth splitting for. Zero splits whenever impurity
    /// improves at all.
    #[serde(default)]
    pub min_impurity_decrease: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_tie_epsilon() -> f64 {
    0.01
}

impl TreeConfig {
    pub fn new(target: Outcome, min_cluster_size: usize, high_risk_max_fpr: f64, very_low_max_fnr: f64) -> Self {
        Self {
            target,
            min_cluster_size,
            max_depth: 8,
            high_risk_max_fpr,
            very_low_max_fnr,
            feature_priority: Vec::new(),
            include_protected: false,
            impurity_tie_epsilon: default_tie_epsilon(),
            min_impurity_decrease: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_cluster_size == 0 {
            return Err(TreeError::Config("min_cluster_size must be at least 1".into()));
        }
        for (name, v) in [
            ("high_risk_max_fpr", self.high_risk_max_fpr),
            ("very_low_max_fnr", self.very_low_max_fnr),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TreeError::Config(format!("{name} = {v} is not in [0, 1]")));
            }
        }
        if !(self.impurity_tie_epsilon >= 0.0) || !(self.min_impurity_decrease >= 0.0) {
            return Err(TreeError::Config("epsilon and min_impurity_decrease must be nonnegative".into()));
        }
        Ok(())
    }

    /// Label for a cluster of `n` cases with `k` positives.
    pub fn label_for(&self, k: usize, n: usize) -> (RiskLabel, Option<f64>) {
        label_cluster(k, n, self.min_cluster_size, self.high_risk_max_fpr, self.very_low_max_fnr)
    }
}

pub(crate) fn label_cluster(k: usize, n: usize, min_n: usize, max_fpr: f64, max_fnr: f64) -> (RiskLabel, Option<f64>) {
    if n == 0 || n < min_n {
        return (RiskLabel::Handoff, None);
    }
    let p = k as f64 / n as f64;
    let fpr = (n - k) as f64 / n as f64;
    let high = fpr <= max_fpr;
    let low = p <= max_fnr;
    match (high, low) {
        (true, true) if p < fpr => (RiskLabel::VeryLowRisk, Some(p)),
        (true, _) => (RiskLabel::HighRisk, Some(fpr)),
        (false, true) => (RiskLabel::VeryLowRisk, Some(p)),
        (false, false) => (RiskLabel::Handoff, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskLabel {
    HighRisk,
    VeryLowRisk,
    Handoff,
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskLabel::HighRisk => "HighRisk",
            RiskLabel::VeryLowRisk => "VeryLowRisk",
            RiskLabel::Handoff => "Handoff",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKindSpec {
    Numeric,
    Categorical { levels: Vec<String> },
}

/// A feature the tree was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKindSpec,
}

/// Split test; records satisfying it go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    AtMost { threshold: f64 },
    InSet { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub leaf_id: usize,
    pub n: usize,
    pub k: usize,
    pub positive_rate: f64,
    pub label: RiskLabel,
    /// False positive rate for `HighRisk`, false negative rate for
    /// `VeryLowRisk`, absent for `Handoff`.
    pub error_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: String,
        condition: Condition,
        n: usize,
        k: usize,
        /// Impurity decrease of this split weighted by the node's share of
        /// the training set.
        impurity_decrease: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(LeafStats),
}

impl TreeNode {
    pub fn support(&self) -> usize {
        match self {
            TreeNode::Split { n, .. } => *n,
            TreeNode::Leaf(s) => s.n,
        }
    }
}

/// One step on the root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum PathStep {
    AtMost { feature: String, threshold: f64 },
    Above { feature: String, threshold: f64 },
    In { feature: String, levels: Vec<String> },
    NotIn { feature: String, levels: Vec<String> },
    /// A categorical value never seen in training, sent to the branch with
    /// more training support.
    NovelLevel { feature: String, value: String, went_left: bool },
}

impl fmt::Display for PathStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathStep::AtMost { feature, threshold } => write!(f, "{feature} <= {threshold}"),
            PathStep::Above { feature, threshold } => write!(f, "{feature} > {threshold}"),
            PathStep::In { feature, levels } => write!(f, "{feature} in {{{}}}", levels.join(", ")),
            PathStep::NotIn { feature, levels } => write!(f, "{feature} not in {{{}}}", levels.join(", ")),
            PathStep::NovelLevel { feature, value, went_left } => write!(
                f,
                "{feature} = {value:?} (novel level, routed to the larger {} branch)",
                if *went_left { "left" } else { "right" }
            ),
        }
    }
}

/// Result of routing one case through a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: RiskLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    pub leaf_id: usize,
    pub path: Vec<PathStep>,
    pub n: usize,
    pub k: usize,
}

/// A fitted handoff tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffTree {
    pub format: String,
    pub config: TreeConfig,
    pub features: Vec<FeatureSpec>,
    pub training_size: usize,
    pub root: TreeNode,
}

impl HandoffTree {
    /// Fits a tree on released, labeled records.
    pub fn fit(records: &[crate::data::CaseRecord], config: &TreeConfig) -> Result<Self, TreeError> {
        fit::fit(records, config)
    }

    fn feature_spec(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Routes `features` to a leaf.
    pub fn predict(&self, features: &FeatureMap) -> Result<Prediction, TreeError> {
        let mut node = &self.root;
        let mut path = Vec::new();
        loop {
            match node {
                TreeNode::Leaf(s) => {
                    return Ok(Prediction {
                        label: s.label,
                        error_rate: s.error_rate,
                        leaf_id: s.leaf_id,
                        path,
                        n: s.n,
                        k: s.k,
                    })
                }
                TreeNode::Split { feature, condition, left, right, .. } => {
                    let value = features.get(feature).ok_or_else(|| TreeError::MissingFeature(feature.clone()))?;
                    let go_left = match (condition, value) {
                        (Condition::AtMost { threshold }, FeatureValue::Numeric(x)) => {
                            let l = *x <= *threshold;
                            path.push(if l {
                                PathStep::AtMost { feature: feature.clone(), threshold: *threshold }
                            } else {
                                PathStep::Above { feature: feature.clone(), threshold: *threshold }
                            });
                            l
                        }
                        (Condition::InSet { levels }, FeatureValue::Categorical(v)) => {
                            let known = match self.feature_spec(feature).map(|s| &s.kind) {
                                Some(FeatureKindSpec::Categorical { levels: all }) => all.contains(v),
                                _ => levels.contains(v),
                            };
                            if known {
                                let l = levels.contains(v);
                                path.push(if l {
                                    PathStep::In { feature: feature.clone(), levels: levels.clone() }
                                } else {
                                    PathStep::NotIn { feature: feature.clone(), levels: levels.clone() }
                                });
                                l
                            } else {
                                let l = left.support() >= right.support();
                                path.push(PathStep::NovelLevel { feature: feature.clone(), value: v.clone(), went_left: l });
                                l
                            }
                        }
                        (Condition::AtMost { .. }, FeatureValue::Categorical(v)) => {
                            return Err(TreeError::Feature {
                                feature: feature.clone(),
                                message: format!("expected a number, got {v:?}"),
                            })
                        }
                        (Condition::InSet { .. }, FeatureValue::Numeric(x)) => {
                            return Err(TreeError::Feature {
                                feature: feature.clone(),
                                message: format!("expected a category, got {x}"),
                            })
                        }
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    /// All leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&LeafStats> {
        fn walk<'a>(node: &'a TreeNode, out: &mut Vec<&'a LeafStats>) {
            match node {
                TreeNode::Leaf(s) => out.push(s),
                TreeNode::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Impurity decrease credited to each feature along the path `features`
    /// takes through the tree.
    pub fn path_contributions(&self, features: &FeatureMap) -> Result<Vec<(String, f64)>, TreeError> {
        let pred = self.predict(features)?;
        let mut node = &self.root;
        let mut out = Vec::new();
        for step in &pred.path {
            if let TreeNode::Split { feature, impurity_decrease, left, right, .. } = node {
                out.push((feature.clone(), *impurity_decrease));
                let went_left = match step {
                    PathStep::AtMost { .. } | PathStep::In { .. } => true,
                    PathStep::Above { .. } | PathStep::NotIn { .. } => false,
                    PathStep::NovelLevel { went_left, .. } => *went_left,
                };
                node = if went_left { left } else { right };
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        if text.trim().is_empty() {
            return Err(TreeError::Format("empty model document".into()));
        }
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TreeError::Format(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(TREE_FORMAT) => {}
            Some(other) => {
                return Err(TreeError::Format(format!("unsupported format {other:?}, expected {TREE_FORMAT:?}")))
            }
            None => return Err(TreeError::Format("missing format tag".into())),
        }
        let tree: HandoffTree = serde_json::from_value(value).map_err(|e| TreeError::Format(e.to_string()))?;
        tree.config.validate()?;
        Ok(tree)
    }
}
