use pretrial_core::data::{FeatureMap, Outcome};
use pretrial_core::forest::{HandoffForest, FOREST_FORMAT};
use pretrial_core::tree::{HandoffTree, LeafRow, RiskLabel, TreeConfig, TreeError, TREE_FORMAT};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A fitted model the service predicts with.
#[derive(Debug, Clone)]
pub enum Model {
    Tree(HandoffTree),
    Forest(HandoffForest),
}

/// What a prediction exposes, independent of the model kind.
#[derive(Debug, Clone)]
pub struct Scored {
    pub label: RiskLabel,
    pub error_rate: Option<f64>,
    pub leaf_id: Option<usize>,
    pub path: Vec<String>,
    pub n: usize,
    pub k: usize,
    pub disagreement: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafListing {
    Tree { leaves: Vec<LeafRow> },
    Forest { trees: Vec<Vec<LeafRow>> },
}

impl Model {
    /// Parses a tree or forest document, dispatching on its format tag.
    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TreeError::Format(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FOREST_FORMAT) => Ok(Model::Forest(HandoffForest::from_json(text)?)),
            _ => Ok(Model::Tree(HandoffTree::from_json(text)?)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
        }
    }

    pub fn format(&self) -> &'static str {
        match self {
            Model::Tree(_) => TREE_FORMAT,
            Model::Forest(_) => FOREST_FORMAT,
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Model::Tree(t) => t.to_json(),
            Model::Forest(f) => f.to_json(),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical document.
    pub fn version(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn training_size(&self) -> usize {
        match self {
            Model::Tree(t) => t.training_size,
            Model::Forest(f) => f.training_size,
        }
    }

    /// The outcome the model predicts.
    pub fn target(&self) -> Outcome {
        self.tree_config().target
    }

    /// Whether protected attributes were offered as split features.
    pub fn include_protected(&self) -> bool {
        self.tree_config().include_protected
    }

    fn tree_config(&self) -> &TreeConfig {
        match self {
            Model::Tree(t) => &t.config,
            Model::Forest(f) => &f.config.tree,
        }
    }

    pub fn config_json(&self) -> serde_json::Value {
        match self {
            Model::Tree(t) => serde_json::to_value(&t.config),
            Model::Forest(f) => serde_json::to_value(&f.config),
        }
        .expect("config serializes")
    }

    pub fn predict(&self, features: &FeatureMap) -> Result<Scored, TreeError> {
        match self {
            Model::Tree(t) => {
                let p = t.predict(features)?;
                Ok(Scored {
                    label: p.label,
                    error_rate: p.error_rate,
                    leaf_id: Some(p.leaf_id),
                    path: p.path.iter().map(|s| s.to_string()).collect(),
                    n: p.n,
                    k: p.k,
                    disagreement: None,
                })
            }
            Model::Forest(f) => {
                let p = f.predict(features)?;
                // One line per member: its leaf and the conditions that led there.
                let mut path = Vec::with_capacity(f.trees.len());
                for (i, t) in f.trees.iter().enumerate() {
                    let m = t.predict(features)?;
                    let steps: Vec<String> = m.path.iter().map(|s| s.to_string()).collect();
                    let route = if steps.is_empty() { "all cases".to_string() } else { steps.join(" and ") };
                    path.push(format!("tree {i} leaf {}: {route}", m.leaf_id));
                }
                Ok(Scored {
                    label: p.label,
                    error_rate: p.error_rate,
                    leaf_id: None,
                    path,
                    n: p.n,
                    k: p.k,
                    disagreement: Some(p.disagreement),
                })
            }
        }
    }

    pub fn leaves(&self) -> LeafListing {
        match self {
            Model::Tree(t) => LeafListing::Tree { leaves: t.leaf_table() },
            Model::Forest(f) => LeafListing::Forest { trees: f.trees.iter().map(|t| t.leaf_table()).collect() },
        }
    }
}
