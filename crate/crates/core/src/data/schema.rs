use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::Outcome;
use super::DataError;

pub const DATASET_SCHEMA: &str = "dataset-schema/v1";

/// Columns with fixed meaning in dataset files.
pub const RESERVED_COLUMNS: [&str; 5] = ["case_id", "released", "fta", "nca", "nvca"];

/// Column prefix of the optional PSA factor block.
pub const PSA_PREFIX: &str = "psa_";

/// PSA factor columns, in file order.
pub const PSA_COLUMNS: [&str; 11] = [
    "psa_age_at_arrest",
    "psa_current_violent_offense",
    "psa_violent_and_20_or_younger",
    "psa_pending_charge",
    "psa_prior_misdemeanor_conviction",
    "psa_prior_felony_conviction",
    "psa_prior_conviction",
    "psa_prior_violent_convictions",
    "psa_prior_fta_past_2y",
    "psa_prior_fta_older_2y",
    "psa_prior_sentence_incarceration",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric {
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
    },
    /// An empty level list accepts any value.
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureDecl {
    pub fn numeric(name: &str, min: Option<f64>, max: Option<f64>) -> Self {
        Self { name: name.to_string(), kind: FeatureKind::Numeric { min, max } }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() },
        }
    }
}

/// Declares the columns of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub schema: String,
    pub features: Vec<FeatureDecl>,
    /// Protected attributes; always categorical.
    #[serde(default)]
    pub protected: Vec<FeatureDecl>,
    #[serde(default = "all_outcomes")]
    pub outcomes: Vec<Outcome>,
    /// Whether the eleven `psa_*` factor columns are present.
    #[serde(default)]
    pub psa_factors: bool,
}

fn all_outcomes() -> Vec<Outcome> {
    Outcome::ALL.to_vec()
}

impl DatasetSchema {
    pub fn new(features: Vec<FeatureDecl>, protected: Vec<FeatureDecl>, psa_factors: bool) -> Self {
        Self { schema: DATASET_SCHEMA.to_string(), features, protected, outcomes: all_outcomes(), psa_factors }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let schema: DatasetSchema = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema != DATASET_SCHEMA {
            return Err(DataError::Config(format!(
                "schema id {:?}, expected {DATASET_SCHEMA:?}",
                self.schema
            )));
        }
        let mut seen = BTreeSet::new();
        for decl in self.features.iter().chain(&self.protected) {
            if RESERVED_COLUMNS.contains(&decl.name.as_str()) || decl.name.starts_with(PSA_PREFIX) {
                return Err(DataError::Config(format!("column name {:?} is reserved", decl.name)));
            }
            if !seen.insert(decl.name.as_str()) {
                return Err(DataError::Config(format!("duplicate column {:?}", decl.name)));
            }
        }
        if let Some(p) = self.protected.iter().find(|p| !matches!(p.kind, FeatureKind::Categorical { .. })) {
            return Err(DataError::Config(format!("protected attribute {:?} must be categorical", p.name)));
        }
        Ok(())
    }

    /// Header row of a file written under this schema.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["case_id".to_string()];
        cols.extend(self.features.iter().map(|f| f.name.clone()));
        cols.extend(self.protected.iter().map(|f| f.name.clone()));
        cols.push("released".to_string());
        cols.extend(self.outcomes.iter().map(|o| o.column().to_string()));
        if self.psa_factors {
            cols.extend(PSA_COLUMNS.iter().map(|c| c.to_string()));
        }
        cols
    }
}
