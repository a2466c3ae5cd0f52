use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::psa::FactorVector;

/// The three predicted pretrial outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "FTA", alias = "fta")]
    Fta,
    #[serde(rename = "NCA", alias = "nca")]
    Nca,
    #[serde(rename = "NVCA", alias = "nvca")]
    Nvca,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Fta, Outcome::Nca, Outcome::Nvca];

    /// Column name used in dataset files.
    pub fn column(&self) -> &'static str {
        match self {
            Outcome::Fta => "fta",
            Outcome::Nca => "nca",
            Outcome::Nvca => "nvca",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Fta => "FTA",
            Outcome::Nca => "NCA",
            Outcome::Nvca => "NVCA",
        })
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fta" => Ok(Outcome::Fta),
            "nca" => Ok(Outcome::Nca),
            "nvca" => Ok(Outcome::Nvca),
            other => Err(format!("unknown outcome {other:?} (expected FTA, NCA or NVCA)")),
        }
    }
}

/// Observed outcomes; `None` means not observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcomes {
    pub fta: Option<bool>,
    pub nca: Option<bool>,
    pub nvca: Option<bool>,
}

impl Outcomes {
    pub fn all(fta: bool, nca: bool, nvca: bool) -> Self {
        Self { fta: Some(fta), nca: Some(nca), nvca: Some(nvca) }
    }

    pub fn get(&self, outcome: Outcome) -> Option<bool> {
        match outcome {
            Outcome::Fta => self.fta,
            Outcome::Nca => self.nca,
            Outcome::Nvca => self.nvca,
        }
    }

    pub fn set(&mut self, outcome: Outcome, value: Option<bool>) {
        match outcome {
            Outcome::Fta => self.fta = value,
            Outcome::Nca => self.nca = value,
            Outcome::Nvca => self.nvca = value,
        }
    }

    pub fn any_observed(&self) -> bool {
        self.fta.is_some() || self.nca.is_some() || self.nvca.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
}

impl FeatureValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FeatureValue::Numeric(x) => Some(*x),
            FeatureValue::Categorical(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            FeatureValue::Numeric(_) => None,
            FeatureValue::Categorical(s) => Some(s),
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Numeric(x) => write!(f, "{x}"),
            FeatureValue::Categorical(s) => f.write_str(s),
        }
    }
}

/// Features presented to a model: ordinary features plus, optionally,
/// protected attributes under their own names.
pub type FeatureMap = BTreeMap<String, FeatureValue>;

/// One defendant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub features: FeatureMap,
    /// Protected attributes such as race and gender; empty when unknown.
    #[serde(default)]
    pub protected: BTreeMap<String, String>,
    pub released: bool,
    #[serde(default)]
    pub outcomes: Outcomes,
    #[serde(default)]
    pub psa_factors: Option<FactorVector>,
}

impl CaseRecord {
    /// Outcomes are only observable for released defendants.
    pub fn check_released_invariant(&self) -> Result<(), String> {
        if self.outcomes.any_observed() && !self.released {
            return Err(format!(
                "case {}: outcomes present but released=false; only released defendants have observable outcomes",
                self.case_id
            ));
        }
        Ok(())
    }

    /// Features with protected attributes merged in as categorical values.
    pub fn model_features(&self, include_protected: bool) -> FeatureMap {
        let mut map = self.features.clone();
        if include_protected {
            for (k, v) in &self.protected {
                map.insert(k.clone(), FeatureValue::Categorical(v.clone()));
            }
        }
        map
    }

    /// Key identifying the record's protected group, e.g. `gender=F,race=B`.
    pub fn group_key(&self) -> String {
        if self.protected.is_empty() {
            return "all".to_string();
        }
        self.protected
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}
