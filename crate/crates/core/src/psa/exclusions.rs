//! Step-two exclusions: charge-based overrides expressed as data.

use serde::{Deserialize, Serialize};

use super::factors::{BoolFactor, FactorVector};
use super::PsaError;

pub const EXCLUSIONS_SCHEMA: &str = "psa-exclusions/v1";

/// A booked offense as it appears on the court report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offense {
    pub code: String,
    #[serde(default)]
    pub description: String,
}

impl Offense {
    pub fn new(code: impl Into<String>, description: impl Into<String>) -> Self {
        Self { code: code.into(), description: description.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorTest {
    pub factor: BoolFactor,
    pub value: bool,
}

/// Fires when some offense code starts with one of `offense_prefixes`
/// (or the list is empty), every factor test holds, and the NVCA flag
/// matches `nvca_flag` when that is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRule {
    pub name: String,
    #[serde(default)]
    pub offense_prefixes: Vec<String>,
    #[serde(default)]
    pub factor_tests: Vec<FactorTest>,
    #[serde(default)]
    pub nvca_flag: Option<bool>,
}

impl ExclusionRule {
    pub fn matches(&self, factors: &FactorVector, nvca_flag: bool, offenses: &[Offense]) -> bool {
        let offense_ok = self.offense_prefixes.is_empty()
            || offenses.iter().any(|o| {
                let code = o.code.trim();
                self.offense_prefixes.iter().any(|p| code.starts_with(p.as_str()))
            });
        offense_ok
            && self.factor_tests.iter().all(|t| factors.flag(t.factor) == t.value)
            && self.nvca_flag.is_none_or(|want| want == nvca_flag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionConfig {
    pub enabled: bool,
    #[serde(default)]
    pub rules: Vec<ExclusionRule>,
}

#[derive(Deserialize)]
struct ExclusionFile {
    schema: String,
    #[serde(flatten)]
    config: ExclusionConfig,
}

impl ExclusionConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    /// First enabled rule that fires, in declaration order.
    pub fn first_match(
        &self,
        factors: &FactorVector,
        nvca_flag: bool,
        offenses: &[Offense],
    ) -> Option<&ExclusionRule> {
        if !self.enabled {
            return None;
        }
        self.rules.iter().find(|r| r.matches(factors, nvca_flag, offenses))
    }

    /// Parses a standalone exclusion file.
    pub fn from_toml_str(text: &str) -> Result<Self, PsaError> {
        let file: ExclusionFile = toml::from_str(text).map_err(|e| PsaError::Parse(e.to_string()))?;
        if file.schema != EXCLUSIONS_SCHEMA {
            return Err(PsaError::Schema { expected: EXCLUSIONS_SCHEMA, found: file.schema });
        }
        Ok(file.config)
    }

    /// The San Francisco exclusion fixture shipped with the crate.
    pub fn san_francisco() -> Self {
        Self::from_toml_str(include_str!("../../data/sf_exclusions.toml")).expect("bundled exclusions parse")
    }
}
