//! Replica of the Public Safety Assessment scoring pipeline.
//!
//! Factor responses are turned into weighted raw scores, the FTA and NCA
//! raw scores are converted to six-point scales, the NVCA raw score to a
//! flag, and the scales are looked up in the decision-making framework.
//! Step-two exclusions may force "Release Not Recommended" regardless of
//! scores. All weights, the framework and the exclusions are loaded from
//! a single TOML document.

mod exclusions;
mod factors;
mod matrix;
mod report;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exclusions::{ExclusionConfig, ExclusionRule, FactorTest, Offense, EXCLUSIONS_SCHEMA};
pub use factors::{BoolFactor, CountFactor, FactorVector, MAX_AGE, MIN_AGE};
pub use matrix::{lookup_recommendation, FrameworkMatrix, Recommendation, RecommendationCell};
pub use report::{render_court_report, CaseMetadata};
pub use weights::{
    compute_raw_scores, nvca_flag, scale_scores, FlaggedOutcome, Predicate, RawScores, ScaledOutcome,
    SmoothingMode, WeightRule, WeightTable, MAX_RULE_POINTS,
};

pub const CONFIG_SCHEMA: &str = "psa-config/v1";
pub const CASE_SCHEMA: &str = "psa-case/v1";

#[derive(Debug, Error)]
pub enum PsaError {
    #[error("invalid factors ({invariant}): {detail}")]
    InvalidFactors { invariant: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("framework cell (FTA {scaled_fta}, NCA {scaled_nca}) is blank; weight table and matrix disagree")]
    UnreachableCell { scaled_fta: u8, scaled_nca: u8 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    Schema { expected: &'static str, found: String },
}

/// Everything needed to score a defendant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaConfig {
    pub schema: String,
    pub weights: WeightTable,
    pub matrix: FrameworkMatrix,
    #[serde(default)]
    pub exclusions: ExclusionConfig,
    #[serde(default)]
    pub smoothing: SmoothingMode,
}

impl Default for PsaConfig {
    fn default() -> Self {
        Self::from_toml_str(include_str!("../../data/psa_default.toml")).expect("bundled PSA config is valid")
    }
}

impl PsaConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PsaError> {
        let config: PsaConfig = toml::from_str(text).map_err(|e| PsaError::Parse(e.to_string()))?;
        if config.schema != CONFIG_SCHEMA {
            return Err(PsaError::Schema { expected: CONFIG_SCHEMA, found: config.schema });
        }
        config.weights.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("PSA config serializes")
    }

    pub fn with_exclusions(mut self, exclusions: ExclusionConfig) -> Self {
        self.exclusions = exclusions;
        self
    }

    pub fn with_smoothing(mut self, smoothing: SmoothingMode) -> Self {
        self.smoothing = smoothing;
        self
    }
}

/// Full result of scoring one defendant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub raw_fta: f64,
    pub raw_nca: f64,
    pub raw_nvca: f64,
    pub scaled_fta: u8,
    pub scaled_nca: u8,
    pub nvca_flag: bool,
    pub recommendation: RecommendationCell,
    pub step2_applied: bool,
    pub exclusion: Option<String>,
}

/// Scores a defendant end to end.
pub fn assess(factors: &FactorVector, offenses: &[Offense], config: &PsaConfig) -> Result<RiskAssessment, PsaError> {
    let raw = compute_raw_scores(factors, &config.weights, config.smoothing)?;
    let (scaled_fta, scaled_nca) = scale_scores(raw.fta, raw.nca, &config.weights)?;
    let flag = nvca_flag(raw.nvca, &config.weights)?;
    let rec = lookup_recommendation(
        scaled_fta,
        scaled_nca,
        flag,
        &config.matrix,
        &config.exclusions,
        factors,
        offenses,
    )?;
    Ok(RiskAssessment {
        raw_fta: raw.fta,
        raw_nca: raw.nca,
        raw_nvca: raw.nvca,
        scaled_fta,
        scaled_nca,
        nvca_flag: flag,
        recommendation: rec.cell,
        step2_applied: rec.step2_applied,
        exclusion: rec.exclusion,
    })
}

/// One defendant's questionnaire, booked offenses and report header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInput {
    pub schema: String,
    #[serde(default)]
    pub metadata: CaseMetadata,
    pub factors: FactorVector,
    #[serde(default)]
    pub offenses: Vec<Offense>,
}

impl CaseInput {
    pub fn from_toml_str(text: &str) -> Result<Self, PsaError> {
        let case: CaseInput = toml::from_str(text).map_err(|e| PsaError::Parse(e.to_string()))?;
        if case.schema != CASE_SCHEMA {
            return Err(PsaError::Schema { expected: CASE_SCHEMA, found: case.schema });
        }
        Ok(case)
    }

    /// The sample San Francisco court report case.
    pub fn appendix_sample() -> Self {
        Self::from_toml_str(include_str!("../../data/appendix1_case.toml")).expect("bundled case parses")
    }
}
