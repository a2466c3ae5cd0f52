//! The FTA x NCA decision-making framework.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::exclusions::{ExclusionConfig, Offense};
use super::factors::FactorVector;
use super::PsaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecommendationCell {
    #[serde(rename = "OR - NAS")]
    OrNas,
    #[serde(rename = "OR - MINIMUM")]
    OrMinimum,
    #[serde(rename = "SFPDP - ACM")]
    SfpdpAcm,
    #[serde(rename = "Release Not Recommended")]
    ReleaseNotRecommended,
    /// Blank on the published framework.
    Unreachable,
}

impl RecommendationCell {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecommendationCell::OrNas => "OR - NAS",
            RecommendationCell::OrMinimum => "OR - MINIMUM",
            RecommendationCell::SfpdpAcm => "SFPDP - ACM",
            RecommendationCell::ReleaseNotRecommended => "Release Not Recommended",
            RecommendationCell::Unreachable => "Unreachable",
        }
    }
}

impl fmt::Display for RecommendationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 6x6 grid; `cells[fta - 1][nca - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkMatrix {
    pub cells: [[RecommendationCell; 6]; 6],
}

impl FrameworkMatrix {
    pub fn cell(&self, scaled_fta: u8, scaled_nca: u8) -> Result<RecommendationCell, PsaError> {
        if !(1..=6).contains(&scaled_fta) || !(1..=6).contains(&scaled_nca) {
            return Err(PsaError::Config(format!(
                "scaled scores (FTA {scaled_fta}, NCA {scaled_nca}) outside 1..=6"
            )));
        }
        Ok(self.cells[usize::from(scaled_fta - 1)][usize::from(scaled_nca - 1)])
    }
}

/// Outcome of the framework lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub cell: RecommendationCell,
    pub step2_applied: bool,
    /// Name of the exclusion rule that forced the cell, if any.
    pub exclusion: Option<String>,
}

/// Looks up the framework cell, letting an enabled step-two exclusion
/// override it.
pub fn lookup_recommendation(
    scaled_fta: u8,
    scaled_nca: u8,
    nvca_flag: bool,
    matrix: &FrameworkMatrix,
    exclusions: &ExclusionConfig,
    factors: &FactorVector,
    offenses: &[Offense],
) -> Result<Recommendation, PsaError> {
    let cell = matrix.cell(scaled_fta, scaled_nca)?;
    if let Some(rule) = exclusions.first_match(factors, nvca_flag, offenses) {
        return Ok(Recommendation {
            cell: RecommendationCell::ReleaseNotRecommended,
            step2_applied: true,
            exclusion: Some(rule.name.clone()),
        });
    }
    if cell == RecommendationCell::Unreachable {
        return Err(PsaError::UnreachableCell { scaled_fta, scaled_nca });
    }
    Ok(Recommendation { cell, step2_applied: false, exclusion: None })
}
