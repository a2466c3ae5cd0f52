use std::fmt;

use chrono::{DateTime, Utc};
use pretrial_core::tree::RiskLabel;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// What the model said about a case, frozen at the time it was issued.
/// Handoff snapshots carry neither an error rate nor the positive count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSnapshot {
    pub prediction_id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_ref: Option<String>,
    pub label: RiskLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_id: Option<usize>,
    pub path: Vec<String>,
    /// Training cases behind the prediction (pooled for forests).
    pub support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positives: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreement: Option<f64>,
    pub model_kind: String,
    pub model_version: String,
    pub issued_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanDecision {
    Release,
    ReleaseWithConditions,
    Detain,
}

impl HumanDecision {
    pub const ALL: [HumanDecision; 3] =
        [HumanDecision::Release, HumanDecision::ReleaseWithConditions, HumanDecision::Detain];

    pub fn as_str(&self) -> &'static str {
        match self {
            HumanDecision::Release => "release",
            HumanDecision::ReleaseWithConditions => "release_with_conditions",
            HumanDecision::Detain => "detain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for HumanDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision_id: Uuid,
    pub prediction_id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_ref: Option<String>,
    pub prediction: PredictionSnapshot,
    pub decision: HumanDecision,
    pub rationale: String,
    pub decided_at: DateTime<Utc>,
    pub decider: String,
}
