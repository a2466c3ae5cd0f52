//! The nine PSA risk factors for one defendant.

use serde::{Deserialize, Serialize};

use super::PsaError;

/// Youngest and oldest age accepted at arrest.
pub const MIN_AGE: u32 = 12;
pub const MAX_AGE: u32 = 120;

/// Responses to the PSA risk-factor questionnaire.
///
/// `prior_conviction` and `violent_and_20_or_younger` are derived answers
/// that appear on the court report; [`FactorVector::validate`] checks they
/// agree with the answers they are derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorVector {
    pub age_at_arrest: u32,
    pub current_violent_offense: bool,
    pub violent_and_20_or_younger: bool,
    pub pending_charge: bool,
    pub prior_misdemeanor_conviction: bool,
    pub prior_felony_conviction: bool,
    pub prior_conviction: bool,
    /// Number of prior violent convictions; 3 and above are treated alike.
    pub prior_violent_convictions: u32,
    /// Prior failures to appear in the past two years; 2 and above alike.
    pub prior_fta_past_2y: u32,
    pub prior_fta_older_2y: bool,
    pub prior_sentence_incarceration: bool,
}

/// Boolean factors usable in weight and exclusion predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolFactor {
    CurrentViolentOffense,
    #[serde(rename = "violent_and_20_or_younger")]
    ViolentAnd20OrYounger,
    PendingCharge,
    PriorMisdemeanorConviction,
    PriorFelonyConviction,
    PriorConviction,
    #[serde(rename = "prior_fta_older_2y")]
    PriorFtaOlder2y,
    PriorSentenceIncarceration,
}

/// Count-valued factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountFactor {
    PriorViolentConvictions,
    #[serde(rename = "prior_fta_past_2y")]
    PriorFtaPast2y,
}

impl FactorVector {
    /// Builds a vector from the independent answers, filling in the two
    /// derived ones.
    #[allow(clippy::too_many_arguments)]
    pub fn from_answers(
        age_at_arrest: u32,
        current_violent_offense: bool,
        pending_charge: bool,
        prior_misdemeanor_conviction: bool,
        prior_felony_conviction: bool,
        prior_violent_convictions: u32,
        prior_fta_past_2y: u32,
        prior_fta_older_2y: bool,
        prior_sentence_incarceration: bool,
    ) -> Self {
        Self {
            age_at_arrest,
            current_violent_offense,
            violent_and_20_or_younger: current_violent_offense && age_at_arrest <= 20,
            pending_charge,
            prior_misdemeanor_conviction,
            prior_felony_conviction,
            prior_conviction: prior_misdemeanor_conviction || prior_felony_conviction,
            prior_violent_convictions,
            prior_fta_past_2y,
            prior_fta_older_2y,
            prior_sentence_incarceration,
        }
    }

    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<(), PsaError> {
        if !(MIN_AGE..=MAX_AGE).contains(&self.age_at_arrest) {
            return Err(PsaError::InvalidFactors {
                invariant: "age_bounds",
                detail: format!(
                    "age_at_arrest {} outside [{MIN_AGE}, {MAX_AGE}]",
                    self.age_at_arrest
                ),
            });
        }
        if self.prior_conviction != (self.prior_misdemeanor_conviction || self.prior_felony_conviction) {
            return Err(PsaError::InvalidFactors {
                invariant: "prior_conviction",
                detail: "prior_conviction must equal prior_misdemeanor_conviction OR prior_felony_conviction"
                    .to_string(),
            });
        }
        if self.violent_and_20_or_younger && !(self.current_violent_offense && self.age_at_arrest <= 20) {
            return Err(PsaError::InvalidFactors {
                invariant: "violent_and_20_or_younger",
                detail: "violent_and_20_or_younger requires current_violent_offense and age_at_arrest <= 20"
                    .to_string(),
            });
        }
        Ok(())
    }

    pub fn flag(&self, factor: BoolFactor) -> bool {
        match factor {
            BoolFactor::CurrentViolentOffense => self.current_violent_offense,
            BoolFactor::ViolentAnd20OrYounger => self.violent_and_20_or_younger,
            BoolFactor::PendingCharge => self.pending_charge,
            BoolFactor::PriorMisdemeanorConviction => self.prior_misdemeanor_conviction,
            BoolFactor::PriorFelonyConviction => self.prior_felony_conviction,
            BoolFactor::PriorConviction => self.prior_conviction,
            BoolFactor::PriorFtaOlder2y => self.prior_fta_older_2y,
            BoolFactor::PriorSentenceIncarceration => self.prior_sentence_incarceration,
        }
    }

    pub fn count(&self, factor: CountFactor) -> u32 {
        match factor {
            CountFactor::PriorViolentConvictions => self.prior_violent_convictions,
            CountFactor::PriorFtaPast2y => self.prior_fta_past_2y,
        }
    }

    /// The lowest-risk vector at the given age.
    pub fn minimal(age_at_arrest: u32) -> Self {
        Self::from_answers(age_at_arrest, false, false, false, false, 0, 0, false, false)
    }
}
