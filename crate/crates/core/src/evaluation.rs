//! Baselines, offense rates by PSA score and policy comparison.
//!
//! Counterfactual figures (what detained defendants would have done) are
//! only meaningful when every record carries outcomes, as in synthetic
//! data. On mixed data the comparison falls back to the records with
//! outcomes and says so in a caveat.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CaseRecord, Outcome, Outcomes};
use crate::forest::HandoffForest;
use crate::psa::{assess, PsaConfig, PsaError, RecommendationCell};
use crate::tree::{HandoffTree, RiskLabel, TreeError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no released records with an observed {0} outcome")]
    NoEligibleRecords(Outcome),
    #[error("case {0} has no PSA factors to score")]
    Unscored(String),
    #[error("case {0} was detained; outcomes are only observable for released defendants")]
    Detained(String),
    #[error("case {case_id}: {source}")]
    Psa { case_id: String, source: PsaError },
    #[error("case {case_id}: {source}")]
    Model { case_id: String, source: TreeError },
    #[error("no records")]
    Empty,
}

/// Accuracy of predicting "no offense" for everyone: one minus the base
/// rate among released defendants with the outcome observed.
pub fn baseline_release_all(records: &[CaseRecord], outcome: Outcome) -> Result<f64, EvalError> {
    let (n, k) = records
        .iter()
        .filter(|r| r.released)
        .filter_map(|r| r.outcomes.get(outcome))
        .fold((0usize, 0usize), |(n, k), y| (n + 1, k + usize::from(y)));
    if n == 0 {
        return Err(EvalError::NoEligibleRecords(outcome));
    }
    Ok((n - k) as f64 / n as f64)
}

/// A defendant with PSA scale values attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub case_id: String,
    pub released: bool,
    pub outcomes: Outcomes,
    pub scaled_fta: Option<u8>,
    pub scaled_nca: Option<u8>,
}

/// Scores every record from its PSA factors.
pub fn score_records(records: &[CaseRecord], config: &PsaConfig) -> Result<Vec<ScoredRecord>, EvalError> {
    records
        .iter()
        .map(|r| {
            let factors = r.psa_factors.as_ref().ok_or_else(|| EvalError::Unscored(r.case_id.clone()))?;
            let a = assess(factors, &[], config)
                .map_err(|source| EvalError::Psa { case_id: r.case_id.clone(), source })?;
            Ok(ScoredRecord {
                case_id: r.case_id.clone(),
                released: r.released,
                outcomes: r.outcomes,
                scaled_fta: Some(a.scaled_fta),
                scaled_nca: Some(a.scaled_nca),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub count: usize,
    pub positives: usize,
    pub rate: Option<f64>,
}

/// Observed rates at one scale value. FTA is indexed by the FTA scale;
/// NCA and NVCA by the NCA scale, NVCA having no scale of its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub score: u8,
    pub fta: RateCell,
    pub nca: RateCell,
    pub nvca: RateCell,
}

impl ScoreRow {
    pub fn cell(&self, outcome: Outcome) -> &RateCell {
        match outcome {
            Outcome::Fta => &self.fta,
            Outcome::Nca => &self.nca,
            Outcome::Nvca => &self.nvca,
        }
    }

    fn cell_mut(&mut self, outcome: Outcome) -> &mut RateCell {
        match outcome {
            Outcome::Fta => &mut self.fta,
            Outcome::Nca => &mut self.nca,
            Outcome::Nvca => &mut self.nvca,
        }
    }
}

/// Empirical offense rate per outcome for each scale value 1..=6.
pub fn rates_by_score(records: &[ScoredRecord]) -> Result<Vec<ScoreRow>, EvalError> {
    let mut rows: Vec<ScoreRow> = (1..=6)
        .map(|s| ScoreRow { score: s, fta: RateCell::default(), nca: RateCell::default(), nvca: RateCell::default() })
        .collect();
    for r in records {
        if !r.released {
            return Err(EvalError::Detained(r.case_id.clone()));
        }
        let (Some(f), Some(n)) = (r.scaled_fta, r.scaled_nca) else {
            return Err(EvalError::Unscored(r.case_id.clone()));
        };
        for (outcome, score) in [(Outcome::Fta, f), (Outcome::Nca, n), (Outcome::Nvca, n)] {
            if !(1..=6).contains(&score) {
                return Err(EvalError::Unscored(r.case_id.clone()));
            }
            if let Some(y) = r.outcomes.get(outcome) {
                let cell = rows[score as usize - 1].cell_mut(outcome);
                cell.count += 1;
                cell.positives += usize::from(y);
            }
        }
    }
    for row in &mut rows {
        for o in Outcome::ALL {
            let c = row.cell_mut(o);
            c.rate = (c.count > 0).then(|| c.positives as f64 / c.count as f64);
        }
    }
    Ok(rows)
}

/// The rate of not offending among defendants who would be detained at a
/// given score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramedCell {
    pub outcome: Outcome,
    pub score: u8,
    pub offense_rate: f64,
    pub non_offense_rate: f64,
}

impl FramedCell {
    pub fn sentence(&self) -> String {
        format!(
            "{:.0}% of released defendants at {} score {} did NOT commit {}",
            self.non_offense_rate * 100.0,
            self.outcome,
            self.score,
            self.outcome
        )
    }
}

pub fn complement(rate: f64) -> f64 {
    1.0 - rate
}

/// Complement of every defined cell in `rows`.
pub fn false_positive_framing(rows: &[ScoreRow]) -> Vec<FramedCell> {
    let mut out = Vec::new();
    for o in Outcome::ALL {
        for row in rows {
            if let Some(rate) = row.cell(o).rate {
                out.push(FramedCell { outcome: o, score: row.score, offense_rate: rate, non_offense_rate: complement(rate) });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Detain,
    Release,
    Handoff,
}

/// Maps a defendant to a decision.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn decide(&self, record: &CaseRecord) -> Result<Decision, EvalError>;
}

pub struct ReleaseAll;

impl Policy for ReleaseAll {
    fn name(&self) -> String {
        "release-all".into()
    }

    fn decide(&self, _: &CaseRecord) -> Result<Decision, EvalError> {
        Ok(Decision::Release)
    }
}

pub struct DetainAll;

impl Policy for DetainAll {
    fn name(&self) -> String {
        "detain-all".into()
    }

    fn decide(&self, _: &CaseRecord) -> Result<Decision, EvalError> {
        Ok(Decision::Detain)
    }
}

/// Detains exactly when the framework says "Release Not Recommended".
pub struct PsaMatrixPolicy {
    pub config: PsaConfig,
}

impl Policy for PsaMatrixPolicy {
    fn name(&self) -> String {
        "psa-matrix".into()
    }

    fn decide(&self, r: &CaseRecord) -> Result<Decision, EvalError> {
        let factors = r.psa_factors.as_ref().ok_or_else(|| EvalError::Unscored(r.case_id.clone()))?;
        let a = assess(factors, &[], &self.config).map_err(|source| EvalError::Psa { case_id: r.case_id.clone(), source })?;
        Ok(if a.recommendation == RecommendationCell::ReleaseNotRecommended {
            Decision::Detain
        } else {
            Decision::Release
        })
    }
}

fn from_label(label: RiskLabel) -> Decision {
    match label {
        RiskLabel::HighRisk => Decision::Detain,
        RiskLabel::VeryLowRisk => Decision::Release,
        RiskLabel::Handoff => Decision::Handoff,
    }
}

pub struct TreePolicy<'a> {
    pub tree: &'a HandoffTree,
}

impl Policy for TreePolicy<'_> {
    fn name(&self) -> String {
        "handoff-tree".into()
    }

    fn decide(&self, r: &CaseRecord) -> Result<Decision, EvalError> {
        let p = self
            .tree
            .predict(&r.model_features(self.tree.config.include_protected))
            .map_err(|source| EvalError::Model { case_id: r.case_id.clone(), source })?;
        Ok(from_label(p.label))
    }
}

pub struct ForestPolicy<'a> {
    pub forest: &'a HandoffForest,
}

impl Policy for ForestPolicy<'_> {
    fn name(&self) -> String {
        "handoff-forest".into()
    }

    fn decide(&self, r: &CaseRecord) -> Result<Decision, EvalError> {
        let p = self
            .forest
            .predict(&r.model_features(self.forest.config.tree.include_protected))
            .map_err(|source| EvalError::Model { case_id: r.case_id.clone(), source })?;
        Ok(from_label(p.label))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffFallback {
    #[default]
    Release,
    Detain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: String,
    pub cases: usize,
    pub detention_rate: f64,
    /// Share of cases the policy handed off; they are then resolved by
    /// the fallback.
    pub handoff_rate: f64,
    /// Offense rates among released defendants.
    pub released_rates: BTreeMap<Outcome, Option<f64>>,
    /// Share of detained defendants who would not have offended.
    pub detained_non_offense_rates: BTreeMap<Outcome, Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

fn evaluate_one(records: &[&CaseRecord], policy: &dyn Policy, fallback: HandoffFallback, caveat: Option<String>) -> Result<PolicyResult, EvalError> {
    let mut detained = 0usize;
    let mut handed = 0usize;
    let mut released_counts: BTreeMap<Outcome, (usize, usize)> = BTreeMap::new();
    let mut detained_counts: BTreeMap<Outcome, (usize, usize)> = BTreeMap::new();
    for r in records {
        let mut d = policy.decide(r)?;
        if d == Decision::Handoff {
            handed += 1;
            d = match fallback {
                HandoffFallback::Release => Decision::Release,
                HandoffFallback::Detain => Decision::Detain,
            };
        }
        let bucket = if d == Decision::Detain {
            detained += 1;
            &mut detained_counts
        } else {
            &mut released_counts
        };
        for o in Outcome::ALL {
            if let Some(y) = r.outcomes.get(o) {
                let e = bucket.entry(o).or_default();
                e.0 += 1;
                e.1 += usize::from(y);
            }
        }
    }
    let n = records.len() as f64;
    let rate = |m: &BTreeMap<Outcome, (usize, usize)>, o: Outcome, invert: bool| {
        m.get(&o).filter(|(c, _)| *c > 0).map(|(c, k)| {
            let r = *k as f64 / *c as f64;
            if invert { 1.0 - r } else { r }
        })
    };
    Ok(PolicyResult {
        policy: policy.name(),
        cases: records.len(),
        detention_rate: detained as f64 / n,
        handoff_rate: handed as f64 / n,
        released_rates: Outcome::ALL.into_iter().map(|o| (o, rate(&released_counts, o, false))).collect(),
        detained_non_offense_rates: Outcome::ALL.into_iter().map(|o| (o, rate(&detained_counts, o, true))).collect(),
        caveat,
    })
}

/// Runs each policy on the same records. Results follow the order of
/// `policies`; each result depends only on its own policy.
pub fn compare_policies(
    records: &[CaseRecord],
    policies: &[&dyn Policy],
    fallback: HandoffFallback,
) -> Result<Vec<PolicyResult>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let complete: Vec<&CaseRecord> = records.iter().filter(|r| r.outcomes.any_observed()).collect();
    let caveat = (complete.len() < records.len()).then(|| {
        format!(
            "{} of {} records lack outcomes (detained in reality); rates use only the {} with outcomes",
            records.len() - complete.len(),
            records.len(),
            complete.len()
        )
    });
    if complete.is_empty() {
        return Err(EvalError::NoEligibleRecords(Outcome::Fta));
    }
    policies.par_iter().map(|p| evaluate_one(&complete, *p, fallback, caveat.clone())).collect()
}

/// Smallest detention rate at which detaining the highest-risk cases
/// first brings the offense rate among the released down to `target`.
/// Cases with tied risk are detained as a block, pro rata. `None` when
/// `target` is unreachable short of detaining everyone.
pub fn detention_for_released_rate(cases: &[(f64, bool)], target: f64) -> Option<f64> {
    if cases.is_empty() {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = cases.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = sorted.len() as f64;
    let mut n = total;
    let mut k = sorted.iter().filter(|c| c.1).count() as f64;
    if k <= target * n {
        return Some(0.0);
    }
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|c| c.0 == sorted[i].0).count();
        let gn = (j - i) as f64;
        let gk = sorted[i..j].iter().filter(|c| c.1).count() as f64;
        // Released rate after detaining a fraction f of this block:
        // (k - f gk) / (n - f gn) <= target.
        if gk > target * gn {
            let f = (k - target * n) / (gk - target * gn);
            if f <= 1.0 && n - f * gn > 0.0 {
                return Some((total - n + f * gn) / total);
            }
        }
        n -= gn;
        k -= gk;
        if n > 0.0 && k <= target * n {
            return Some((total - n) / total);
        }
        i = j;
    }
    None
}

/// Delimited table of policy results.
pub fn policy_table(results: &[PolicyResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["policy".to_string(), "cases".into(), "detention_rate".into(), "handoff_rate".into()];
    for o in Outcome::ALL {
        header.push(format!("released_{}_rate", o.column()));
    }
    for o in Outcome::ALL {
        header.push(format!("detained_no_{}_rate", o.column()));
    }
    w.write_record(&header).expect("in-memory write");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in results {
        let mut row = vec![r.policy.clone(), r.cases.to_string(), format!("{:.4}", r.detention_rate), format!("{:.4}", r.handoff_rate)];
        row.extend(Outcome::ALL.iter().map(|o| fmt(r.released_rates[o])));
        row.extend(Outcome::ALL.iter().map(|o| fmt(r.detained_non_offense_rates[o])));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_values() {
        assert!((complement(0.26) - 0.74).abs() < 1e-12);
        assert_eq!(complement(1.0), 0.0);
    }

    #[test]
    fn framing_sentence() {
        let c = FramedCell { outcome: Outcome::Fta, score: 5, offense_rate: 0.26, non_offense_rate: 0.74 };
        assert_eq!(c.sentence(), "74% of released defendants at FTA score 5 did NOT commit FTA");
    }
}
