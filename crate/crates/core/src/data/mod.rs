//! Case records and the datasets built from them.
//!
//! Outcomes can only be observed for released defendants, so a record
//! that carries outcomes but was detained is rejected at every entry
//! point, and only released, labeled records are eligible for training.

mod csvio;
mod record;
mod schema;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{infer_schema, parse_dataset, write_dataset, PROTECTED_NAMES};
pub use record::{CaseRecord, FeatureMap, FeatureValue, Outcome, Outcomes};
pub use schema::{DatasetSchema, FeatureDecl, FeatureKind, DATASET_SCHEMA, PSA_COLUMNS};
pub use synth::{
    draw_psa_factors, synthesize_population, AgeRange, GroupSpec, OutcomeModel, PopulationSpec, PsaAnswerRates,
    KENTUCKY_FTA_BASE_RATE, POPULATION_SCHEMA,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}, column {column}: {message}")]
    Invalid { row: u64, column: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no eligible records")]
    NoEligibleRecords,
}

/// Released records with every outcome in `required` observed.
pub fn filter_training_eligible(records: &[CaseRecord], required: &[Outcome]) -> Vec<CaseRecord> {
    records
        .iter()
        .filter(|r| r.released && required.iter().all(|o| r.outcomes.get(*o).is_some()))
        .cloned()
        .collect()
}

/// Splits into (train, test) with `round(n * test_fraction)` test records.
///
/// With `stratify_on`, each stratum (positive, negative, unlabeled) is
/// split separately. Both halves come back ordered by case id.
pub fn split(
    records: &[CaseRecord],
    test_fraction: f64,
    seed: u64,
    stratify_on: Option<Outcome>,
) -> Result<(Vec<CaseRecord>, Vec<CaseRecord>), DataError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(DataError::Config(format!("test fraction {test_fraction} not in [0, 1]")));
    }
    let mut sorted: Vec<&CaseRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut strata: BTreeMap<u8, Vec<&CaseRecord>> = BTreeMap::new();
    for r in sorted {
        let key = match stratify_on.map(|o| r.outcomes.get(o)) {
            None => 0,
            Some(None) => 1,
            Some(Some(false)) => 2,
            Some(Some(true)) => 3,
        };
        strata.entry(key).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend(members[..n_test].iter().map(|r| (*r).clone()));
        train.extend(members[n_test..].iter().map(|r| (*r).clone()));
    }
    train.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    test.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateCount {
    pub eligible: usize,
    pub positives: usize,
    pub rate: Option<f64>,
}

impl RateCount {
    fn add(&mut self, positive: bool) {
        self.eligible += 1;
        self.positives += usize::from(positive);
        self.rate = Some(self.positives as f64 / self.eligible as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub released: usize,
    pub base_rates: BTreeMap<Outcome, RateCount>,
    /// Keyed by [`CaseRecord::group_key`].
    pub groups: BTreeMap<String, BTreeMap<Outcome, RateCount>>,
}

/// Counts and base rates, overall and per protected group. A record is
/// eligible for an outcome when released with that outcome observed.
pub fn summarize(records: &[CaseRecord]) -> Result<Summary, DataError> {
    let mut summary = Summary {
        total: records.len(),
        released: records.iter().filter(|r| r.released).count(),
        base_rates: BTreeMap::new(),
        groups: BTreeMap::new(),
    };
    for r in records.iter().filter(|r| r.released) {
        for o in Outcome::ALL {
            if let Some(v) = r.outcomes.get(o) {
                summary.base_rates.entry(o).or_default().add(v);
                summary.groups.entry(r.group_key()).or_default().entry(o).or_default().add(v);
            }
        }
    }
    if summary.base_rates.is_empty() {
        return Err(DataError::NoEligibleRecords);
    }
    Ok(summary)
}
