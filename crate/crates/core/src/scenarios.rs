//! Seeded synthetic populations with known structure.
//!
//! [`cluster_population`] plants two clusters a handoff tree should find:
//! defendants aged 33 to 60 with no prior FTA rarely fail to appear
//! (13%), while those with four or more prior FTAs fail 40% of the time.
//! Everyone else sits at 27%, too noisy for either label.
//!
//! [`score_population`] draws PSA questionnaires, scores them with the
//! default weights and then draws outcomes whose probabilities depend
//! only on the resulting scale values.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{draw_psa_factors, CaseRecord, FeatureValue, Outcome, Outcomes, PsaAnswerRates};
use crate::psa::{assess, PsaConfig};
use crate::tree::TreeConfig;

pub const CLUSTER_AGES: (u32, u32) = (18, 70);
/// Probability of 0..=5 prior FTAs.
pub const CLUSTER_PRIOR_FTA: [f64; 6] = [0.5, 0.15, 0.1, 0.1, 0.08, 0.07];
pub const CLUSTER_LOW_RATE: f64 = 0.13;
pub const CLUSTER_HIGH_RATE: f64 = 0.40;
pub const CLUSTER_MID_RATE: f64 = 0.27;

/// FTA probability in the planted-cluster population.
pub fn cluster_fta_probability(age: u32, prior_fta: u32) -> f64 {
    if prior_fta >= 4 {
        CLUSTER_HIGH_RATE
    } else if prior_fta == 0 && (33..=60).contains(&age) {
        CLUSTER_LOW_RATE
    } else {
        CLUSTER_MID_RATE
    }
}

/// `n` released defendants with features `age` and `prior_fta`, all three
/// outcomes and PSA factors.
pub fn cluster_population(n: usize, seed: u64) -> Vec<CaseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors = WeightedIndex::new(CLUSTER_PRIOR_FTA).expect("valid weights");
    let rates = PsaAnswerRates::default();
    let width = n.to_string().len().max(6);
    (0..n)
        .map(|i| {
            let age = rng.random_range(CLUSTER_AGES.0..=CLUSTER_AGES.1);
            let prior = priors.sample(&mut rng) as u32;
            let fta = rng.random_bool(cluster_fta_probability(age, prior));
            let nca = rng.random_bool(if prior >= 4 { 0.30 } else { 0.18 });
            let nvca = rng.random_bool(0.04);
            let psa = draw_psa_factors(&mut rng, &rates, age, prior as usize);
            let features = BTreeMap::from([
                ("age".to_string(), FeatureValue::Numeric(age as f64)),
                ("prior_fta".to_string(), FeatureValue::Numeric(prior as f64)),
            ]);
            CaseRecord {
                case_id: format!("c{i:0width$}"),
                features,
                protected: BTreeMap::new(),
                released: true,
                outcomes: Outcomes::all(fta, nca, nvca),
                psa_factors: Some(psa),
            }
        })
        .collect()
}

/// Tree settings under which the planted clusters become labeled leaves.
pub fn cluster_tree_config() -> TreeConfig {
    let mut c = TreeConfig::new(Outcome::Fta, 400, 0.65, 0.20);
    c.max_depth = 6;
    c.min_impurity_decrease = 0.0005;
    c
}

/// FTA probability by scaled FTA score 1..=6.
pub const SCORE_FTA_RATES: [f64; 6] = [0.08, 0.12, 0.16, 0.21, 0.26, 0.32];
/// NCA probability by scaled NCA score 1..=6.
pub const SCORE_NCA_RATES: [f64; 6] = [0.06, 0.09, 0.12, 0.16, 0.20, 0.26];
/// NVCA probability by scaled NCA score 1..=6.
pub const SCORE_NVCA_RATES: [f64; 6] = [0.01, 0.01, 0.02, 0.02, 0.03, 0.04];

/// Answer rates skewed toward long records so the top scale values are
/// well populated.
pub fn high_risk_answer_rates() -> PsaAnswerRates {
    PsaAnswerRates {
        current_violent_offense: 0.3,
        pending_charge: 0.6,
        prior_misdemeanor_conviction: 0.7,
        prior_felony_conviction: 0.6,
        prior_violent_convictions: vec![0.3, 0.2, 0.2, 0.3],
        prior_sentence_incarceration: 0.6,
    }
}

/// Draws released, scored defendants until the FTA and NCA scale values
/// 5 and 6 each hold at least `min_per_cell` cases.
pub fn score_population(min_per_cell: usize, seed: u64) -> Vec<CaseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PsaConfig::default();
    let rates = high_risk_answer_rates();
    let mut cells = [0usize; 4];
    let mut out = Vec::new();
    while cells.iter().any(|&c| c < min_per_cell) {
        let age = rng.random_range(18..=70u32);
        let prior = rng.random_range(0..=5usize);
        let factors = draw_psa_factors(&mut rng, &rates, age, prior);
        let a = assess(&factors, &[], &config).expect("default configuration scores every valid vector");
        let (f, n) = (a.scaled_fta as usize, a.scaled_nca as usize);
        for (slot, hit) in [(0, f == 5), (1, f == 6), (2, n == 5), (3, n == 6)] {
            cells[slot] += usize::from(hit);
        }
        let outcomes = Outcomes::all(
            rng.random_bool(SCORE_FTA_RATES[f - 1]),
            rng.random_bool(SCORE_NCA_RATES[n - 1]),
            rng.random_bool(SCORE_NVCA_RATES[n - 1]),
        );
        let features = BTreeMap::from([
            ("age".to_string(), FeatureValue::Numeric(age as f64)),
            ("prior_fta".to_string(), FeatureValue::Numeric(prior as f64)),
        ]);
        out.push(CaseRecord {
            case_id: format!("s{:08}", out.len()),
            features,
            protected: BTreeMap::new(),
            released: true,
            outcomes,
            psa_factors: Some(factors),
        });
    }
    out
}

/// Levels of the categorical `district` feature in [`mixed_population`].
pub const DISTRICTS: [&str; 4] = ["north", "south", "east", "west"];

/// `n` released defendants with two numeric features, one categorical
/// feature and a protected `race` attribute. The FTA probability rises
/// with `prior_fta`, falls with `age` and shifts by district; its overall
/// strength is drawn from the seed so different seeds give different
/// shapes.
pub fn mixed_population(n: usize, seed: u64) -> Vec<CaseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strength: f64 = rng.random_range(0.0..2.0);
    let offsets: Vec<f64> = DISTRICTS.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|i| {
            let age = rng.random_range(18..=70u32);
            let prior = rng.random_range(0..=5u32);
            let d = rng.random_range(0..DISTRICTS.len());
            let race = if rng.random_bool(0.5) { "A" } else { "B" };
            let z = -1.2 + strength * (0.5 * prior as f64 - 0.04 * (age as f64 - 40.0)) + offsets[d];
            let p = 1.0 / (1.0 + (-z).exp());
            let fta = rng.random_bool(p);
            let features = BTreeMap::from([
                ("age".to_string(), FeatureValue::Numeric(age as f64)),
                ("prior_fta".to_string(), FeatureValue::Numeric(prior as f64)),
                ("district".to_string(), FeatureValue::Categorical(DISTRICTS[d].to_string())),
            ]);
            CaseRecord {
                case_id: format!("m{i:06}"),
                features,
                protected: BTreeMap::from([("race".to_string(), race.to_string())]),
                released: true,
                outcomes: Outcomes { fta: Some(fta), nca: Some(rng.random_bool(0.2)), nvca: Some(rng.random_bool(0.05)) },
                psa_factors: None,
            }
        })
        .collect()
}
