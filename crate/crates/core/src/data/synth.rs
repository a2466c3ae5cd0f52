//! Seeded synthetic populations.
//!
//! Each group draws age uniformly from an integer range and the prior-FTA
//! count from a categorical distribution. Outcome probabilities follow a
//! logistic function of the standardized age and prior-FTA count whose
//! intercept is solved so that the group's marginal rate equals the
//! configured base rate exactly (the expectation is taken over the
//! discrete feature distribution, not over a sample).

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::psa::FactorVector;

use super::record::{CaseRecord, FeatureValue, Outcome, Outcomes};
use super::schema::{DatasetSchema, FeatureDecl};
use super::DataError;

pub const POPULATION_SCHEMA: &str = "population-spec/v1";

/// Base rate of failure to appear in the Kentucky reference data.
pub const KENTUCKY_FTA_BASE_RATE: f64 = 0.148;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeRange {
    pub min: u32,
    pub max: u32,
}

/// Logistic link for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub base_rate: f64,
    /// Coefficient on standardized age.
    #[serde(default)]
    pub age_coef: f64,
    /// Coefficient on standardized prior-FTA count.
    #[serde(default)]
    pub prior_fta_coef: f64,
}

impl OutcomeModel {
    pub fn flat(base_rate: f64) -> Self {
        Self { base_rate, age_coef: 0.0, prior_fta_coef: 0.0 }
    }
}

/// Probabilities of the PSA answers that the features do not determine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaAnswerRates {
    pub current_violent_offense: f64,
    pub pending_charge: f64,
    pub prior_misdemeanor_conviction: f64,
    pub prior_felony_conviction: f64,
    /// Probability of each prior violent conviction count 0, 1, 2, 3.
    pub prior_violent_convictions: Vec<f64>,
    pub prior_sentence_incarceration: f64,
}

impl Default for PsaAnswerRates {
    fn default() -> Self {
        Self {
            current_violent_offense: 0.2,
            pending_charge: 0.25,
            prior_misdemeanor_conviction: 0.5,
            prior_felony_conviction: 0.35,
            prior_violent_convictions: vec![0.7, 0.15, 0.1, 0.05],
            prior_sentence_incarceration: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub weight: f64,
    #[serde(default)]
    pub protected: BTreeMap<String, String>,
    pub age: AgeRange,
    /// `prior_fta[i]` is the probability of exactly `i` prior FTAs.
    pub prior_fta: Vec<f64>,
    pub fta: OutcomeModel,
    pub nca: OutcomeModel,
    pub nvca: OutcomeModel,
    #[serde(default)]
    pub psa: PsaAnswerRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub schema: String,
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
}

fn check_prob(what: &str, p: f64) -> Result<(), DataError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::Config(format!("{what} = {p} is not in [0, 1]")));
    }
    Ok(())
}

fn check_distribution(what: &str, ps: &[f64]) -> Result<(), DataError> {
    if ps.is_empty() {
        return Err(DataError::Config(format!("{what} is empty")));
    }
    for p in ps {
        check_prob(what, *p)?;
    }
    let total: f64 = ps.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl PopulationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let spec: PopulationSpec = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("population spec serializes")
    }

    /// One group with the given FTA base rate and no protected attributes.
    pub fn single_group(fta_base_rate: f64, seed: u64) -> Self {
        Self {
            schema: POPULATION_SCHEMA.to_string(),
            seed,
            groups: vec![GroupSpec::illustrative("all", 1.0, fta_base_rate)],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema != POPULATION_SCHEMA {
            return Err(DataError::Config(format!(
                "schema id {:?}, expected {POPULATION_SCHEMA:?}",
                self.schema
            )));
        }
        if self.groups.is_empty() {
            return Err(DataError::Config("population has no groups".into()));
        }
        let weights: Vec<f64> = self.groups.iter().map(|g| g.weight).collect();
        check_distribution("group weights", &weights)?;
        for g in &self.groups {
            if g.age.min > g.age.max {
                return Err(DataError::Config(format!("group {}: age.min > age.max", g.name)));
            }
            check_distribution(&format!("group {} prior_fta", g.name), &g.prior_fta)?;
            for (o, m) in [("fta", &g.fta), ("nca", &g.nca), ("nvca", &g.nvca)] {
                check_prob(&format!("group {} {o}.base_rate", g.name), m.base_rate)?;
                if !m.age_coef.is_finite() || !m.prior_fta_coef.is_finite() {
                    return Err(DataError::Config(format!("group {} {o}: coefficients must be finite", g.name)));
                }
            }
            let psa = &g.psa;
            for (what, p) in [
                ("current_violent_offense", psa.current_violent_offense),
                ("pending_charge", psa.pending_charge),
                ("prior_misdemeanor_conviction", psa.prior_misdemeanor_conviction),
                ("prior_felony_conviction", psa.prior_felony_conviction),
                ("prior_sentence_incarceration", psa.prior_sentence_incarceration),
            ] {
                check_prob(&format!("group {} psa.{what}", g.name), p)?;
            }
            check_distribution(&format!("group {} psa.prior_violent_convictions", g.name), &psa.prior_violent_convictions)?;
        }
        Ok(())
    }

    /// Schema of the files `synthesize_population` output is written with.
    pub fn dataset_schema(&self) -> DatasetSchema {
        let age_min = self.groups.iter().map(|g| g.age.min).min().unwrap_or(0);
        let age_max = self.groups.iter().map(|g| g.age.max).max().unwrap_or(0);
        let fta_max = self.groups.iter().map(|g| g.prior_fta.len()).max().unwrap_or(1) - 1;
        let mut protected: Vec<String> = self.groups.iter().flat_map(|g| g.protected.keys().cloned()).collect();
        protected.sort();
        protected.dedup();
        let protected = protected
            .iter()
            .map(|name| {
                let mut levels: Vec<&str> =
                    self.groups.iter().filter_map(|g| g.protected.get(name).map(String::as_str)).collect();
                levels.sort();
                levels.dedup();
                FeatureDecl::categorical(name, &levels)
            })
            .collect();
        DatasetSchema::new(
            vec![
                FeatureDecl::numeric("age", Some(age_min as f64), Some(age_max as f64)),
                FeatureDecl::numeric("prior_fta", Some(0.0), Some(fta_max as f64)),
            ],
            protected,
            true,
        )
    }
}

impl GroupSpec {
    /// A group with illustrative feature distributions and effects: risk
    /// falls with age and rises with prior failures to appear.
    pub fn illustrative(name: &str, weight: f64, fta_base_rate: f64) -> Self {
        Self {
            name: name.to_string(),
            weight,
            protected: BTreeMap::new(),
            age: AgeRange { min: 18, max: 70 },
            prior_fta: vec![0.55, 0.18, 0.1, 0.07, 0.05, 0.05],
            fta: OutcomeModel { base_rate: fta_base_rate, age_coef: -0.4, prior_fta_coef: 0.8 },
            nca: OutcomeModel { base_rate: 0.2, age_coef: -0.5, prior_fta_coef: 0.4 },
            nvca: OutcomeModel { base_rate: 0.04, age_coef: -0.3, prior_fta_coef: 0.2 },
            psa: PsaAnswerRates::default(),
        }
    }

    fn age_moments(&self) -> (f64, f64) {
        let lo = self.age.min as f64;
        let hi = self.age.max as f64;
        let n = hi - lo + 1.0;
        let mean = (lo + hi) / 2.0;
        // Variance of a discrete uniform on n consecutive integers.
        let var = (n * n - 1.0) / 12.0;
        (mean, var.sqrt())
    }

    fn fta_moments(&self) -> (f64, f64) {
        let mean: f64 = self.prior_fta.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let var: f64 = self.prior_fta.iter().enumerate().map(|(i, p)| p * (i as f64 - mean).powi(2)).sum();
        (mean, var.sqrt())
    }

    fn standardized(&self, age: u32, prior_fta: usize) -> (f64, f64) {
        let (am, asd) = self.age_moments();
        let (fm, fsd) = self.fta_moments();
        let za = if asd > 0.0 { (age as f64 - am) / asd } else { 0.0 };
        let zf = if fsd > 0.0 { (prior_fta as f64 - fm) / fsd } else { 0.0 };
        (za, zf)
    }

    /// Exact marginal outcome rate for a given intercept.
    fn marginal(&self, model: &OutcomeModel, intercept: f64) -> f64 {
        let ages = self.age.max - self.age.min + 1;
        let mut total = 0.0;
        for age in self.age.min..=self.age.max {
            for (k, pk) in self.prior_fta.iter().enumerate() {
                if *pk == 0.0 {
                    continue;
                }
                let (za, zf) = self.standardized(age, k);
                total += pk * sigmoid(intercept + model.age_coef * za + model.prior_fta_coef * zf);
            }
        }
        total / ages as f64
    }

    /// Intercept making the marginal rate equal the base rate.
    pub fn solve_intercept(&self, model: &OutcomeModel) -> f64 {
        if model.base_rate <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if model.base_rate >= 1.0 {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.marginal(model, mid) < model.base_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Outcome probability for one defendant.
    pub fn outcome_probability(&self, model: &OutcomeModel, intercept: f64, age: u32, prior_fta: usize) -> f64 {
        if intercept == f64::NEG_INFINITY {
            return 0.0;
        }
        if intercept == f64::INFINITY {
            return 1.0;
        }
        let (za, zf) = self.standardized(age, prior_fta);
        sigmoid(intercept + model.age_coef * za + model.prior_fta_coef * zf)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws the PSA answers for a defendant whose age and prior-FTA count are
/// already known. Recent FTAs are capped at two; three or more priors also
/// set the older-than-two-years answer. Violent convictions and prior
/// incarceration are only kept for defendants with a prior conviction.
pub fn draw_psa_factors<R: Rng>(rng: &mut R, rates: &PsaAnswerRates, age: u32, prior_fta: usize) -> FactorVector {
    let violent = WeightedIndex::new(&rates.prior_violent_convictions).expect("validated distribution");
    let current_violent = rng.random_bool(rates.current_violent_offense);
    let pending = rng.random_bool(rates.pending_charge);
    let misdemeanor = rng.random_bool(rates.prior_misdemeanor_conviction);
    let felony = rng.random_bool(rates.prior_felony_conviction);
    let violent_count = violent.sample(rng) as u32;
    let incarceration = rng.random_bool(rates.prior_sentence_incarceration);
    let convicted = misdemeanor || felony;
    FactorVector::from_answers(
        age,
        current_violent,
        pending,
        misdemeanor,
        felony,
        if convicted { violent_count } else { 0 },
        prior_fta.min(2) as u32,
        prior_fta >= 3,
        convicted && incarceration,
    )
}

/// Generates `n` released defendants with all three outcomes observed.
pub fn synthesize_population(spec: &PopulationSpec, n: usize) -> Result<Vec<CaseRecord>, DataError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::Config("population size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let group_dist = WeightedIndex::new(spec.groups.iter().map(|g| g.weight))
        .map_err(|e| DataError::Config(e.to_string()))?;
    let prepared: Vec<_> = spec
        .groups
        .iter()
        .map(|g| {
            let fta_dist = WeightedIndex::new(&g.prior_fta).expect("validated distribution");
            let intercepts = [g.solve_intercept(&g.fta), g.solve_intercept(&g.nca), g.solve_intercept(&g.nvca)];
            (g, fta_dist, intercepts)
        })
        .collect();
    let width = n.to_string().len().max(6);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (g, fta_dist, intercepts) = &prepared[group_dist.sample(&mut rng)];
        let age = rng.random_range(g.age.min..=g.age.max);
        let prior_fta = fta_dist.sample(&mut rng);
        let mut outcomes = Outcomes::default();
        for (j, (o, model)) in [(Outcome::Fta, &g.fta), (Outcome::Nca, &g.nca), (Outcome::Nvca, &g.nvca)]
            .into_iter()
            .enumerate()
        {
            let p = g.outcome_probability(model, intercepts[j], age, prior_fta);
            outcomes.set(o, Some(rng.random_bool(p)));
        }
        let psa = draw_psa_factors(&mut rng, &g.psa, age, prior_fta);
        let mut features = BTreeMap::new();
        features.insert("age".to_string(), FeatureValue::Numeric(age as f64));
        features.insert("prior_fta".to_string(), FeatureValue::Numeric(prior_fta as f64));
        records.push(CaseRecord {
            case_id: format!("c{i:0width$}"),
            features,
            protected: g.protected.clone(),
            released: true,
            outcomes,
            psa_factors: Some(psa),
        });
    }
    Ok(records)
}
