//! Point tables, raw-score computation and raw-to-scale conversion.

use serde::{Deserialize, Serialize};

use super::factors::{BoolFactor, CountFactor, FactorVector};
use super::PsaError;

/// Largest point value a single rule may carry.
pub const MAX_RULE_POINTS: u32 = 4;

/// A test over one factor response. All predicates are monotone: making a
/// response riskier never turns a satisfied predicate off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Age at arrest is at most `years`.
    AgeAtMost { years: u32 },
    Flag { factor: BoolFactor },
    CountAtLeast { factor: CountFactor, min: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRule {
    pub when: Predicate,
    pub points: u32,
}

/// An outcome reported on the 1-6 scale (FTA, NCA).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledOutcome {
    pub raw_max: u32,
    /// `scale[raw]` is the scaled score for that raw score.
    pub scale: Vec<u8>,
    pub rules: Vec<WeightRule>,
}

/// An outcome reported as a flag (NVCA).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedOutcome {
    pub raw_max: u32,
    pub flag_threshold: u32,
    pub rules: Vec<WeightRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightTable {
    pub fta: ScaledOutcome,
    pub nca: ScaledOutcome,
    pub nvca: FlaggedOutcome,
}

/// How the age predicate contributes to raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SmoothingMode {
    /// Age predicates award all or nothing.
    #[default]
    Off,
    /// Age predicates award full points at or below `full_at`, nothing at
    /// or above `zero_at`, and a linear share in between.
    AgeRamp { full_at: u32, zero_at: u32 },
}

impl SmoothingMode {
    pub const DEFAULT_RAMP: SmoothingMode = SmoothingMode::AgeRamp { full_at: 21, zero_at: 25 };
}

/// Raw scores. Integral unless an age ramp is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScores {
    pub fta: f64,
    pub nca: f64,
    pub nvca: f64,
}

fn validate_rules(outcome: &'static str, raw_max: u32, rules: &[WeightRule]) -> Result<(), PsaError> {
    let mut total = 0;
    for rule in rules {
        if rule.points > MAX_RULE_POINTS {
            return Err(PsaError::Config(format!(
                "{outcome}: rule {:?} awards {} points, above the maximum of {MAX_RULE_POINTS}",
                rule.when, rule.points
            )));
        }
        total += rule.points;
    }
    // Every predicate can hold at once, so the sum of points is attainable.
    if total != raw_max {
        return Err(PsaError::Config(format!(
            "{outcome}: raw_max is {raw_max} but rule points sum to {total}"
        )));
    }
    Ok(())
}

impl ScaledOutcome {
    fn validate(&self, outcome: &'static str) -> Result<(), PsaError> {
        validate_rules(outcome, self.raw_max, &self.rules)?;
        if self.scale.len() != self.raw_max as usize + 1 {
            return Err(PsaError::Config(format!(
                "{outcome}: scale has {} entries, expected raw_max + 1 = {}",
                self.scale.len(),
                self.raw_max + 1
            )));
        }
        if self.scale.windows(2).any(|w| w[1] < w[0]) {
            return Err(PsaError::Config(format!("{outcome}: scale is not nondecreasing")));
        }
        for value in 1..=6u8 {
            if !self.scale.contains(&value) {
                return Err(PsaError::Config(format!("{outcome}: scale never reaches {value}")));
            }
        }
        if self.scale.iter().any(|&s| !(1..=6).contains(&s)) {
            return Err(PsaError::Config(format!("{outcome}: scale values must lie in 1..=6")));
        }
        Ok(())
    }

    /// Looks up the scaled score, rounding fractional raw scores half-up.
    pub fn scaled(&self, raw: f64) -> Result<u8, PsaError> {
        let rounded = round_half_up(raw);
        if !rounded.is_finite() || rounded < 0.0 || rounded > self.raw_max as f64 {
            return Err(PsaError::Config(format!(
                "raw score {raw} outside [0, {}]",
                self.raw_max
            )));
        }
        Ok(self.scale[rounded as usize])
    }
}

impl FlaggedOutcome {
    fn validate(&self) -> Result<(), PsaError> {
        validate_rules("nvca", self.raw_max, &self.rules)?;
        if self.flag_threshold == 0 || self.flag_threshold > self.raw_max {
            return Err(PsaError::Config(format!(
                "nvca: flag_threshold {} must lie in [1, raw_max]",
                self.flag_threshold
            )));
        }
        Ok(())
    }
}

impl WeightTable {
    pub fn validate(&self) -> Result<(), PsaError> {
        self.fta.validate("fta")?;
        self.nca.validate("nca")?;
        self.nvca.validate()
    }
}

pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn predicate_share(pred: &Predicate, factors: &FactorVector, smoothing: SmoothingMode) -> f64 {
    match *pred {
        Predicate::AgeAtMost { years } => match smoothing {
            SmoothingMode::Off => f64::from(u8::from(factors.age_at_arrest <= years)),
            SmoothingMode::AgeRamp { full_at, zero_at } => {
                let age = factors.age_at_arrest;
                if age <= full_at {
                    1.0
                } else if age >= zero_at {
                    0.0
                } else {
                    f64::from(zero_at - age) / f64::from(zero_at - full_at)
                }
            }
        },
        Predicate::Flag { factor } => f64::from(u8::from(factors.flag(factor))),
        Predicate::CountAtLeast { factor, min } => f64::from(u8::from(factors.count(factor) >= min)),
    }
}

fn sum_points(rules: &[WeightRule], factors: &FactorVector, smoothing: SmoothingMode) -> f64 {
    rules
        .iter()
        .map(|r| f64::from(r.points) * predicate_share(&r.when, factors, smoothing))
        .sum()
}

/// Sums the points of every matched predicate, per outcome.
pub fn compute_raw_scores(
    factors: &FactorVector,
    weights: &WeightTable,
    smoothing: SmoothingMode,
) -> Result<RawScores, PsaError> {
    factors.validate()?;
    weights.validate()?;
    if let SmoothingMode::AgeRamp { full_at, zero_at } = smoothing {
        if zero_at <= full_at {
            return Err(PsaError::Config(format!(
                "age ramp must end after it starts (full_at {full_at}, zero_at {zero_at})"
            )));
        }
    }
    Ok(RawScores {
        fta: sum_points(&weights.fta.rules, factors, smoothing),
        nca: sum_points(&weights.nca.rules, factors, smoothing),
        nvca: sum_points(&weights.nvca.rules, factors, smoothing),
    })
}

/// Converts raw FTA and NCA scores to the six-point scales.
pub fn scale_scores(raw_fta: f64, raw_nca: f64, weights: &WeightTable) -> Result<(u8, u8), PsaError> {
    Ok((weights.fta.scaled(raw_fta)?, weights.nca.scaled(raw_nca)?))
}

pub fn nvca_flag(raw_nvca: f64, weights: &WeightTable) -> Result<bool, PsaError> {
    let rounded = round_half_up(raw_nvca);
    if !rounded.is_finite() || rounded < 0.0 || rounded > weights.nvca.raw_max as f64 {
        return Err(PsaError::Config(format!(
            "raw NVCA score {raw_nvca} outside [0, {}]",
            weights.nvca.raw_max
        )));
    }
    Ok(rounded >= weights.nvca.flag_threshold as f64)
}
