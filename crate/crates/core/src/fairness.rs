//! Group fairness measures: AUC, error-rate balance and calibration.
//!
//! AUC counts tied scores as half a win. Abstentions (Handoff) are kept
//! out of FPR and FNR and reported as their own per-group rate, so a
//! model that abstains unevenly across groups shows up in the audit.
//!
//! [`tradeoff_demo`] draws scores from a binormal model (positives
//! `N(mu, 1)`, negatives `N(0, 1)`) converted to exact posterior
//! probabilities, so the scores are calibrated by construction in every
//! group. Thresholding the same calibrated score in two groups with
//! different base rates then produces different error rates.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PopulationSpec;
use crate::stats::{normal_cdf, normal_quantile};

/// Smallest bin count considered when reporting calibration gaps. At
/// 2000 cases the binomial standard error is at most about 0.011.
pub const DEFAULT_MIN_BIN_COUNT: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum FairnessError {
    #[error("AUC needs at least one positive and one negative case")]
    SingleClass,
    #[error("no cases")]
    Empty,
    #[error("invalid bin edges: {0}")]
    Bins(String),
    #[error("score {score} outside the bin range [{lo}, {hi}]")]
    OutOfRange { score: f64, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub score: f64,
    pub outcome: bool,
    pub group: String,
}

impl ScoredCase {
    pub fn new(score: f64, outcome: bool, group: impl Into<String>) -> Self {
        Self { score, outcome, group: group.into() }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from the rank-sum formula.
pub fn auc(cases: &[ScoredCase]) -> Result<f64, FairnessError> {
    let n_pos = cases.iter().filter(|c| c.outcome).count();
    let n_neg = cases.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FairnessError::SingleClass);
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by(|&a, &b| cases[a].score.total_cmp(&cases[b].score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && cases[order[j + 1]].score == cases[order[i]].score {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| cases[k].outcome).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// AUC per group; `None` for groups lacking a class.
pub fn group_auc(cases: &[ScoredCase]) -> BTreeMap<String, Option<f64>> {
    by_group(cases, |c| &c.group)
        .into_iter()
        .map(|(g, members)| {
            let owned: Vec<ScoredCase> = members.into_iter().cloned().collect();
            (g, auc(&owned).ok())
        })
        .collect()
}

fn by_group<'a, T>(items: &'a [T], key: impl Fn(&T) -> &String) -> BTreeMap<String, Vec<&'a T>> {
    let mut out: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    for it in items {
        out.entry(key(it).clone()).or_default().push(it);
    }
    out
}

/// A binary decision, or an abstention when `prediction` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryCase {
    pub prediction: Option<bool>,
    pub outcome: bool,
    pub group: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub abstained: usize,
}

impl Confusion {
    fn add(&mut self, c: &BinaryCase) {
        match (c.prediction, c.outcome) {
            (None, _) => self.abstained += 1,
            (Some(true), true) => self.tp += 1,
            (Some(true), false) => self.fp += 1,
            (Some(false), false) => self.tn += 1,
            (Some(false), true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.abstained
    }

    /// FP / (FP + TN); undefined without decided negatives.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// FN / (FN + TP); undefined without decided positives.
    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn abstention_rate(&self) -> Option<f64> {
        ratio(self.abstained, self.total())
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateBalance {
    pub groups: BTreeMap<String, Confusion>,
    pub overall: Confusion,
    /// Largest pairwise difference among defined group rates.
    pub fpr_gap: Option<f64>,
    pub fnr_gap: Option<f64>,
    pub abstention_gap: Option<f64>,
}

fn spread(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.len() < 2 {
        return None;
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

pub fn error_rate_balance(cases: &[BinaryCase]) -> ErrorRateBalance {
    let mut groups: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut overall = Confusion::default();
    for c in cases {
        groups.entry(c.group.clone()).or_default().add(c);
        overall.add(c);
    }
    ErrorRateBalance {
        fpr_gap: spread(groups.values().map(Confusion::fpr)),
        fnr_gap: spread(groups.values().map(Confusion::fnr)),
        abstention_gap: spread(groups.values().map(Confusion::abstention_rate)),
        groups,
        overall,
    }
}

/// The six PSA scale values as bins.
pub fn psa_scale_edges() -> Vec<f64> {
    (0..=6).map(|i| i as f64 + 0.5).collect()
}

/// `k` equal-width bins over [0, 1].
pub fn equal_width_edges(k: usize) -> Vec<f64> {
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean score in the bin.
    pub predicted: Option<f64>,
    pub observed: Option<f64>,
}

impl CalibrationBin {
    pub fn gap(&self) -> Option<f64> {
        Some((self.predicted? - self.observed?).abs())
    }
}

/// Mean score and observed rate per group per bin. Bins are `[lo, hi)`
/// except the last, which includes its upper edge. Empty bins are listed
/// with count 0.
pub fn calibration_table(cases: &[ScoredCase], edges: &[f64]) -> Result<Vec<CalibrationBin>, FairnessError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FairnessError::Bins("need at least two strictly increasing edges".into()));
    }
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let k = edges.len() - 1;
    let mut acc: BTreeMap<String, Vec<(usize, f64, usize)>> = BTreeMap::new();
    for c in cases {
        if !(c.score >= lo && c.score <= hi) {
            return Err(FairnessError::OutOfRange { score: c.score, lo, hi });
        }
        let b = edges[1..].partition_point(|&e| e <= c.score).min(k - 1);
        let row = acc.entry(c.group.clone()).or_insert_with(|| vec![(0, 0.0, 0); k]);
        row[b].0 += 1;
        row[b].1 += c.score;
        row[b].2 += usize::from(c.outcome);
    }
    let mut out = Vec::new();
    for (group, row) in acc {
        for (b, (n, sum, pos)) in row.into_iter().enumerate() {
            out.push(CalibrationBin {
                group: group.clone(),
                lower: edges[b],
                upper: edges[b + 1],
                count: n,
                predicted: (n > 0).then(|| sum / n as f64),
                observed: ratio(pos, n),
            });
        }
    }
    Ok(out)
}

/// Largest |predicted - observed| over bins holding at least `min_count`.
pub fn max_calibration_gap(bins: &[CalibrationBin], min_count: usize) -> Option<f64> {
    bins.iter().filter(|b| b.count >= min_count.max(1)).filter_map(CalibrationBin::gap).reduce(f64::max)
}

/// Input for a full audit: a score, the thresholded decision (absent for
/// abstentions), the outcome and the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCase {
    pub score: f64,
    pub prediction: Option<bool>,
    pub outcome: bool,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub count: usize,
    pub auc: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub abstention_rate: Option<f64>,
    pub max_calibration_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub groups: BTreeMap<String, GroupAudit>,
    pub calibration: Vec<CalibrationBin>,
    pub max_fpr_gap: Option<f64>,
    pub max_fnr_gap: Option<f64>,
    pub max_abstention_gap: Option<f64>,
    pub max_calibration_gap: Option<f64>,
    pub min_bin_count: usize,
}

pub fn audit(cases: &[AuditCase], edges: &[f64], min_bin_count: usize) -> Result<AuditReport, FairnessError> {
    if cases.is_empty() {
        return Err(FairnessError::Empty);
    }
    let scored: Vec<ScoredCase> = cases.iter().map(|c| ScoredCase::new(c.score, c.outcome, c.group.clone())).collect();
    let binary: Vec<BinaryCase> = cases
        .iter()
        .map(|c| BinaryCase { prediction: c.prediction, outcome: c.outcome, group: c.group.clone() })
        .collect();
    let aucs = group_auc(&scored);
    let balance = error_rate_balance(&binary);
    let calibration = calibration_table(&scored, edges)?;
    let groups = balance
        .groups
        .iter()
        .map(|(g, conf)| {
            let bins: Vec<CalibrationBin> = calibration.iter().filter(|b| &b.group == g).cloned().collect();
            (
                g.clone(),
                GroupAudit {
                    count: conf.total(),
                    auc: aucs.get(g).copied().flatten(),
                    fpr: conf.fpr(),
                    fnr: conf.fnr(),
                    abstention_rate: conf.abstention_rate(),
                    max_calibration_gap: max_calibration_gap(&bins, min_bin_count),
                },
            )
        })
        .collect();
    Ok(AuditReport {
        groups,
        max_fpr_gap: balance.fpr_gap,
        max_fnr_gap: balance.fnr_gap,
        max_abstention_gap: balance.abstention_gap,
        max_calibration_gap: max_calibration_gap(&calibration, min_bin_count),
        calibration,
        min_bin_count,
    })
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long-format table: one row per group metric and per calibration bin.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "metric", "bin_lower", "bin_upper", "count", "value"]).expect("in-memory write");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for (g, a) in &self.groups {
            for (metric, v) in [
                ("auc", a.auc),
                ("fpr", a.fpr),
                ("fnr", a.fnr),
                ("abstention_rate", a.abstention_rate),
                ("max_calibration_gap", a.max_calibration_gap),
            ] {
                w.write_record([g.as_str(), metric, "", "", &a.count.to_string(), &fmt(v)]).expect("in-memory write");
            }
        }
        for b in &self.calibration {
            let (lo, hi, n) = (b.lower.to_string(), b.upper.to_string(), b.count.to_string());
            w.write_record([b.group.as_str(), "predicted", &lo, &hi, &n, &fmt(b.predicted)]).expect("in-memory write");
            w.write_record([b.group.as_str(), "observed", &lo, &hi, &n, &fmt(b.observed)]).expect("in-memory write");
        }
        for (metric, v) in [
            ("max_fpr_gap", self.max_fpr_gap),
            ("max_fnr_gap", self.max_fnr_gap),
            ("max_abstention_gap", self.max_abstention_gap),
            ("max_calibration_gap", self.max_calibration_gap),
        ] {
            w.write_record(["*", metric, "", "", "", &fmt(v)]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// For ordinal scores (the PSA scale), where a bin's mean score is not a
    /// probability: the predicted value of each bin becomes the observed
    /// rate of all groups pooled in that bin, and the calibration gaps are
    /// recomputed. A gap then says how far a group sits from everyone else
    /// at the same score.
    pub fn calibrate_against_pooled(&mut self) {
        let mut pooled: BTreeMap<(u64, u64), (f64, usize)> = BTreeMap::new();
        for b in &self.calibration {
            let e = pooled.entry((b.lower.to_bits(), b.upper.to_bits())).or_insert((0.0, 0));
            e.0 += b.observed.unwrap_or(0.0) * b.count as f64;
            e.1 += b.count;
        }
        for b in &mut self.calibration {
            let (pos, n) = pooled[&(b.lower.to_bits(), b.upper.to_bits())];
            b.predicted = (b.count > 0).then(|| pos / n as f64);
        }
        for (g, a) in &mut self.groups {
            let bins: Vec<CalibrationBin> = self.calibration.iter().filter(|b| &b.group == g).cloned().collect();
            a.max_calibration_gap = max_calibration_gap(&bins, self.min_bin_count);
        }
        self.max_calibration_gap = max_calibration_gap(&self.calibration, self.min_bin_count);
    }
}

/// Separation of the binormal model reaching a given AUC:
/// `AUC = Phi(mu / sqrt 2)`.
pub fn binormal_mu(auc: f64) -> f64 {
    std::f64::consts::SQRT_2 * normal_quantile(auc)
}

/// Posterior probability of a positive at latent value `x`.
pub fn binormal_posterior(x: f64, mu: f64, base_rate: f64) -> f64 {
    let logit = (base_rate / (1.0 - base_rate)).ln() + mu * x - mu * mu / 2.0;
    1.0 / (1.0 + (-logit).exp())
}

/// Closed-form (FPR, FNR) of flagging posterior >= `threshold`.
pub fn binormal_error_rates(base_rate: f64, mu: f64, threshold: f64) -> (f64, f64) {
    let logit_t = (threshold / (1.0 - threshold)).ln();
    let x_t = (logit_t - (base_rate / (1.0 - base_rate)).ln() + mu * mu / 2.0) / mu;
    (1.0 - normal_cdf(x_t), normal_cdf(x_t - mu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinormalGroup {
    pub name: String,
    pub base_rate: f64,
    /// Target AUC; 1 means a perfect scorer.
    pub auc: f64,
    pub n: usize,
}

/// Draws `n` calibrated scores for one group. Positives number exactly
/// `round(n * base_rate)`.
pub fn draw_binormal<R: Rng>(group: &BinormalGroup, rng: &mut R) -> Vec<ScoredCase> {
    let positives = (group.n as f64 * group.base_rate).round() as usize;
    let perfect = group.auc >= 1.0;
    let mu = if perfect { 0.0 } else { binormal_mu(group.auc) };
    (0..group.n)
        .map(|i| {
            let y = i < positives;
            let score = if perfect {
                if y { 1.0 } else { 0.0 }
            } else {
                let z: f64 = StandardNormal.sample(rng);
                binormal_posterior(z + if y { mu } else { 0.0 }, mu, group.base_rate)
            };
            ScoredCase::new(score, y, group.name.clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSpec {
    pub groups: Vec<BinormalGroup>,
    /// Cases scoring at or above this are flagged high risk.
    pub threshold: f64,
    pub bins: usize,
    pub min_bin_count: usize,
    pub seed: u64,
}

impl TradeoffSpec {
    /// One binormal group per population group, at the group's FTA base
    /// rate and a common AUC.
    pub fn from_population(spec: &PopulationSpec, auc: f64, n_per_group: usize, threshold: f64) -> Self {
        Self {
            groups: spec
                .groups
                .iter()
                .map(|g| BinormalGroup { name: g.name.clone(), base_rate: g.fta.base_rate, auc, n: n_per_group })
                .collect(),
            threshold,
            bins: 10,
            min_bin_count: DEFAULT_MIN_BIN_COUNT,
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffGroup {
    pub name: String,
    pub base_rate: f64,
    pub n: usize,
    pub auc: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    /// Closed-form rates under the binormal model; absent for a perfect
    /// scorer.
    pub expected_fpr: Option<f64>,
    pub expected_fnr: Option<f64>,
    pub max_calibration_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub groups: Vec<TradeoffGroup>,
    pub fpr_gap: Option<f64>,
    pub fnr_gap: Option<f64>,
    /// Monte-Carlo standard deviation of the FPR gap.
    pub fpr_gap_sigma: Option<f64>,
    pub expected_fpr_gap: Option<f64>,
    pub max_calibration_gap: Option<f64>,
    pub notes: Vec<String>,
}

pub fn tradeoff_demo(spec: &TradeoffSpec) -> Result<TradeoffReport, FairnessError> {
    if spec.groups.len() < 2 {
        return Err(FairnessError::Config("need at least two groups".into()));
    }
    if !(spec.threshold > 0.0 && spec.threshold < 1.0) {
        return Err(FairnessError::Config("threshold must be in (0, 1)".into()));
    }
    let names: BTreeSet<&str> = spec.groups.iter().map(|g| g.name.as_str()).collect();
    if names.len() != spec.groups.len() {
        return Err(FairnessError::Config("group names must be distinct".into()));
    }
    for g in &spec.groups {
        if !(g.base_rate > 0.0 && g.base_rate < 1.0) || !(g.auc > 0.5 && g.auc <= 1.0) || g.n == 0 {
            return Err(FairnessError::Config(format!(
                "group {}: need base rate in (0, 1), AUC in (0.5, 1] and n > 0",
                g.name
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = equal_width_edges(spec.bins.max(1));
    let mut groups = Vec::new();
    let mut variances = Vec::new();
    let mut all_bins = Vec::new();
    for g in &spec.groups {
        let cases = draw_binormal(g, &mut rng);
        let binary: Vec<BinaryCase> = cases
            .iter()
            .map(|c| BinaryCase { prediction: Some(c.score >= spec.threshold), outcome: c.outcome, group: g.name.clone() })
            .collect();
        let conf = error_rate_balance(&binary).overall;
        let bins = calibration_table(&cases, &edges)?;
        let (expected_fpr, expected_fnr) = if g.auc >= 1.0 {
            (None, None)
        } else {
            let (f, n) = binormal_error_rates(g.base_rate, binormal_mu(g.auc), spec.threshold);
            (Some(f), Some(n))
        };
        if let Some(f) = conf.fpr() {
            variances.push(f * (1.0 - f) / (conf.fp + conf.tn) as f64);
        }
        groups.push(TradeoffGroup {
            name: g.name.clone(),
            base_rate: g.base_rate,
            n: g.n,
            auc: auc(&cases).ok(),
            fpr: conf.fpr(),
            fnr: conf.fnr(),
            expected_fpr,
            expected_fnr,
            max_calibration_gap: max_calibration_gap(&bins, spec.min_bin_count),
        });
        all_bins.extend(bins);
    }
    let mut notes = Vec::new();
    if spec.groups.iter().any(|g| g.auc >= 1.0) {
        notes.push("a perfect scorer is both calibrated and balanced; the tradeoff needs an imperfect scorer".into());
    }
    let rates: BTreeSet<u64> = spec.groups.iter().map(|g| g.base_rate.to_bits()).collect();
    if rates.len() == 1 {
        notes.push("equal base rates: any error-rate gap is sampling noise".into());
    }
    // Only pairwise gaps between two groups have a simple variance; with
    // more groups the sigma covers the two extremes.
    let fpr_gap = spread(groups.iter().map(|g| g.fpr));
    let sigma = fpr_extremes(&groups).map(|(a, b)| (variances[a] + variances[b]).sqrt());
    Ok(TradeoffReport {
        fpr_gap,
        fnr_gap: spread(groups.iter().map(|g| g.fnr)),
        fpr_gap_sigma: sigma,
        expected_fpr_gap: spread(groups.iter().map(|g| g.expected_fpr)),
        max_calibration_gap: max_calibration_gap(&all_bins, spec.min_bin_count),
        groups,
        notes,
    })
}

fn fpr_extremes(groups: &[TradeoffGroup]) -> Option<(usize, usize)> {
    let defined: Vec<(usize, f64)> = groups.iter().enumerate().filter_map(|(i, g)| g.fpr.map(|f| (i, f))).collect();
    if defined.len() < 2 || defined.len() != groups.len() {
        return None;
    }
    let max = defined.iter().max_by(|a, b| a.1.total_cmp(&b.1))?.0;
    let min = defined.iter().min_by(|a, b| a.1.total_cmp(&b.1))?.0;
    Some((max, min))
}
