use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{CaseRecord, FeatureMap, FeatureValue};
use crate::stats::{wilson_interval, Z95};

use super::{Condition, FeatureKindSpec, HandoffTree, LeafStats, RiskLabel, TreeError, TreeNode};

/// Constraint a region places on one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionBound {
    /// `lower < x <= upper`; a missing end is unbounded.
    Interval { lower: Option<f64>, upper: Option<f64> },
    Levels { levels: Vec<String> },
}

/// Conjunction of per-feature constraints describing a leaf.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: BTreeMap<String, RegionBound>,
}

impl Region {
    pub fn contains(&self, features: &FeatureMap) -> bool {
        self.bounds.iter().all(|(name, bound)| match (bound, features.get(name)) {
            (RegionBound::Interval { lower, upper }, Some(FeatureValue::Numeric(x))) => {
                lower.is_none_or(|l| *x > l) && upper.is_none_or(|u| *x <= u)
            }
            (RegionBound::Levels { levels }, Some(FeatureValue::Categorical(v))) => levels.contains(v),
            _ => false,
        })
    }

    /// Whether the region contains every point of the box described by
    /// numeric intervals `lower < x <= upper` and categorical level sets.
    pub fn covers(&self, other: &Region) -> bool {
        self.bounds.iter().all(|(name, bound)| match (bound, other.bounds.get(name)) {
            (RegionBound::Interval { lower, upper }, Some(RegionBound::Interval { lower: ol, upper: ou })) => {
                let lower_ok = match (lower, ol) {
                    (None, _) => true,
                    (Some(_), None) => false,
                    (Some(l), Some(o)) => o >= l,
                };
                let upper_ok = match (upper, ou) {
                    (None, _) => true,
                    (Some(_), None) => false,
                    (Some(u), Some(o)) => o <= u,
                };
                lower_ok && upper_ok
            }
            (RegionBound::Levels { levels }, Some(RegionBound::Levels { levels: o })) => {
                o.iter().all(|l| levels.contains(l))
            }
            _ => false,
        })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bounds.is_empty() {
            return f.write_str("all cases");
        }
        let parts: Vec<String> = self
            .bounds
            .iter()
            .map(|(name, b)| match b {
                RegionBound::Interval { lower: Some(l), upper: Some(u) } => format!("{l} < {name} <= {u}"),
                RegionBound::Interval { lower: Some(l), upper: None } => format!("{name} > {l}"),
                RegionBound::Interval { lower: None, upper: Some(u) } => format!("{name} <= {u}"),
                RegionBound::Interval { lower: None, upper: None } => format!("{name} any"),
                RegionBound::Levels { levels } => format!("{name} in {{{}}}", levels.join(", ")),
            })
            .collect();
        f.write_str(&parts.join(" and "))
    }
}

/// One row of the leaf table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRow {
    #[serde(flatten)]
    pub stats: LeafStats,
    pub region: Region,
    pub description: String,
}

/// Training versus holdout rate for one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafValidation {
    pub leaf_id: usize,
    pub label: RiskLabel,
    pub train_n: usize,
    pub train_p: f64,
    pub holdout_n: usize,
    pub holdout_k: usize,
    pub holdout_p: Option<f64>,
    pub gap: Option<f64>,
    /// The Wilson 95% intervals of the training and holdout rates do not
    /// overlap.
    pub flagged: bool,
}

impl HandoffTree {
    /// Every leaf with the region of feature space that reaches it.
    pub fn leaf_table(&self) -> Vec<LeafRow> {
        let mut out = Vec::new();
        let mut region = Region::default();
        for f in &self.features {
            let bound = match &f.kind {
                FeatureKindSpec::Numeric => RegionBound::Interval { lower: None, upper: None },
                FeatureKindSpec::Categorical { levels } => RegionBound::Levels { levels: levels.clone() },
            };
            region.bounds.insert(f.name.clone(), bound);
        }
        walk(&self.root, &mut region, &mut out);
        for row in &mut out {
            row.region.bounds.retain(|_, b| !matches!(b, RegionBound::Interval { lower: None, upper: None }));
            let full: BTreeMap<&str, &Vec<String>> = self
                .features
                .iter()
                .filter_map(|f| match &f.kind {
                    FeatureKindSpec::Categorical { levels } => Some((f.name.as_str(), levels)),
                    _ => None,
                })
                .collect();
            let mut shown = row.region.clone();
            shown.bounds.retain(|name, b| match b {
                RegionBound::Levels { levels } => full.get(name.as_str()).is_none_or(|all| *all != levels),
                _ => true,
            });
            row.description = shown.to_string();
        }
        out
    }

    /// Routes `holdout` through the tree and compares each leaf's holdout
    /// rate with its training rate.
    pub fn validate_rates(&self, holdout: &[CaseRecord]) -> Result<Vec<LeafValidation>, TreeError> {
        let target = self.config.target;
        let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for r in holdout {
            let y = match (r.released, r.outcomes.get(target)) {
                (true, Some(y)) => y,
                _ => {
                    return Err(TreeError::NotTrainingEligible {
                        case_id: r.case_id.clone(),
                        reason: "holdout records must be released with an observed outcome".into(),
                    })
                }
            };
            let pred = self.predict(&r.model_features(self.config.include_protected))?;
            let e = counts.entry(pred.leaf_id).or_default();
            e.0 += 1;
            e.1 += usize::from(y);
        }
        Ok(self
            .leaves()
            .into_iter()
            .map(|leaf| {
                let (hn, hk) = counts.get(&leaf.leaf_id).copied().unwrap_or((0, 0));
                let holdout_p = (hn > 0).then(|| hk as f64 / hn as f64);
                let flagged = match (wilson_interval(leaf.k, leaf.n, Z95), wilson_interval(hk, hn, Z95)) {
                    (Some((tl, th)), Some((hl, hh))) => th < hl || hh < tl,
                    _ => false,
                };
                LeafValidation {
                    leaf_id: leaf.leaf_id,
                    label: leaf.label,
                    train_n: leaf.n,
                    train_p: leaf.positive_rate,
                    holdout_n: hn,
                    holdout_k: hk,
                    holdout_p,
                    gap: holdout_p.map(|p| (p - leaf.positive_rate).abs()),
                    flagged,
                }
            })
            .collect())
    }
}

fn walk(node: &TreeNode, region: &mut Region, out: &mut Vec<LeafRow>) {
    match node {
        TreeNode::Leaf(stats) => out.push(LeafRow { stats: stats.clone(), region: region.clone(), description: String::new() }),
        TreeNode::Split { feature, condition, left, right, .. } => {
            let saved = region.bounds.get(feature).cloned();
            let (l, r) = narrow(saved.as_ref(), condition);
            region.bounds.insert(feature.clone(), l);
            walk(left, region, out);
            region.bounds.insert(feature.clone(), r);
            walk(right, region, out);
            match saved {
                Some(b) => region.bounds.insert(feature.clone(), b),
                None => region.bounds.remove(feature),
            };
        }
    }
}

fn narrow(current: Option<&RegionBound>, condition: &Condition) -> (RegionBound, RegionBound) {
    match condition {
        Condition::AtMost { threshold } => {
            let (lower, upper) = match current {
                Some(RegionBound::Interval { lower, upper }) => (*lower, *upper),
                _ => (None, None),
            };
            let t = *threshold;
            (
                RegionBound::Interval { lower, upper: Some(upper.map_or(t, |u| u.min(t))) },
                RegionBound::Interval { lower: Some(lower.map_or(t, |l| l.max(t))), upper },
            )
        }
        Condition::InSet { levels } => {
            let all = match current {
                Some(RegionBound::Levels { levels }) => levels.clone(),
                _ => levels.clone(),
            };
            let (inside, outside): (Vec<String>, Vec<String>) = all.into_iter().partition(|l| levels.contains(l));
            (RegionBound::Levels { levels: inside }, RegionBound::Levels { levels: outside })
        }
    }
}
