use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::data::{CaseRecord, FeatureValue};
use crate::stats::gini;

use super::{
    label_cluster, Condition, FeatureKindSpec, FeatureSpec, HandoffTree, LeafStats, TreeConfig, TreeError, TreeNode,
    TREE_FORMAT,
};

const MIN_GAIN: f64 = 1e-12;

pub(super) fn fit(records: &[CaseRecord], config: &TreeConfig) -> Result<HandoffTree, TreeError> {
    fit_restricted(records, config, None)
}

/// Fits using only the features in `allowed` (all features when `None`).
pub(crate) fn fit_restricted(
    records: &[CaseRecord],
    config: &TreeConfig,
    allowed: Option<&BTreeSet<String>>,
) -> Result<HandoffTree, TreeError> {
    config.validate()?;
    let target = config.target;
    for r in records {
        if !r.released {
            return Err(TreeError::NotTrainingEligible {
                case_id: r.case_id.clone(),
                reason: "released=false; outcomes of detained defendants are unobservable".into(),
            });
        }
        if r.outcomes.get(target).is_none() {
            return Err(TreeError::NotTrainingEligible {
                case_id: r.case_id.clone(),
                reason: format!("{target} outcome missing"),
            });
        }
    }
    let need = 2 * config.min_cluster_size;
    if records.len() < need {
        return Err(TreeError::TooFewRecords { got: records.len(), need });
    }
    let mut sorted: Vec<&CaseRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut seen = HashSet::new();
    for r in &sorted {
        if !seen.insert(r.case_id.as_str()) {
            return Err(TreeError::DuplicateCaseId(r.case_id.clone()));
        }
    }
    fit_sorted(&sorted, config, allowed)
}

/// Fits on records already in canonical order. Duplicate ids are allowed
/// here so bootstrap samples can reuse this path.
pub(crate) fn fit_sorted(
    sorted: &[&CaseRecord],
    config: &TreeConfig,
    allowed: Option<&BTreeSet<String>>,
) -> Result<HandoffTree, TreeError> {
    let maps: Vec<_> = sorted.iter().map(|r| r.model_features(config.include_protected)).collect();
    let labels: Vec<bool> = sorted.iter().map(|r| r.outcomes.get(config.target).unwrap_or(false)).collect();

    let mut names: BTreeSet<String> = BTreeSet::new();
    for m in &maps {
        names.extend(m.keys().cloned());
    }
    if let Some(allowed) = allowed {
        names.retain(|n| allowed.contains(n));
    }
    if names.is_empty() {
        return Err(TreeError::NoUsableFeatures);
    }

    let mut specs = Vec::new();
    let mut columns = Vec::new();
    for name in &names {
        let first = maps[0].get(name);
        let column = match first {
            Some(FeatureValue::Numeric(_)) => {
                let mut xs = Vec::with_capacity(maps.len());
                for (m, r) in maps.iter().zip(sorted) {
                    match m.get(name) {
                        Some(FeatureValue::Numeric(x)) if x.is_finite() => xs.push(*x),
                        other => return Err(mixed(name, &r.case_id, other, "a finite number")),
                    }
                }
                specs.push(FeatureSpec { name: name.clone(), kind: FeatureKindSpec::Numeric });
                Column::Numeric(xs)
            }
            Some(FeatureValue::Categorical(_)) | None => {
                let mut vals = Vec::with_capacity(maps.len());
                for (m, r) in maps.iter().zip(sorted) {
                    match m.get(name) {
                        Some(FeatureValue::Categorical(s)) => vals.push(s.clone()),
                        other => return Err(mixed(name, &r.case_id, other, "a category")),
                    }
                }
                let levels: Vec<String> = vals.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                let codes = vals.iter().map(|v| index[v.as_str()]).collect();
                specs.push(FeatureSpec {
                    name: name.clone(),
                    kind: FeatureKindSpec::Categorical { levels: levels.clone() },
                });
                Column::Categorical { codes, levels }
            }
        };
        columns.push(column);
    }

    let mut builder = Builder {
        config,
        names: names.into_iter().collect(),
        columns,
        labels,
        total: sorted.len(),
        next_leaf: 0,
    };
    let all: Vec<usize> = (0..sorted.len()).collect();
    let root = builder.grow(&all, 0);
    Ok(HandoffTree {
        format: TREE_FORMAT.to_string(),
        config: config.clone(),
        features: specs,
        training_size: sorted.len(),
        root,
    })
}

fn mixed(name: &str, case_id: &str, got: Option<&FeatureValue>, want: &str) -> TreeError {
    TreeError::Feature {
        feature: name.to_string(),
        message: match got {
            None => format!("missing in case {case_id}"),
            Some(v) => format!("case {case_id} has {v:?}, expected {want}"),
        },
    }
}

enum Column {
    Numeric(Vec<f64>),
    Categorical { codes: Vec<usize>, levels: Vec<String> },
}

struct Candidate {
    feature: usize,
    decrease: f64,
    condition: Condition,
    /// Sort key for equal decreases within one feature.
    threshold_key: f64,
}

struct Builder<'a> {
    config: &'a TreeConfig,
    names: Vec<String>,
    columns: Vec<Column>,
    labels: Vec<bool>,
    total: usize,
    next_leaf: usize,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &[usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let k = idx.iter().filter(|&&i| self.labels[i]).count();
        let stop = depth >= self.config.max_depth || n < 2 * self.config.min_cluster_size || k == 0 || k == n;
        if !stop {
            if let Some(c) = self.best_split(idx, n, k) {
                let weighted = n as f64 / self.total as f64 * c.decrease;
                if weighted >= self.config.min_impurity_decrease {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.goes_left(c.feature, &c.condition, i));
                    let left = Box::new(self.grow(&l, depth + 1));
                    let right = Box::new(self.grow(&r, depth + 1));
                    return TreeNode::Split {
                        feature: self.names[c.feature].clone(),
                        condition: c.condition,
                        n,
                        k,
                        impurity_decrease: weighted,
                        left,
                        right,
                    };
                }
            }
        }
        let c = self.config;
        let (label, error_rate) = label_cluster(k, n, c.min_cluster_size, c.high_risk_max_fpr, c.very_low_max_fnr);
        let leaf_id = self.next_leaf;
        self.next_leaf += 1;
        TreeNode::Leaf(LeafStats {
            leaf_id,
            n,
            k,
            positive_rate: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            label,
            error_rate,
        })
    }

    fn goes_left(&self, feature: usize, condition: &Condition, i: usize) -> bool {
        match (&self.columns[feature], condition) {
            (Column::Numeric(xs), Condition::AtMost { threshold }) => xs[i] <= *threshold,
            (Column::Categorical { codes, levels }, Condition::InSet { levels: set }) => {
                set.iter().any(|l| *l == levels[codes[i]])
            }
            _ => unreachable!("condition kind matches column kind"),
        }
    }

    fn best_split(&self, idx: &[usize], n: usize, k: usize) -> Option<Candidate> {
        let parent = gini(k, n);
        let mut cands: Vec<Candidate> = (0..self.columns.len())
            .filter_map(|f| match &self.columns[f] {
                Column::Numeric(xs) => numeric_split(f, xs, &self.labels, idx, parent),
                Column::Categorical { codes, levels } => categorical_split(f, codes, levels, &self.labels, idx, parent),
            })
            .filter(|c| c.decrease > MIN_GAIN)
            .collect();
        if cands.is_empty() {
            return None;
        }
        let best = cands.iter().map(|c| c.decrease).fold(f64::NEG_INFINITY, f64::max);
        let priority = |c: &Candidate| self.config.feature_priority.iter().position(|p| *p == self.names[c.feature]);
        let eps = self.config.impurity_tie_epsilon;
        let preferred = cands
            .iter()
            .enumerate()
            .filter(|(_, c)| c.decrease >= best - eps)
            .filter_map(|(i, c)| priority(c).map(|p| (p, i)))
            .min();
        if let Some((_, i)) = preferred {
            return Some(cands.swap_remove(i));
        }
        cands.sort_by(|a, b| {
            b.decrease
                .partial_cmp(&a.decrease)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.names[a.feature].cmp(&self.names[b.feature]))
                .then_with(|| a.threshold_key.partial_cmp(&b.threshold_key).unwrap_or(Ordering::Equal))
        });
        Some(cands.swap_remove(0))
    }
}

fn decrease(parent: f64, kl: usize, nl: usize, kr: usize, nr: usize) -> f64 {
    let n = (nl + nr) as f64;
    parent - nl as f64 / n * gini(kl, nl) - nr as f64 / n * gini(kr, nr)
}

fn numeric_split(f: usize, xs: &[f64], labels: &[bool], idx: &[usize], parent: f64) -> Option<Candidate> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let n = order.len();
    let k = order.iter().filter(|&&i| labels[i]).count();
    let mut best: Option<(f64, f64)> = None;
    let (mut nl, mut kl) = (0, 0);
    for w in 0..n.saturating_sub(1) {
        let i = order[w];
        nl += 1;
        kl += usize::from(labels[i]);
        let (a, b) = (xs[i], xs[order[w + 1]]);
        if a == b {
            continue;
        }
        let d = decrease(parent, kl, nl, k - kl, n - nl);
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, a + (b - a) / 2.0));
        }
    }
    best.map(|(decrease, threshold)| Candidate {
        feature: f,
        decrease,
        condition: Condition::AtMost { threshold },
        threshold_key: threshold,
    })
}

fn categorical_split(
    f: usize,
    codes: &[usize],
    levels: &[String],
    labels: &[bool],
    idx: &[usize],
    parent: f64,
) -> Option<Candidate> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &i in idx {
        let e = counts.entry(codes[i]).or_default();
        e.0 += 1;
        e.1 += usize::from(labels[i]);
    }
    if counts.len() < 2 {
        return None;
    }
    // Ordering levels by positive rate makes the best prefix the best
    // binary partition for a two-class Gini criterion.
    let mut ordered: Vec<(usize, usize, usize)> = counts.into_iter().map(|(c, (n, k))| (c, n, k)).collect();
    ordered.sort_by(|a, b| {
        let ra = a.2 as f64 / a.1 as f64;
        let rb = b.2 as f64 / b.1 as f64;
        ra.partial_cmp(&rb).unwrap_or(Ordering::Equal).then_with(|| levels[a.0].cmp(&levels[b.0]))
    });
    let n: usize = ordered.iter().map(|o| o.1).sum();
    let k: usize = ordered.iter().map(|o| o.2).sum();
    let mut best: Option<(f64, usize)> = None;
    let (mut nl, mut kl) = (0, 0);
    for (w, o) in ordered[..ordered.len() - 1].iter().enumerate() {
        nl += o.1;
        kl += o.2;
        let d = decrease(parent, kl, nl, k - kl, n - nl);
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, w + 1));
        }
    }
    best.map(|(decrease, cut)| {
        let mut set: Vec<String> = ordered[..cut].iter().map(|o| levels[o.0].clone()).collect();
        set.sort();
        Candidate { feature: f, decrease, condition: Condition::InSet { levels: set }, threshold_key: cut as f64 }
    })
}
