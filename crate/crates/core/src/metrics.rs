//! Generalized Average Precision with weighted gold annotations.
//!
//! For a ranked list with gold weights `c_i` (0 for non-gold items),
//!
//! ```text
//! GAP = Σ_i I(c_i) P_i / Σ_j ḡ_j,   P_i = (1/i) Σ_{k≤i} c_k
//! ```
//!
//! where `ḡ_j` is the mean of the `j` largest gold weights. GAP is generic
//! over the weight type, so it can be evaluated exactly over rationals.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::data::SubstitutionInstance;
use crate::error::{Error, Result};
use crate::scorer::{RankingRecord, MULTIWORD_REASON};

/// Numeric type usable as a gold weight.
pub trait Weight: Num + Copy + PartialOrd + FromPrimitive {}

impl<W: Num + Copy + PartialOrd + FromPrimitive> Weight for W {}

/// Multiword iff internal whitespace remains after trimming.
pub fn is_multiword(item: &str) -> bool {
    item.trim().chars().any(char::is_whitespace)
}

/// Split `items` into (single-word, multiword), both in input order.
pub fn filter_multiword<S: AsRef<str> + Clone>(items: &[S]) -> (Vec<S>, Vec<S>) {
    items
        .iter()
        .cloned()
        .partition(|s| !is_multiword(s.as_ref()))
}

/// Gold substitutes with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSet<T> {
    entries: BTreeMap<String, T>,
}

impl<T: Weight> GoldSet<T> {
    /// Duplicate candidates have their weights summed.
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, T)>) -> Result<Self> {
        let mut map: BTreeMap<String, T> = BTreeMap::new();
        for (sub, weight) in entries {
            let sub = sub.into();
            // Also rejects NaN.
            if weight.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Input(format!(
                    "gold weight for {sub:?} must be positive"
                )));
            }
            let slot = map.entry(sub).or_insert_with(T::zero);
            *slot = *slot + weight;
        }
        Ok(GoldSet { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, candidate: &str) -> Option<T> {
        self.entries.get(candidate).copied()
    }

    /// Weight descending, ties by ascending candidate.
    pub fn sorted(&self) -> Vec<(&str, T)> {
        let mut v: Vec<(&str, T)> = self.entries.iter().map(|(k, &w)| (k.as_str(), w)).collect();
        // BTreeMap order is already lexicographic; a stable sort keeps it for ties.
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        v
    }
}

/// GAP of `ranked` against `gold`. Empty gold or an empty ranking is a
/// degenerate input; callers count such instances as skipped.
pub fn gap<T: Weight, S: AsRef<str>>(ranked: &[S], gold: &GoldSet<T>) -> Result<T> {
    if gold.is_empty() {
        return Err(Error::Degenerate("empty gold set".into()));
    }
    if ranked.is_empty() {
        return Err(Error::Degenerate("empty ranking".into()));
    }
    let mut numerator = T::zero();
    let mut cumulative = T::zero();
    for (i, candidate) in ranked.iter().enumerate() {
        let c = gold.weight(candidate.as_ref()).unwrap_or_else(T::zero);
        cumulative = cumulative + c;
        if c > T::zero() {
            numerator = numerator + cumulative / rank_of::<T>(i + 1);
        }
    }
    let mut denominator = T::zero();
    let mut cumulative = T::zero();
    for (j, (_, w)) in gold.sorted().into_iter().enumerate() {
        cumulative = cumulative + w;
        denominator = denominator + cumulative / rank_of::<T>(j + 1);
    }
    Ok(numerator / denominator)
}

fn rank_of<T: Weight>(i: usize) -> T {
    T::from_usize(i).expect("rank is representable")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGap {
    pub id: String,
    /// `None` when the instance was skipped.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Mean over included instances, as a fraction in `[0, 1]`.
    pub mean_gap: f64,
    pub n_instances: usize,
    pub n_skipped: usize,
    pub n_excluded_gold_multiword: usize,
    pub n_excluded_candidate_multiword: usize,
    pub per_instance: Vec<InstanceGap>,
}

impl GapReport {
    pub fn percent(&self) -> f64 {
        self.mean_gap * 100.0
    }

    /// Percentage with one decimal, e.g. `86.7`.
    pub fn percent_display(&self) -> String {
        format!("{:.1}", self.percent())
    }
}

/// Arithmetic mean over the non-skipped instances.
pub fn mean_gap(
    per_instance: Vec<InstanceGap>,
    n_excluded_gold_multiword: usize,
    n_excluded_candidate_multiword: usize,
) -> Result<GapReport> {
    let included: Vec<f64> = per_instance.iter().filter_map(|g| g.gap).collect();
    if included.is_empty() {
        return Err(Error::Aggregation("every instance was skipped".into()));
    }
    Ok(GapReport {
        mean_gap: included.iter().sum::<f64>() / included.len() as f64,
        n_instances: included.len(),
        n_skipped: per_instance.len() - included.len(),
        n_excluded_gold_multiword,
        n_excluded_candidate_multiword,
        per_instance,
    })
}

/// Score rankings against the gold annotations of a canonical corpus.
///
/// Ranking ids absent from the gold corpus are always an error; gold ids
/// without a ranking are an error unless `allow_missing`, in which case they
/// count as skipped.
pub fn evaluate(
    rankings: &[RankingRecord],
    gold: &[SubstitutionInstance],
    allow_missing: bool,
) -> Result<GapReport> {
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let orphans: Vec<&str> = rankings
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| !gold_ids.contains(id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Input(format!(
            "ranking ids missing from the gold file: {}",
            orphans.join(", ")
        )));
    }
    let by_id: HashMap<&str, &RankingRecord> =
        rankings.iter().map(|r| (r.id.as_str(), r)).collect();
    if !allow_missing {
        let missing: Vec<&str> = gold
            .iter()
            .map(|g| g.id.as_str())
            .filter(|id| !by_id.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Input(format!(
                "gold ids without a ranking: {}",
                missing.join(", ")
            )));
        }
    }

    let mut excluded_gold = 0;
    let mut excluded_candidates = 0;
    let mut per_instance = Vec::with_capacity(gold.len());
    for instance in gold {
        let (kept, dropped): (Vec<_>, Vec<_>) =
            instance.gold.iter().partition(|g| !is_multiword(&g.sub));
        excluded_gold += dropped.len();
        let gold_set = GoldSet::new(kept.iter().map(|g| (g.sub.clone(), g.weight)))?;

        let gap_value = match by_id.get(instance.id.as_str()) {
            None => None,
            Some(record) => {
                excluded_candidates += record
                    .excluded
                    .iter()
                    .filter(|e| e.reason == MULTIWORD_REASON)
                    .count();
                let (ranked, multi) = filter_multiword(
                    &record
                        .ranked
                        .iter()
                        .map(|r| r.candidate.as_str())
                        .collect::<Vec<_>>(),
                );
                excluded_candidates += multi.len();
                match gap(&ranked, &gold_set) {
                    Ok(v) => Some(v),
                    Err(Error::Degenerate(_)) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        per_instance.push(InstanceGap {
            id: instance.id.clone(),
            gap: gap_value,
        });
    }
    mean_gap(per_instance, excluded_gold, excluded_candidates)
}
