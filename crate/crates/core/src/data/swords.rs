//! SWORDS release JSON.
//!
//! The release maps ids to objects under four top-level keys: `contexts`
//! (`{context}`), `targets` (`{context_id, target, offset, pos}`),
//! `substitutes` (`{target_id, substitute}`) and `substitute_labels`
//! (id → list of annotator labels). A substitute's score is the fraction of
//! its labels that start with `TRUE`.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{merge_duplicates, ConversionStats, GoldSubstitute, Pos, SubstitutionInstance, Target};
use crate::error::{Error, Result};

fn section<'a>(root: &'a Value, key: &str) -> Result<&'a Map<String, Value>> {
    root.get(key)
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Conversion(format!("missing top-level object {key:?}")))
}

fn field<'a>(obj: &'a Value, owner: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Conversion(format!("{owner}: missing field {key:?}")))
}

fn str_field<'a>(obj: &'a Value, owner: &str, key: &str) -> Result<&'a str> {
    field(obj, owner, key)?
        .as_str()
        .ok_or_else(|| Error::Conversion(format!("{owner}: field {key:?} is not a string")))
}

fn label_score(labels: &Value, owner: &str) -> Result<f64> {
    let labels = labels
        .as_array()
        .ok_or_else(|| Error::Conversion(format!("{owner}: labels are not a list")))?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut positive = 0usize;
    for label in labels {
        let label = label
            .as_str()
            .ok_or_else(|| Error::Conversion(format!("{owner}: label is not a string")))?;
        if label.starts_with("TRUE") {
            positive += 1;
        }
    }
    Ok(positive as f64 / labels.len() as f64)
}

/// One record per target, in target-id order. Candidates are every listed
/// substitute; gold keeps those with a positive score.
pub fn convert_swords(json: &str) -> Result<(Vec<SubstitutionInstance>, ConversionStats)> {
    let root: Value =
        serde_json::from_str(json).map_err(|e| Error::Conversion(format!("invalid JSON: {e}")))?;
    let contexts = section(&root, "contexts")?;
    let targets = section(&root, "targets")?;
    let substitutes = section(&root, "substitutes")?;
    let labels = section(&root, "substitute_labels")?;

    let mut by_target: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for (sid, sub) in substitutes {
        let owner = format!("substitute {sid}");
        let target_id = str_field(sub, &owner, "target_id")?;
        let text = str_field(sub, &owner, "substitute")?;
        let sub_labels = labels
            .get(sid)
            .ok_or_else(|| Error::Conversion(format!("{owner}: no entry in substitute_labels")))?;
        let score = label_score(sub_labels, &owner)?;
        by_target
            .entry(target_id)
            .or_default()
            .push((text.to_string(), score));
    }

    let mut stats = ConversionStats::default();
    let mut records = Vec::with_capacity(targets.len());
    for (tid, target) in targets {
        let owner = format!("target {tid}");
        let context_id = str_field(target, &owner, "context_id")?;
        let word = str_field(target, &owner, "target")?;
        let offset = field(target, &owner, "offset")?
            .as_u64()
            .ok_or_else(|| Error::Conversion(format!("{owner}: offset is not an integer")))?
            as usize;
        let pos: Pos = str_field(target, &owner, "pos")?
            .parse()
            .map_err(|e| Error::Conversion(format!("{owner}: {e}")))?;
        let context = contexts
            .get(context_id)
            .ok_or_else(|| Error::Conversion(format!("{owner}: unknown context {context_id}")))?;
        let sentence = str_field(context, &format!("context {context_id}"), "context")?;

        let char_end = offset + word.chars().count();
        let found: String = sentence
            .chars()
            .skip(offset)
            .take(char_end - offset)
            .collect();
        if found != word {
            return Err(Error::Conversion(format!(
                "{owner}: context has {found:?} at offset {offset}, expected {word:?}"
            )));
        }

        let subs = by_target.remove(tid.as_str()).unwrap_or_default();
        let mut candidates: Vec<String> = Vec::with_capacity(subs.len());
        for (text, _) in &subs {
            if !candidates.contains(text) {
                candidates.push(text.clone());
            }
        }
        let gold = merge_duplicates(
            subs.into_iter()
                .filter(|(_, score)| *score > 0.0)
                .map(|(sub, weight)| GoldSubstitute { sub, weight })
                .collect(),
            &mut stats,
        );
        if candidates.is_empty() {
            return Err(Error::Conversion(format!("{owner}: no substitutes")));
        }
        if gold.is_empty() {
            stats.without_positive_gold += 1;
        }
        records.push(SubstitutionInstance {
            id: tid.clone(),
            sentence: sentence.to_string(),
            target: Target {
                char_start: offset,
                char_end,
                lemma: word.to_lowercase(),
                pos,
            },
            candidates,
            gold,
        });
    }
    if let Some(orphan) = by_target.keys().next() {
        return Err(Error::Conversion(format!(
            "substitutes reference unknown target {orphan}"
        )));
    }
    stats.records = records.len();
    Ok((records, stats))
}
