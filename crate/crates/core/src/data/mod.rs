//! Canonical instance format, dataset converters and candidate pooling.
//!
//! The canonical file is UTF-8 JSONL with one [`SubstitutionInstance`] per
//! line; unknown fields are rejected. Character offsets count Unicode scalar
//! values.

mod ls07;
mod swords;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::is_word_span;

pub use ls07::{convert_ls07, parse_ls07_gold, parse_ls07_sentences, Ls07Sentence};
pub use swords::convert_swords;
pub use synthetic::synthetic_corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    #[serde(rename = "n")]
    Noun,
    #[serde(rename = "v")]
    Verb,
    #[serde(rename = "a")]
    Adjective,
    #[serde(rename = "r")]
    Adverb,
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "NOUN" => Ok(Pos::Noun),
            "v" | "VERB" => Ok(Pos::Verb),
            "a" | "ADJ" => Ok(Pos::Adjective),
            "r" | "ADV" => Ok(Pos::Adverb),
            other => Err(Error::Input(format!("unknown part of speech {other:?}"))),
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "n",
            Pos::Verb => "v",
            Pos::Adjective => "a",
            Pos::Adverb => "r",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub char_start: usize,
    pub char_end: usize,
    pub lemma: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldSubstitute {
    pub sub: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstitutionInstance {
    pub id: String,
    pub sentence: String,
    pub target: Target,
    pub candidates: Vec<String>,
    pub gold: Vec<GoldSubstitute>,
}

impl SubstitutionInstance {
    pub fn target_surface(&self) -> String {
        self.sentence
            .chars()
            .skip(self.target.char_start)
            .take(self.target.char_end.saturating_sub(self.target.char_start))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        let Target {
            char_start,
            char_end,
            ..
        } = self.target;
        if !is_word_span(&self.sentence, char_start, char_end) {
            return Err(fail(format!(
                "target span {char_start}..{char_end} does not index a word of the sentence"
            )));
        }
        if self.candidates.is_empty() {
            return Err(fail("no candidates".into()));
        }
        if let Some(g) = self
            .gold
            .iter()
            .find(|g| !(g.weight > 0.0 && g.weight.is_finite()))
        {
            return Err(fail(format!(
                "gold weight for {:?} must be positive",
                g.sub
            )));
        }
        let candidates: BTreeSet<&str> = self.candidates.iter().map(String::as_str).collect();
        if let Some(g) = self
            .gold
            .iter()
            .find(|g| !candidates.contains(g.sub.as_str()))
        {
            return Err(fail(format!(
                "gold substitute {:?} is not a candidate",
                g.sub
            )));
        }
        Ok(())
    }
}

pub fn read_canonical(reader: impl BufRead) -> Result<Vec<SubstitutionInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let instance: SubstitutionInstance =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        instance.validate().map_err(|e| match e {
            Error::Validation { id, message } => Error::Validation {
                id,
                message: format!("line {line_no}: {message}"),
            },
            other => other,
        })?;
        out.push(instance);
    }
    Ok(out)
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<Vec<SubstitutionInstance>> {
    let file = std::fs::File::open(path)?;
    read_canonical(std::io::BufReader::new(file))
}

pub fn write_canonical(mut writer: impl Write, instances: &[SubstitutionInstance]) -> Result<()> {
    for instance in instances {
        serde_json::to_writer(&mut writer, instance)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    Lemma,
    LemmaPos,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(PoolMode::Lemma),
            "lemma-pos" => Ok(PoolMode::LemmaPos),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// Replace every candidate list with the sorted union of gold substitutes
/// over all instances that share the pooling key.
pub fn pool_candidates(instances: &mut [SubstitutionInstance], mode: PoolMode) {
    let key = |i: &SubstitutionInstance| match mode {
        PoolMode::Lemma => (i.target.lemma.clone(), None),
        PoolMode::LemmaPos => (i.target.lemma.clone(), Some(i.target.pos)),
    };
    let mut pools: BTreeMap<(String, Option<Pos>), BTreeSet<String>> = BTreeMap::new();
    for instance in instances.iter() {
        pools
            .entry(key(instance))
            .or_default()
            .extend(instance.gold.iter().map(|g| g.sub.clone()));
    }
    for instance in instances.iter_mut() {
        instance.candidates = pools[&key(instance)].iter().cloned().collect();
    }
}

/// Bookkeeping reported by the converters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionStats {
    pub records: usize,
    /// Sentences without any gold line.
    pub dropped_without_gold: usize,
    /// Duplicate substitutes whose weights were summed.
    pub summed_duplicates: usize,
    /// Records whose gold set is empty (skipped at evaluation).
    pub without_positive_gold: usize,
}

impl fmt::Display for ConversionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records={} dropped_without_gold={} summed_duplicates={} without_positive_gold={}",
            self.records,
            self.dropped_without_gold,
            self.summed_duplicates,
            self.without_positive_gold
        )
    }
}

/// Sum weights of repeated substitutes, preserving first-seen order.
fn merge_duplicates(gold: Vec<GoldSubstitute>, stats: &mut ConversionStats) -> Vec<GoldSubstitute> {
    let mut merged: Vec<GoldSubstitute> = Vec::with_capacity(gold.len());
    for g in gold {
        if let Some(existing) = merged.iter_mut().find(|m| m.sub == g.sub) {
            existing.weight += g.weight;
            stats.summed_duplicates += 1;
        } else {
            merged.push(g);
        }
    }
    merged
}
