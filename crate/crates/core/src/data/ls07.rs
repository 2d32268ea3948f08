//! SemEval-2007 lexical substitution distribution files.
//!
//! Contexts come as loosely XML-formatted `<lexelt item="lemma.pos">` blocks of
//! `<instance id="…"><context>… <head>word</head> …</context></instance>`.
//! Gold lines read `lemma.pos id :: sub weight;sub weight;`.

use std::collections::{BTreeMap, HashMap};

use regex::Regex;

use super::{merge_duplicates, ConversionStats, GoldSubstitute, Pos, SubstitutionInstance, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ls07Sentence {
    pub id: String,
    pub lemma: String,
    pub pos: Pos,
    pub sentence: String,
    pub char_start: usize,
    pub char_end: usize,
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn split_item(item: &str) -> Result<(String, Pos)> {
    let (lemma, pos) = item
        .rsplit_once('.')
        .ok_or_else(|| Error::Conversion(format!("item {item:?} lacks a .pos suffix")))?;
    let pos = pos
        .parse()
        .map_err(|_| Error::Conversion(format!("item {item:?} has an unknown part of speech")))?;
    Ok((lemma.to_string(), pos))
}

fn push_collapsed(text: &str, out: &mut String, len: &mut usize, pending_space: &mut bool) {
    for c in text.chars() {
        if c.is_whitespace() {
            *pending_space = *len > 0;
        } else {
            if *pending_space {
                out.push(' ');
                *len += 1;
                *pending_space = false;
            }
            out.push(c);
            *len += 1;
        }
    }
}

/// Collapse whitespace runs and trim, returning the text with the char range
/// of the head word.
fn assemble(before: &str, head: &str, after: &str) -> (String, usize, usize) {
    let mut out = String::new();
    let mut len = 0usize;
    let mut pending_space = false;
    push_collapsed(before, &mut out, &mut len, &mut pending_space);
    if pending_space {
        out.push(' ');
        len += 1;
    }
    pending_space = false;
    let start = len;
    push_collapsed(head.trim(), &mut out, &mut len, &mut pending_space);
    let end = len;
    push_collapsed(after, &mut out, &mut len, &mut pending_space);
    (out, start, end)
}

pub fn parse_ls07_sentences(xml: &str) -> Result<Vec<Ls07Sentence>> {
    let lexelt = Regex::new(r#"(?s)<lexelt\s+item="([^"]+)"[^>]*>(.*?)</lexelt>"#).unwrap();
    let instance = Regex::new(r#"(?s)<instance\s+id="([^"]+)"[^>]*>(.*?)</instance>"#).unwrap();
    let context = Regex::new(r"(?s)<context>(.*?)</context>").unwrap();
    let head = Regex::new(r"(?s)^(.*?)<head>(.*?)</head>(.*)$").unwrap();
    let tag = Regex::new(r"<[^>]*>").unwrap();

    let mut out = Vec::new();
    for block in lexelt.captures_iter(xml) {
        let (lemma, pos) = split_item(&block[1])?;
        for inst in instance.captures_iter(&block[2]) {
            let id = inst[1].trim().to_string();
            let ctx = context
                .captures(&inst[2])
                .ok_or_else(|| Error::Conversion(format!("instance {id} has no <context>")))?;
            let parts = head
                .captures(&ctx[1])
                .ok_or_else(|| Error::Conversion(format!("instance {id} has no <head>")))?;
            let clean = |s: &str| unescape(&tag.replace_all(s, ""));
            let (sentence, char_start, char_end) =
                assemble(&clean(&parts[1]), &clean(&parts[2]), &clean(&parts[3]));
            if char_start == char_end {
                return Err(Error::Conversion(format!(
                    "instance {id} has an empty head"
                )));
            }
            out.push(Ls07Sentence {
                id,
                lemma: lemma.clone(),
                pos,
                sentence,
                char_start,
                char_end,
            });
        }
    }
    Ok(out)
}

/// Lemma, POS and gold substitutes of one instance.
pub type GoldEntry = (String, Pos, Vec<GoldSubstitute>);

/// Gold substitutes by instance id, in file order per id.
pub fn parse_ls07_gold(
    text: &str,
    stats: &mut ConversionStats,
) -> Result<BTreeMap<String, GoldEntry>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (key, subs) = line
            .split_once("::")
            .ok_or_else(|| parse_err("missing '::' separator".into()))?;
        let mut key_parts = key.split_whitespace();
        let (Some(item), Some(id), None) = (key_parts.next(), key_parts.next(), key_parts.next())
        else {
            return Err(parse_err(format!("expected 'lemma.pos id', got {key:?}")));
        };
        let (lemma, pos) = split_item(item)?;
        let mut gold = Vec::new();
        for entry in subs.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (sub, weight) = entry
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| parse_err(format!("entry {entry:?} lacks a weight")))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("entry {entry:?} has a non-numeric weight")))?;
            if weight > 0.0 {
                gold.push(GoldSubstitute {
                    sub: sub.trim().to_string(),
                    weight,
                });
            }
        }
        let gold = merge_duplicates(gold, stats);
        if out.insert(id.to_string(), (lemma, pos, gold)).is_some() {
            return Err(parse_err(format!("duplicate gold line for id {id}")));
        }
    }
    Ok(out)
}

/// Join context and gold files (trial and test may be passed together).
/// Each record's candidates are its own gold substitutes; pool afterwards.
pub fn convert_ls07(
    sentence_files: &[String],
    gold_files: &[String],
) -> Result<(Vec<SubstitutionInstance>, ConversionStats)> {
    let mut stats = ConversionStats::default();
    let mut sentences = Vec::new();
    for xml in sentence_files {
        sentences.extend(parse_ls07_sentences(xml)?);
    }
    let mut gold = BTreeMap::new();
    for text in gold_files {
        for (id, entry) in parse_ls07_gold(text, &mut stats)? {
            if gold.insert(id.clone(), entry).is_some() {
                return Err(Error::Conversion(format!(
                    "id {id} appears in two gold files"
                )));
            }
        }
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for s in &sentences {
        if seen.insert(&s.id, 0).is_some() {
            return Err(Error::Conversion(format!("duplicate sentence id {}", s.id)));
        }
    }
    let orphans: Vec<&str> = gold
        .keys()
        .map(String::as_str)
        .filter(|id| !seen.contains_key(id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Conversion(format!(
            "gold ids without a sentence: {}",
            orphans.join(", ")
        )));
    }

    let mut records = Vec::new();
    for s in sentences {
        let Some((lemma, pos, subs)) = gold.remove(&s.id) else {
            stats.dropped_without_gold += 1;
            continue;
        };
        if lemma != s.lemma || pos != s.pos {
            return Err(Error::Conversion(format!(
                "id {}: gold item {lemma}.{pos} disagrees with context item {}.{}",
                s.id, s.lemma, s.pos
            )));
        }
        if subs.is_empty() {
            stats.without_positive_gold += 1;
        }
        records.push(SubstitutionInstance {
            id: s.id,
            sentence: s.sentence,
            target: Target {
                char_start: s.char_start,
                char_end: s.char_end,
                lemma,
                pos,
            },
            candidates: subs.iter().map(|g| g.sub.clone()).collect(),
            gold: subs,
        });
    }
    stats.records = records.len();
    Ok((records, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    const XML: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<corpus lang="english">
<lexelt item="bright.a">
<instance id="1">
<context>The children are <head>bright</head> and eager .</context>
</instance>
<instance id="2">
<context>  A  <head>bright</head>   light &amp; shadow .
</context>
</instance>
</lexelt>
<lexelt item="side.n">
<instance id="3">
<context><head>Side</head> effects were rare .</context>
</instance>
</lexelt>
</corpus>"#;

    #[test]
    fn gold_line_parses_weights() {
        let mut stats = ConversionStats::default();
        let gold = parse_ls07_gold("bright.a 1 :: intelligent 3;clever 1;\n", &mut stats).unwrap();
        let (lemma, pos, subs) = &gold["1"];
        assert_eq!((lemma.as_str(), *pos), ("bright", Pos::Adjective));
        assert_eq!(
            subs,
            &vec![
                GoldSubstitute {
                    sub: "intelligent".into(),
                    weight: 3.0
                },
                GoldSubstitute {
                    sub: "clever".into(),
                    weight: 1.0
                },
            ]
        );
    }

    #[test]
    fn duplicate_subs_are_summed() {
        let mut stats = ConversionStats::default();
        let gold =
            parse_ls07_gold("bright.a 1 :: clever 2; well lit 1; clever 1;", &mut stats).unwrap();
        assert_eq!(
            gold["1"].2[0],
            GoldSubstitute {
                sub: "clever".into(),
                weight: 3.0
            }
        );
        assert_eq!(gold["1"].2[1].sub, "well lit");
        assert_eq!(stats.summed_duplicates, 1);
    }

    #[test]
    fn malformed_gold_line_reports_line() {
        let mut stats = ConversionStats::default();
        let err = parse_ls07_gold("bright.a 1 :: clever 1;\nnonsense\n", &mut stats).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn sentences_recover_head_span() {
        let s = parse_ls07_sentences(XML).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].sentence, "The children are bright and eager .");
        assert_eq!((s[0].char_start, s[0].char_end), (17, 23));
        assert_eq!(s[1].sentence, "A bright light & shadow .");
        assert_eq!(&s[1].sentence[s[1].char_start..s[1].char_end], "bright");
        assert_eq!((s[2].char_start, s[2].char_end), (0, 4));
        assert_eq!(s[2].pos, Pos::Noun);
    }

    #[test]
    fn conversion_drops_sentences_without_gold() {
        let gold = "bright.a 1 :: intelligent 3;clever 1;\nside.n 3 :: aspect 2;\n";
        let (records, stats) = convert_ls07(&[XML.to_string()], &[gold.to_string()]).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(stats.dropped_without_gold, 1);
        assert_eq!(records[0].candidates, ["intelligent", "clever"]);
        for r in &records {
            r.validate().unwrap();
        }
    }

    #[test]
    fn orphan_gold_ids_are_listed() {
        let gold = "bright.a 1 :: clever 1;\nbright.a 99 :: smart 1;\n";
        let err = convert_ls07(&[XML.to_string()], &[gold.to_string()]).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }
}
