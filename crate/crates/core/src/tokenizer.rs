//! Greedy longest-match subword tokenization with character offsets, target
//! location and candidate substitution.
//!
//! Text is first split into pre-tokens: maximal runs of alphanumeric
//! characters, with every other non-whitespace character standing alone.
//! Each pre-token is then matched greedily against the vocabulary; pieces
//! after the first carry the `##` continuation marker. All offsets are
//! character (Unicode scalar) indices into the source text.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";

fn ascii_printable() -> impl Iterator<Item = char> {
    (0x21u8..=0x7e).map(char::from)
}

fn is_standalone(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Char ranges of the pre-tokens of `chars`.
fn pre_tokens(chars: &[char]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_standalone(c) {
            out.push(i..i + 1);
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push(start..i);
        }
    }
    out
}

/// Whether `[start, end)` is a whitespace-free run of whole pre-tokens of `text`.
pub fn is_word_span(text: &str, start: usize, end: usize) -> bool {
    let chars: Vec<char> = text.chars().collect();
    if start >= end || end > chars.len() || chars[start..end].iter().any(|c| c.is_whitespace()) {
        return false;
    }
    let words = pre_tokens(&chars);
    words.iter().any(|w| w.start == start) && words.iter().any(|w| w.end == end)
}

fn normalize_char(c: char, lowercase: bool) -> char {
    if !lowercase {
        return c;
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    lowercase: bool,
    max_piece_chars: usize,
}

impl Vocabulary {
    /// Build from an ordered piece list, enforcing the vocabulary invariants.
    pub fn new(pieces: Vec<String>, lowercase: bool) -> Result<Self> {
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if pieces.get(id).map(String::as_str) != Some(*special) {
                return Err(Error::Config(format!(
                    "vocabulary id {id} must be {special}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() {
                return Err(Error::Config(format!("empty piece at id {id}")));
            }
            if index.insert(piece.clone(), id as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate piece {piece:?}")));
            }
        }
        if let Some(c) = ascii_printable().find(|c| !index.contains_key(&c.to_string())) {
            return Err(Error::Config(format!(
                "vocabulary lacks single-character piece {c:?}"
            )));
        }
        let max_piece_chars = pieces
            .iter()
            .map(|p| p.strip_prefix(CONTINUATION).unwrap_or(p).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Vocabulary {
            pieces,
            index,
            lowercase,
            max_piece_chars,
        })
    }

    /// Specials, every printable ASCII character (bare and `##`-continued),
    /// then each distinct pre-token of `texts` as a whole-word piece.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, lowercase: bool) -> Self {
        let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        pieces.extend(ascii_printable().map(|c| c.to_string()));
        pieces.extend(ascii_printable().map(|c| format!("{CONTINUATION}{c}")));
        let mut words: Vec<String> = texts
            .into_iter()
            .flat_map(|text| {
                let chars: Vec<char> = text.chars().collect();
                pre_tokens(&chars)
                    .into_iter()
                    .map(|r| {
                        chars[r]
                            .iter()
                            .map(|&c| normalize_char(c, lowercase))
                            .collect::<String>()
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        words.sort();
        words.dedup();
        let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
        for w in words {
            if seen.insert(w.clone()) {
                pieces.push(w);
            }
        }
        Vocabulary::new(pieces, lowercase).expect("constructed vocabulary is valid")
    }

    /// One piece per line; the line number is the id.
    pub fn from_reader(reader: impl BufRead, lowercase: bool) -> Result<Self> {
        let pieces = reader
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Vocabulary::new(pieces, lowercase)
    }

    pub fn load(path: impl AsRef<Path>, lowercase: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Vocabulary::from_reader(std::io::BufReader::new(file), lowercase)
    }

    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        for piece in &self.pieces {
            writeln!(writer, "{piece}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Greedy longest match over one pre-token. Returns `(id, char range)`
    /// pairs relative to the pre-token.
    fn match_word(&self, word: &[char]) -> Vec<(TokenId, Range<usize>)> {
        let mut out = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < word.len() {
            let longest = (pos + 1..=word.len().min(pos + self.max_piece_chars))
                .rev()
                .find_map(|end| {
                    buf.clear();
                    if pos > 0 {
                        buf.push_str(CONTINUATION);
                    }
                    buf.extend(&word[pos..end]);
                    self.id(&buf).map(|id| (id, end))
                });
            // Continuation pieces fall back to the bare single character.
            let matched = longest.or_else(|| {
                (pos > 0)
                    .then(|| self.id(&word[pos].to_string()).map(|id| (id, pos + 1)))
                    .flatten()
            });
            let (id, end) = matched.unwrap_or((UNK_ID, pos + 1));
            out.push((id, pos..end));
            pos = end;
        }
        out
    }

    /// Tokens of `text` (no specials), with offsets shifted by `base`.
    fn tokenize_words(&self, chars: &[char], base: usize) -> (Vec<TokenId>, Vec<Range<usize>>) {
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        for word in pre_tokens(chars) {
            let normalized: Vec<char> = chars[word.clone()]
                .iter()
                .map(|&c| normalize_char(c, self.lowercase))
                .collect();
            for (id, r) in self.match_word(&normalized) {
                ids.push(id);
                offsets.push(base + word.start + r.start..base + word.start + r.end);
            }
        }
        (ids, offsets)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedSentence> {
        if text.trim().is_empty() {
            return Err(Error::Input("cannot tokenize empty text".into()));
        }
        let chars: Vec<char> = text.chars().collect();
        let (ids, offsets) = self.tokenize_words(&chars, 0);
        let mut token_ids = Vec::with_capacity(ids.len() + 2);
        token_ids.push(CLS_ID);
        token_ids.extend(ids);
        token_ids.push(SEP_ID);
        let mut all_offsets = Vec::with_capacity(offsets.len() + 2);
        all_offsets.push(0..0);
        all_offsets.extend(offsets);
        all_offsets.push(chars.len()..chars.len());
        Ok(TokenizedSentence {
            text: text.to_string(),
            token_ids,
            offsets: all_offsets,
            target_span: None,
        })
    }
}

/// A tokenized sentence, `[CLS] … [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub text: String,
    pub token_ids: Vec<TokenId>,
    /// Character range of each token; specials carry empty ranges.
    pub offsets: Vec<Range<usize>>,
    /// Token range of the target word, once located.
    pub target_span: Option<Range<usize>>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn is_special(&self, position: usize) -> bool {
        Vocabulary::is_special(self.token_ids[position]) && self.offsets[position].is_empty()
    }

    /// Source characters covered by token `position`.
    pub fn surface(&self, position: usize) -> String {
        let r = &self.offsets[position];
        self.text.chars().skip(r.start).take(r.len()).collect()
    }

    pub fn target(&self) -> Result<Range<usize>> {
        self.target_span
            .clone()
            .ok_or_else(|| Error::Input("sentence has no located target".into()))
    }

    /// Positions that are neither specials nor part of the target span.
    pub fn context_positions(&self, include_specials: bool) -> Result<Vec<usize>> {
        let target = self.target()?;
        Ok((0..self.len())
            .filter(|&i| !target.contains(&i) && (include_specials || !self.is_special(i)))
            .collect())
    }

    /// Record the target as the minimal token range covering `[char_start, char_end)`.
    pub fn locate_target(mut self, char_start: usize, char_end: usize) -> Result<Self> {
        let n = self.text.chars().count();
        if char_start >= char_end || char_end > n {
            return Err(Error::Input(format!(
                "target span {char_start}..{char_end} out of bounds for text of {n} characters"
            )));
        }
        if !is_word_span(&self.text, char_start, char_end) {
            return Err(Error::Input(format!(
                "target span {char_start}..{char_end} does not align with a word"
            )));
        }
        let covered: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let r = &self.offsets[i];
                !r.is_empty() && r.start < char_end && r.end > char_start
            })
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            return Err(Error::Input(format!(
                "target span {char_start}..{char_end} matches no tokens"
            )));
        };
        self.target_span = Some(first..last + 1);
        Ok(self)
    }

    /// Character range of the located target.
    pub fn target_chars(&self) -> Result<Range<usize>> {
        let span = self.target()?;
        Ok(self.offsets[span.start].start..self.offsets[span.end - 1].end)
    }

    /// Replace the target word with `candidate`, re-tokenizing only that word.
    pub fn substitute(
        &self,
        vocab: &Vocabulary,
        candidate: &str,
    ) -> Result<(TokenizedSentence, Alignment)> {
        let candidate = candidate.trim();
        if candidate.is_empty() {
            return Err(Error::Input("empty candidate".into()));
        }
        if candidate.chars().any(char::is_whitespace) {
            return Err(Error::Multiword(candidate.to_string()));
        }
        let span = self.target()?;
        let chars: Vec<char> = self.text.chars().collect();
        let target_chars = self.target_chars()?;
        let original: String = chars[target_chars.clone()].iter().collect();
        let surface = transfer_case(&original, candidate, vocab.lowercase());
        let surface_chars: Vec<char> = surface.chars().collect();

        let (new_ids, new_offsets) = vocab.tokenize_words(&surface_chars, target_chars.start);
        let char_shift = surface_chars.len() as isize - target_chars.len() as isize;
        let shift = |r: &Range<usize>| {
            (r.start as isize + char_shift) as usize..(r.end as isize + char_shift) as usize
        };

        let mut token_ids = self.token_ids[..span.start].to_vec();
        let mut offsets = self.offsets[..span.start].to_vec();
        token_ids.extend(&new_ids);
        offsets.extend(new_offsets);
        token_ids.extend(&self.token_ids[span.end..]);
        offsets.extend(self.offsets[span.end..].iter().map(shift));

        let new_span = span.start..span.start + new_ids.len();
        let mut pairs: Vec<(usize, usize)> = (0..span.start).map(|i| (i, i)).collect();
        pairs.extend((span.end..self.len()).map(|i| (i, i - span.end + new_span.end)));

        let mut text: String = chars[..target_chars.start].iter().collect();
        text.push_str(&surface);
        text.extend(&chars[target_chars.end..]);

        Ok((
            TokenizedSentence {
                text,
                token_ids,
                offsets,
                target_span: Some(new_span.clone()),
            },
            Alignment {
                pairs,
                original_target_span: span,
                substituted_target_span: new_span,
            },
        ))
    }
}

/// Capitalize the candidate iff the original began with a capital; otherwise
/// lowercase it unless the vocabulary lowercases anyway. A case-insensitive
/// match keeps the original surface.
fn transfer_case(original: &str, candidate: &str, lowercase_vocab: bool) -> String {
    if original.to_lowercase() == candidate.to_lowercase() {
        return original.to_string();
    }
    let mut chars = candidate.chars();
    if original.chars().next().is_some_and(char::is_uppercase) {
        let first = chars.next().expect("candidate is non-empty");
        first.to_uppercase().chain(chars).collect()
    } else if !lowercase_vocab {
        candidate.to_lowercase()
    } else {
        candidate.to_string()
    }
}

/// Positional correspondence between the context tokens of an original
/// sentence and its substituted counterpart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `(original index, substituted index)`, including `[CLS]`/`[SEP]`.
    pub pairs: Vec<(usize, usize)>,
    pub original_target_span: Range<usize>,
    pub substituted_target_span: Range<usize>,
}

impl Alignment {
    pub fn substituted_index(&self, original: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&original, |&(o, _)| o)
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        pieces.extend(ascii_printable().map(|c| c.to_string()));
        pieces.extend(words.iter().map(|w| w.to_string()));
        Vocabulary::new(pieces, true).unwrap()
    }

    fn pieces(v: &Vocabulary, s: &TokenizedSentence) -> Vec<String> {
        s.token_ids
            .iter()
            .map(|&id| v.piece(id).unwrap().to_string())
            .collect()
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["play", "##ing", "pla", "##y"]);
        let s = v.tokenize("playing").unwrap();
        assert_eq!(pieces(&v, &s), ["[CLS]", "play", "##ing", "[SEP]"]);
        assert_eq!(s.offsets, vec![0..0, 0..4, 4..7, 7..7]);
    }

    #[test]
    fn character_fallback() {
        let v = vocab(&[]);
        let s = v.tokenize("xyz").unwrap();
        assert_eq!(pieces(&v, &s), ["[CLS]", "x", "y", "z", "[SEP]"]);
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = vocab(&[]);
        let s = v.tokenize("aé").unwrap();
        assert_eq!(
            s.token_ids,
            vec![CLS_ID, v.id("a").unwrap(), UNK_ID, SEP_ID]
        );
        assert_eq!(s.offsets[2], 1..2);
    }

    #[test]
    fn punctuation_splits_words() {
        let v = vocab(&["bright"]);
        let s = v.tokenize("Bright, he said.").unwrap();
        assert_eq!(s.surface(1), "Bright");
        assert_eq!(s.surface(2), ",");
        assert_eq!(v.piece(s.token_ids[1]), Some("bright"));
    }

    #[test]
    fn vocabulary_invariants() {
        assert!(Vocabulary::new(vec!["[PAD]".into()], true).is_err());
        let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        pieces.extend(
            ascii_printable()
                .filter(|&c| c != 'q')
                .map(|c| c.to_string()),
        );
        let err = Vocabulary::new(pieces.clone(), true)
            .unwrap_err()
            .to_string();
        assert!(err.contains("'q'"), "{err}");
        pieces.push("q".into());
        pieces.push("q".into());
        assert!(Vocabulary::new(pieces, true).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::from_texts(["The bright child"], true);
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n"));
        let back = Vocabulary::from_reader(buf.as_slice(), true).unwrap();
        assert_eq!(v, back);
        assert!(v.id("bright").is_some());
    }

    #[test]
    fn locate_single_and_multi_piece_targets() {
        let v = vocab(&["the", "child", "is", "bri", "##g", "##ht"]);
        let s = v.tokenize("the child is bright").unwrap();
        let located = s.clone().locate_target(4, 9).unwrap();
        assert_eq!(located.target_span, Some(2..3));
        let located = s.clone().locate_target(13, 19).unwrap();
        assert_eq!(located.target_span, Some(4..7));
        assert!(matches!(
            s.clone().locate_target(13, 40),
            Err(Error::Input(_))
        ));
        // Mid-word and cross-word spans are rejected.
        assert!(s.clone().locate_target(14, 19).is_err());
        assert!(s.locate_target(10, 19).is_err());
    }

    #[test]
    fn identity_substitution() {
        let v = vocab(&["the", "child", "is", "bright"]);
        let s = v
            .tokenize("The child is bright .")
            .unwrap()
            .locate_target(13, 19)
            .unwrap();
        let (sub, align) = s.substitute(&v, "bright").unwrap();
        assert_eq!(sub, s);
        assert!(align.pairs.iter().all(|&(a, b)| a == b));
        assert_eq!(align.pairs.len(), s.len() - 1);
    }

    #[test]
    fn longer_candidate_shifts_following_tokens() {
        let v = vocab(&["the", "child", "is", "bright", "clev", "##er"]);
        let s = v
            .tokenize("the bright child is")
            .unwrap()
            .locate_target(4, 10)
            .unwrap();
        let (sub, align) = s.substitute(&v, "clever").unwrap();
        assert_eq!(sub.text, "the clever child is");
        assert_eq!(align.substituted_target_span, 2..4);
        assert_eq!(align.pairs, vec![(0, 0), (1, 1), (3, 4), (4, 5), (5, 6)]);
    }

    #[test]
    fn capitalization_transfers() {
        let v = vocab(&["bright", "clever"]);
        let s = v
            .tokenize("Bright kids")
            .unwrap()
            .locate_target(0, 6)
            .unwrap();
        let (sub, _) = s.substitute(&v, "clever").unwrap();
        assert_eq!(sub.text, "Clever kids");
        assert_eq!(transfer_case("bright", "Clever", false), "clever");
        assert_eq!(transfer_case("bright", "Clever", true), "Clever");
        assert_eq!(transfer_case("Bright", "BRIGHT", false), "Bright");
    }

    #[test]
    fn multiword_candidate_is_rejected() {
        let v = vocab(&[]);
        let s = v
            .tokenize("a lit room")
            .unwrap()
            .locate_target(2, 5)
            .unwrap();
        assert!(matches!(
            s.substitute(&v, "well lit"),
            Err(Error::Multiword(_))
        ));
        assert!(matches!(s.substitute(&v, "  "), Err(Error::Input(_))));
    }

    #[test]
    fn ls07_style_alignment_preserves_surfaces() {
        let text = "He was bright and friendly , and everyone liked him .";
        let v = Vocabulary::from_texts([text], true);
        let s = v.tokenize(text).unwrap().locate_target(7, 13).unwrap();
        let (sub, align) = s.substitute(&v, "intelligent").unwrap();
        assert_eq!(align.pairs.len(), s.len() - 1);
        for &(i, j) in &align.pairs {
            assert_eq!(s.surface(i), sub.surface(j));
            assert_eq!(s.token_ids[i], sub.token_ids[j]);
        }
        // Pairs form a bijection onto the substituted context positions.
        let mut targets: Vec<usize> = align.pairs.iter().map(|p| p.1).collect();
        targets.dedup();
        assert_eq!(targets.len(), align.pairs.len());
        assert!(targets
            .iter()
            .all(|t| !align.substituted_target_span.contains(t)));
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-zA-Z]{1,8}|[,.;!?'-]"
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_words(words in prop::collection::vec(word(), 1..12)) {
            let text = words.join(" ");
            let v = Vocabulary::from_texts(["the", "ing", "bright"], true);
            let s = v.tokenize(&text).unwrap();
            let mut prev_end = 0;
            for i in 1..s.len() - 1 {
                let r = &s.offsets[i];
                prop_assert!(r.start >= prev_end && r.end > r.start);
                prev_end = r.end;
                let piece = v.piece(s.token_ids[i]).unwrap();
                let stripped = piece.strip_prefix(CONTINUATION).unwrap_or(piece);
                prop_assert_eq!(stripped, s.surface(i).to_lowercase());
            }
        }

        #[test]
        fn substitution_equals_full_retokenization(
            left in prop::collection::vec(word(), 0..5),
            target in "[a-z]{1,8}",
            right in prop::collection::vec(word(), 0..5),
            candidate in "[a-zA-Z]{1,10}(-[a-z]{1,4})?",
        ) {
            let mut text = left.join(" ");
            if !text.is_empty() { text.push(' '); }
            let start = text.chars().count();
            text.push_str(&target);
            let end = text.chars().count();
            if !right.is_empty() { text.push(' '); text.push_str(&right.join(" ")); }
            let v = Vocabulary::from_texts(["ab", "abc", "cab", "the"], true);
            let s = v.tokenize(&text).unwrap().locate_target(start, end).unwrap();
            let (sub, align) = s.substitute(&v, &candidate).unwrap();
            let fresh = v.tokenize(&sub.text).unwrap();
            prop_assert_eq!(&fresh.token_ids, &sub.token_ids);
            prop_assert_eq!(&fresh.offsets, &sub.offsets);
            for &(i, j) in &align.pairs {
                prop_assert_eq!(s.surface(i), sub.surface(j));
            }
        }
    }
}
