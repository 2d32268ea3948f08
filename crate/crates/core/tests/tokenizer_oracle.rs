use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subrank_core::tokenizer::{Vocabulary, SPECIAL_TOKENS};

const SENTENCE: &str = "the quick brown foxes were jumping over lazy dogs near riverbanks today";

/// 200 pieces: specials, printable ASCII, then prefixes and `##` pieces cut
/// from the sentence's words and random letters.
fn vocabulary(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pieces: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    pieces.extend((0x21u8..=0x7e).map(|b| char::from(b).to_string()));
    let mut seen: HashSet<String> = pieces.iter().cloned().collect();
    let words: Vec<&str> = SENTENCE.split(' ').collect();
    while pieces.len() < 200 {
        let candidate = if rng.random_bool(0.7) {
            let w: Vec<char> = words[rng.random_range(0..words.len())].chars().collect();
            let start = rng.random_range(0..w.len());
            let end = rng.random_range(start + 1..=w.len());
            let body: String = w[start..end].iter().collect();
            if start == 0 && rng.random_bool(0.5) {
                body
            } else {
                format!("##{body}")
            }
        } else {
            let len = rng.random_range(2..5);
            (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect()
        };
        if candidate.chars().count() > 1 && seen.insert(candidate.clone()) {
            pieces.push(candidate);
        }
    }
    pieces
}

/// Longest prefix match per whitespace word, `##` after the first piece,
/// with the bare character when nothing continues.
fn oracle(pieces: &[String], text: &str) -> Vec<(String, usize, usize)> {
    let set: HashSet<&str> = pieces.iter().map(String::as_str).collect();
    let mut out = vec![("[CLS]".to_string(), 0, 0)];
    let mut offset = 0;
    for word in text.split(' ') {
        let chars: Vec<char> = word.chars().collect();
        let mut pos = 0;
        while pos < chars.len() {
            let mut found = None;
            for end in (pos + 1..=chars.len()).rev() {
                let body: String = chars[pos..end].iter().collect();
                let key = if pos == 0 { body } else { format!("##{body}") };
                if set.contains(key.as_str()) {
                    found = Some((key, end));
                    break;
                }
            }
            let (piece, end) = found.unwrap_or_else(|| (chars[pos].to_string(), pos + 1));
            out.push((piece, offset + pos, offset + end));
            pos = end;
        }
        offset += chars.len() + 1;
    }
    let n = text.chars().count();
    out.push(("[SEP]".to_string(), n, n));
    out
}

#[test]
fn greedy_matching_agrees_with_oracle() {
    for seed in 0..5 {
        let pieces = vocabulary(seed);
        assert_eq!(pieces.len(), 200);
        let vocab = Vocabulary::new(pieces.clone(), false).unwrap();
        let got = vocab.tokenize(SENTENCE).unwrap();
        let got: Vec<(String, usize, usize)> = got
            .token_ids
            .iter()
            .zip(&got.offsets)
            .map(|(&id, r)| (vocab.piece(id).unwrap().to_string(), r.start, r.end))
            .collect();
        assert_eq!(got, oracle(&pieces, SENTENCE), "seed {seed}");
    }
}

#[test]
fn substitution_equals_fresh_tokenization() {
    let pieces = vocabulary(3);
    let vocab = Vocabulary::new(pieces, false).unwrap();
    let original = vocab
        .tokenize(SENTENCE)
        .unwrap()
        .locate_target(16, 21)
        .unwrap();
    let (substituted, alignment) = original.substitute(&vocab, "wolves").unwrap();
    let fresh = vocab
        .tokenize("the quick brown wolves were jumping over lazy dogs near riverbanks today")
        .unwrap();
    assert_eq!(substituted.token_ids, fresh.token_ids);
    assert_eq!(substituted.offsets, fresh.offsets);
    let span = original.target().unwrap();
    for &(i, j) in &alignment.pairs {
        assert!(!span.contains(&i));
        assert_eq!(original.surface(i), substituted.surface(j));
    }
}
