//! Seeded toy corpus in the canonical format, for smoke runs and tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pool_candidates, GoldSubstitute, PoolMode, Pos, SubstitutionInstance, Target};

struct Group {
    pos: Pos,
    words: &'static [&'static str],
    templates: &'static [&'static str],
}

const GROUPS: &[Group] = &[
    Group {
        pos: Pos::Adjective,
        words: &["bright", "clever", "smart", "intelligent", "quick witted"],
        templates: &[
            "The {} student solved the puzzle before lunch .",
            "She gave a {} answer to the hard question .",
            "Everyone agreed that the plan was {} .",
        ],
    },
    Group {
        pos: Pos::Adjective,
        words: &["happy", "glad", "cheerful", "joyful", "content"],
        templates: &[
            "He felt {} when the letter finally arrived .",
            "The {} children ran across the field .",
        ],
    },
    Group {
        pos: Pos::Verb,
        words: &["buy", "purchase", "acquire", "get", "pick up"],
        templates: &[
            "We will {} a new car next spring .",
            "They want to {} tickets for the concert .",
        ],
    },
    Group {
        pos: Pos::Noun,
        words: &["car", "automobile", "vehicle", "motor car"],
        templates: &[
            "The {} stopped at the red light .",
            "My uncle washed his {} on Sunday morning .",
        ],
    },
    Group {
        pos: Pos::Adverb,
        words: &["quickly", "rapidly", "swiftly", "fast", "speedily"],
        templates: &[
            "The river rose {} after the storm .",
            "She {} closed the door behind her .",
        ],
    },
    Group {
        pos: Pos::Noun,
        words: &["house", "home", "dwelling", "residence"],
        templates: &[
            "Their {} stands at the end of the road .",
            "A small {} was built near the lake .",
        ],
    },
];

/// `n` instances drawn from a fixed set of synonym groups. Targets are
/// single words; gold weights are integers in 1..=5 and never include the
/// target itself. Candidates are pooled by lemma and part of speech.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<SubstitutionInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let group = GROUPS.choose(&mut rng).expect("groups are non-empty");
        let single: Vec<&str> = group
            .words
            .iter()
            .copied()
            .filter(|w| !w.contains(' '))
            .collect();
        let target = *single
            .choose(&mut rng)
            .expect("every group has single words");
        let template = *group
            .templates
            .choose(&mut rng)
            .expect("templates are non-empty");

        let char_start = template.find("{}").expect("template has a slot");
        let sentence = template.replacen("{}", target, 1);
        let char_end = char_start + target.chars().count();

        let mut others: Vec<&str> = group
            .words
            .iter()
            .copied()
            .filter(|w| *w != target)
            .collect();
        others.shuffle(&mut rng);
        let keep = rng.random_range(1..=others.len());
        let gold: Vec<GoldSubstitute> = others[..keep]
            .iter()
            .map(|w| GoldSubstitute {
                sub: w.to_string(),
                weight: f64::from(rng.random_range(1u8..=5)),
            })
            .collect();

        out.push(SubstitutionInstance {
            id: format!("syn{i:04}"),
            sentence,
            target: Target {
                char_start,
                char_end,
                lemma: target.to_string(),
                pos: group.pos,
            },
            candidates: gold.iter().map(|g| g.sub.clone()).collect(),
            gold,
        });
    }
    pool_candidates(&mut out, PoolMode::LemmaPos);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = synthetic_corpus(50, 42);
        assert_eq!(a, synthetic_corpus(50, 42));
        assert_ne!(a, synthetic_corpus(50, 43));
        for inst in &a {
            inst.validate().unwrap();
            assert_eq!(inst.target_surface(), inst.target.lemma);
            assert!(!inst.candidates.contains(&inst.target.lemma));
            assert!(inst.gold.iter().all(|g| (1.0..=5.0).contains(&g.weight)));
        }
    }

    #[test]
    fn corpus_contains_multiword_items() {
        let c = synthetic_corpus(50, 42);
        assert!(c
            .iter()
            .any(|i| i.candidates.iter().any(|s| s.contains(' '))));
    }
}
