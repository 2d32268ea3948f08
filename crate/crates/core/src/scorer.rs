//! Layer-concatenated token representations, weighted cross-sentence
//! similarity, and candidate ranking.

use std::cmp::Ordering;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use crate::attribution::{
    normalize, raw_scores, IgConfig, LayerRange, Scheme, TargetWeighting, TokenWeights,
};
use crate::data::SubstitutionInstance;
use crate::encoder::{EncoderBackend, EncoderOutput};
use crate::error::{Error, Excluded, Result};
use crate::metrics::is_multiword;
use crate::scalar::{Scalar, Total};
use crate::tokenizer::{Alignment, TokenizedSentence, Vocabulary};

pub const MULTIWORD_REASON: &str = "multiword";

static DEGENERATE_COSINES: AtomicUsize = AtomicUsize::new(0);

/// Number of cosine evaluations that hit a zero vector in this process.
pub fn degenerate_cosine_count() -> usize {
    DEGENERATE_COSINES.load(AtomicOrdering::Relaxed)
}

/// Concatenation of a token's hidden vectors over a layer range.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRepresentation<T>(pub Vec<T>);

impl<T> TokenRepresentation<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Per layer in `layer_range`, mean-pool the span's hidden vectors, then
/// concatenate the layers.
pub fn represent<T: Scalar>(
    output: &EncoderOutput<T>,
    span: Range<usize>,
    layer_range: LayerRange,
) -> Result<TokenRepresentation<T>> {
    let range = layer_range.clamped(output.n_layers())?;
    if span.is_empty() || span.end > output.seq_len() {
        return Err(Error::Input(format!(
            "span {span:?} invalid for length {}",
            output.seq_len()
        )));
    }
    let width = output.hidden[0].ncols();
    let count = T::of_usize(span.len());
    let mut vector = Vec::with_capacity(range.len() * width);
    for l in range.layers() {
        let h = &output.hidden[l];
        for j in 0..width {
            if span.len() == 1 {
                vector.push(h[[span.start, j]]);
            } else {
                vector.push(span.clone().map(|i| h[[i, j]]).total() / count);
            }
        }
    }
    Ok(TokenRepresentation(vector))
}

/// Cosine similarity clamped to `[-1, 1]`. A zero vector yields 0 and bumps
/// [`degenerate_cosine_count`].
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Input(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = T::zero();
    let mut nu = T::zero();
    let mut nv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == T::zero() || nv == T::zero() {
        DEGENERATE_COSINES.fetch_add(1, AtomicOrdering::Relaxed);
        log::warn!("cosine similarity with a zero vector, using 0");
        return Ok(T::zero());
    }
    Ok((dot / (nu * nv).sqrt()).max(-T::one()).min(T::one()))
}

/// Weighted sum of token cosines between an original and a substituted
/// sentence. `weights` must come from the original sentence.
///
/// Softmax weights with a fixed or dropped target are divided by their
/// realized sum, which is 1 up to rounding.
pub fn substitution_score<T: Scalar>(
    original: &EncoderOutput<T>,
    substituted: &EncoderOutput<T>,
    weights: &TokenWeights<T>,
    alignment: &Alignment,
    layer_range: LayerRange,
) -> Result<T> {
    let pair_cosine = |i: Range<usize>, j: Range<usize>| -> Result<T> {
        let a = represent(original, i, layer_range)?;
        let b = represent(substituted, j, layer_range)?;
        cosine(a.as_slice(), b.as_slice())
    };

    let mut score = T::zero();
    if weights.target_weight != T::zero() {
        score = weights.target_weight
            * pair_cosine(
                alignment.original_target_span.clone(),
                alignment.substituted_target_span.clone(),
            )?;
    }
    if weights.scheme == Scheme::TargetOnly {
        return Ok(score);
    }

    let mut context = T::zero();
    let mut mass = T::zero();
    for (&position, &w) in weights.positions.iter().zip(&weights.weights) {
        let j = alignment.substituted_index(position).ok_or_else(|| {
            Error::Consistency(format!("weighted position {position} has no aligned token"))
        })?;
        if j >= substituted.seq_len() || position >= original.seq_len() {
            return Err(Error::Consistency(format!(
                "aligned pair ({position}, {j}) outside the encoder outputs"
            )));
        }
        context += w * pair_cosine(position..position + 1, j..j + 1)?;
        mass += w;
    }
    let renormalize = weights.scheme.uses_softmax() && weights.target != TargetWeighting::InSoftmax;
    if renormalize && mass > T::zero() {
        context /= mass;
    }
    Ok(score + context)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate<T> {
    pub candidate: String,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult<T> {
    pub id: String,
    pub scheme: Scheme,
    pub layer_range: LayerRange,
    /// Score descending, ties by ascending candidate string.
    pub ranked: Vec<RankedCandidate<T>>,
    pub excluded: Vec<Excluded>,
}

/// One line of the rankings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingRecord {
    pub id: String,
    pub scheme: Scheme,
    pub layer_range: [usize; 2],
    pub ranked: Vec<ScoredCandidate>,
    pub excluded: Vec<Excluded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredCandidate {
    pub candidate: String,
    pub score: f64,
}

impl<T: Scalar> RankingResult<T> {
    pub fn to_record(&self) -> RankingRecord {
        RankingRecord {
            id: self.id.clone(),
            scheme: self.scheme,
            layer_range: [self.layer_range.start, self.layer_range.end],
            ranked: self
                .ranked
                .iter()
                .map(|r| ScoredCandidate {
                    candidate: r.candidate.clone(),
                    score: r.score.as_f64(),
                })
                .collect(),
            excluded: self.excluded.clone(),
        }
    }
}

fn sort_ranked<T: Scalar>(ranked: &mut [RankedCandidate<T>]) {
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub scheme: Scheme,
    pub target: TargetWeighting,
    /// `None` selects the third through second-to-last layer.
    pub layer_range: Option<LayerRange>,
    pub ig: IgConfig,
    /// Let `[CLS]`/`[SEP]` take part in weights and the similarity sum.
    pub include_specials: bool,
}

impl RankOptions {
    pub fn new(scheme: Scheme) -> Self {
        RankOptions {
            scheme,
            target: TargetWeighting::Fixed,
            layer_range: None,
            ig: IgConfig::default(),
            include_specials: false,
        }
    }

    pub fn resolve_layers(&self, n_layers: usize) -> Result<LayerRange> {
        match self.layer_range {
            Some(r) => r.clamped(n_layers),
            None => LayerRange::default_for(n_layers),
        }
    }
}

/// An original sentence encoded once, with its weights.
#[derive(Debug, Clone)]
pub struct PreparedSentence<T> {
    pub sentence: TokenizedSentence,
    pub output: EncoderOutput<T>,
    pub weights: TokenWeights<T>,
    pub layer_range: LayerRange,
}

/// Tokenize, locate the target, encode and compute weights for an original sentence.
pub fn prepare<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    vocab: &Vocabulary,
    backend: &B,
    text: &str,
    char_span: Range<usize>,
    options: &RankOptions,
) -> Result<PreparedSentence<T>> {
    let layer_range = options.resolve_layers(backend.n_layers())?;
    let sentence = vocab
        .tokenize(text)?
        .locate_target(char_span.start, char_span.end)?;
    let output = backend.encode(&sentence.token_ids)?;
    let raw = raw_scores(
        backend,
        &sentence,
        &output,
        options.scheme,
        layer_range,
        options.ig,
        options.include_specials,
    )?;
    let weights = normalize(&raw, options.scheme, options.target)?;
    Ok(PreparedSentence {
        sentence,
        output,
        weights,
        layer_range,
    })
}

/// Score one candidate against a prepared original.
pub fn score_candidate<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    vocab: &Vocabulary,
    backend: &B,
    prepared: &PreparedSentence<T>,
    candidate: &str,
) -> Result<T> {
    let (substituted, alignment) = prepared.sentence.substitute(vocab, candidate)?;
    let output = backend.encode(&substituted.token_ids)?;
    substitution_score(
        &prepared.output,
        &output,
        &prepared.weights,
        &alignment,
        prepared.layer_range,
    )
}

/// Rank an instance's candidates. Multiword candidates are excluded, never
/// scored; duplicates are scored once.
pub fn rank_candidates<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    instance: &SubstitutionInstance,
    vocab: &Vocabulary,
    backend: &B,
    options: &RankOptions,
) -> Result<RankingResult<T>> {
    let mut candidates: Vec<&str> = instance.candidates.iter().map(String::as_str).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let (multiword, single): (Vec<&str>, Vec<&str>) =
        candidates.into_iter().partition(|c| is_multiword(c));
    let mut excluded: Vec<Excluded> = multiword
        .into_iter()
        .map(|c| Excluded {
            candidate: c.to_string(),
            reason: MULTIWORD_REASON.to_string(),
        })
        .collect();
    if single.is_empty() {
        return Err(Error::AllCandidatesExcluded {
            id: instance.id.clone(),
            excluded,
        });
    }

    let prepared = prepare(
        vocab,
        backend,
        &instance.sentence,
        instance.target.char_start..instance.target.char_end,
        options,
    )?;
    let mut ranked = Vec::with_capacity(single.len());
    for candidate in single {
        match score_candidate(vocab, backend, &prepared, candidate) {
            Ok(score) => ranked.push(RankedCandidate {
                candidate: candidate.to_string(),
                score,
            }),
            Err(Error::Multiword(_)) => excluded.push(Excluded {
                candidate: candidate.to_string(),
                reason: MULTIWORD_REASON.to_string(),
            }),
            Err(e @ (Error::Input(_) | Error::Degenerate(_))) => excluded.push(Excluded {
                candidate: candidate.to_string(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if ranked.is_empty() {
        return Err(Error::AllCandidatesExcluded {
            id: instance.id.clone(),
            excluded,
        });
    }
    sort_ranked(&mut ranked);
    Ok(RankingResult {
        id: instance.id.clone(),
        scheme: options.scheme,
        layer_range: prepared.layer_range,
        ranked,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn output_from_layers(layers: Vec<Array2<f64>>) -> EncoderOutput<f64> {
        let t = layers[0].nrows();
        let n = layers.len() - 1;
        EncoderOutput {
            hidden: layers,
            attentions: vec![Array3::from_elem((1, t, t), 1.0 / t as f64); n],
            logits: Array2::zeros((t, 2)),
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[0.3, -0.2, 0.9], &[0.3, -0.2, 0.9]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_vector_cosine_is_counted() {
        let before = degenerate_cosine_count();
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(degenerate_cosine_count() > before);
    }

    #[test]
    fn representation_width_follows_layer_range() {
        let layers: Vec<Array2<f64>> = (0..=6)
            .map(|l| Array2::from_elem((4, 3), l as f64))
            .collect();
        let out = output_from_layers(layers);
        let range = LayerRange::default_for(6).unwrap();
        let r = represent(&out, 1..2, range).unwrap();
        assert_eq!(r.0, vec![3.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn opposite_vectors_pool_to_zero() {
        let mut layers: Vec<Array2<f64>> = (0..=4).map(|_| Array2::zeros((4, 2))).collect();
        for h in layers.iter_mut() {
            h.row_mut(1).assign(&ndarray::arr1(&[1.5, -2.0]));
            h.row_mut(2).assign(&ndarray::arr1(&[-1.5, 2.0]));
        }
        let out = output_from_layers(layers);
        let r = represent(&out, 1..3, LayerRange { start: 1, end: 4 }).unwrap();
        assert!(r.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_alignment_is_a_consistency_error() {
        let layers: Vec<Array2<f64>> = (0..=4).map(|_| Array2::from_elem((4, 2), 1.0)).collect();
        let out = output_from_layers(layers);
        let weights = TokenWeights {
            scheme: Scheme::UniformOne,
            positions: vec![1, 3],
            weights: vec![1.0, 1.0],
            target_weight: 1.0,
            target: TargetWeighting::Fixed,
        };
        let alignment = Alignment {
            pairs: vec![(0, 0), (1, 1)],
            original_target_span: 2..3,
            substituted_target_span: 2..3,
        };
        let err = substitution_score(
            &out,
            &out,
            &weights,
            &alignment,
            LayerRange { start: 3, end: 4 },
        );
        assert!(matches!(err, Err(Error::Consistency(_))));
    }

    #[test]
    fn ranking_tie_break_is_lexicographic() {
        let mut ranked = vec![
            RankedCandidate {
                candidate: "b".into(),
                score: 1.0,
            },
            RankedCandidate {
                candidate: "c".into(),
                score: 2.0,
            },
            RankedCandidate {
                candidate: "a".into(),
                score: 1.0,
            },
        ];
        sort_ranked(&mut ranked);
        let order: Vec<&str> = ranked.iter().map(|r| r.candidate.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }
}
