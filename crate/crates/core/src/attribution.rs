//! Influence of context tokens on the target, and its normalization into
//! per-token weights.
//!
//! Two raw scores are available: aggregated attention (context query rows
//! attending to the target key columns, averaged over heads and a layer
//! range) and integrated gradients (path integral from a pad-token baseline
//! to the input with the target masked). Raw scores are turned into weights by
//! a softmax over the context tokens; the target weight is handled separately.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{evaluate_target, EncoderBackend, EncoderOutput, TargetFunction, TargetMode};
use crate::error::{Error, Result};
use crate::scalar::{softmax, Scalar, Total};
use crate::tokenizer::{TokenId, TokenizedSentence, MASK_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Only the target-position similarity counts.
    TargetOnly,
    /// Every token, target included, weighs 1.
    UniformOne,
    Attention,
    IntegratedGradients,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::TargetOnly,
        Scheme::UniformOne,
        Scheme::Attention,
        Scheme::IntegratedGradients,
    ];

    pub fn uses_softmax(self) -> bool {
        matches!(self, Scheme::Attention | Scheme::IntegratedGradients)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::TargetOnly => "target",
            Scheme::UniformOne => "one",
            Scheme::Attention => "attn",
            Scheme::IntegratedGradients => "ig",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TargetOnly => "target_only",
            Scheme::UniformOne => "uniform_one",
            Scheme::Attention => "attention",
            Scheme::IntegratedGradients => "integrated_gradients",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.short_name() == s || scheme.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// How the target token enters the weighted sum under softmax schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetWeighting {
    /// Target weight fixed to 1, softmax over the context only.
    Fixed,
    /// Target term dropped (weight 0).
    Dropped,
    /// Target raw score joins the softmax alongside the context.
    InSoftmax,
}

impl TargetWeighting {
    pub fn from_include_target(include_target: bool) -> Self {
        if include_target {
            TargetWeighting::Fixed
        } else {
            TargetWeighting::Dropped
        }
    }
}

/// Inclusive, 1-based range of encoder layers. Layer 0 (embeddings) is never
/// part of a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize, n_layers: usize) -> Result<Self> {
        if start == 0 || start > end || end > n_layers {
            return Err(Error::Config(format!(
                "layer range {start}:{end} invalid for {n_layers} layers"
            )));
        }
        Ok(LayerRange { start, end })
    }

    /// Third layer through the second-to-last.
    /// Layers 3 through `n_layers - 2`. A 4-layer model gets layer 3 alone.
    pub fn default_for(n_layers: usize) -> Result<Self> {
        if n_layers < 4 {
            return Err(Error::Config(format!(
                "default layer range needs n_layers >= 4, got {n_layers}"
            )));
        }
        LayerRange::new(3, (n_layers - 2).max(3), n_layers)
    }

    /// Clamp to `[1, n_layers]`; an empty result is a configuration error.
    pub fn clamped(self, n_layers: usize) -> Result<Self> {
        LayerRange::new(self.start.max(1), self.end.min(n_layers), n_layers)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    /// Parses `START:END` without checking it against a model.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("invalid layer range {s:?}, expected START:END"))
            })
        };
        let (a, b) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!("invalid layer range {s:?}, expected START:END"))
        })?;
        Ok(LayerRange {
            start: parse(a)?,
            end: parse(b)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IgConfig {
    pub steps: usize,
    pub mode: TargetMode,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            steps: 32,
            mode: TargetMode::VocabProb,
        }
    }
}

/// Raw (unnormalized) influence of each context token on the target.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScores<T> {
    /// Original-sentence token positions, ascending.
    pub positions: Vec<usize>,
    pub scores: Vec<T>,
    /// Score of the target itself; only used when it joins the softmax.
    pub target_score: T,
}

/// Normalized weights over the original sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights<T> {
    pub scheme: Scheme,
    pub positions: Vec<usize>,
    pub weights: Vec<T>,
    pub target_weight: T,
    pub target: TargetWeighting,
}

impl<T: Scalar> TokenWeights<T> {
    pub fn include_target(&self) -> bool {
        self.target_weight > T::zero()
    }

    pub fn weight_of(&self, position: usize) -> Option<T> {
        self.positions
            .binary_search(&position)
            .ok()
            .map(|i| self.weights[i])
    }
}

/// Head- and layer-averaged attention from each context token (query) to the
/// target span (keys), averaged over the span's columns.
pub fn attention_scores<T: Scalar>(
    output: &EncoderOutput<T>,
    target_span: Range<usize>,
    context: &[usize],
    layer_range: LayerRange,
) -> Result<RawScores<T>> {
    let range = layer_range.clamped(output.n_layers())?;
    let seq_len = output.seq_len();
    check_positions(seq_len, &target_span, context)?;

    let mut mean = Array2::<T>::zeros((seq_len, seq_len));
    let mut count = 0usize;
    for l in range.layers() {
        for head in output.attentions[l - 1].axis_iter(Axis(0)) {
            mean += &head;
            count += 1;
        }
    }
    let count = T::of_usize(count);
    mean.mapv_inplace(|v| v / count);

    let span_len = T::of_usize(target_span.len());
    let to_target = |row: usize| target_span.clone().map(|t| mean[[row, t]]).total() / span_len;
    let scores = context.iter().map(|&i| to_target(i)).collect();
    let target_score = target_span.clone().map(to_target).total() / span_len;
    Ok(RawScores {
        positions: context.to_vec(),
        scores,
        target_score,
    })
}

fn check_positions(seq_len: usize, target_span: &Range<usize>, context: &[usize]) -> Result<()> {
    if target_span.is_empty() || target_span.end > seq_len {
        return Err(Error::Input(format!(
            "target span {target_span:?} invalid for length {seq_len}"
        )));
    }
    if let Some(&bad) = context
        .iter()
        .find(|&&i| i >= seq_len || target_span.contains(&i))
    {
        return Err(Error::Input(format!("context position {bad} invalid")));
    }
    if context.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input(
            "context positions must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Replace the whole target span with a single mask token.
pub fn mask_target(token_ids: &[TokenId], target_span: Range<usize>) -> Vec<TokenId> {
    let mut masked = token_ids[..target_span.start].to_vec();
    masked.push(MASK_ID);
    masked.extend(&token_ids[target_span.end..]);
    masked
}

/// Left-Riemann integrated gradients:
/// `(x - x') ⊙ (1/m) Σ_{k<m} ∇F(x' + (k/m)(x - x'))`.
pub fn riemann_integrated_gradients<T: Scalar>(
    input: &Array2<T>,
    baseline: &Array2<T>,
    steps: usize,
    mut gradient: impl FnMut(&Array2<T>) -> Result<Array2<T>>,
) -> Result<Array2<T>> {
    if steps == 0 {
        return Err(Error::Config(
            "integrated gradients needs at least one step".into(),
        ));
    }
    if input.dim() != baseline.dim() {
        return Err(Error::Input("input and baseline shapes differ".into()));
    }
    let delta = input - baseline;
    let mut accumulated = Array2::<T>::zeros(input.dim());
    let m = T::of_usize(steps);
    for k in 0..steps {
        let alpha = T::of_usize(k) / m;
        let point = baseline + &delta.mapv(|d| d * alpha);
        accumulated += &gradient(&point)?;
    }
    accumulated.mapv_inplace(|g| g / m);
    Ok(delta * accumulated)
}

/// Per-token integrated-gradients attribution over a masked sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct IgAttribution<T> {
    /// Sum over embedding dimensions, one entry per masked-sequence token.
    pub per_token: Vec<T>,
    /// `F` at the input.
    pub at_input: T,
    /// `F` at the pad-token baseline.
    pub at_baseline: T,
}

impl<T: Scalar> IgAttribution<T> {
    /// `|Σ a_i - (F(x) - F(x'))| / max(|F(x) - F(x')|, 1e-12)`.
    pub fn completeness_error(&self) -> f64 {
        let total: f64 = self.per_token.iter().map(|v| v.as_f64()).sum();
        let diff = self.at_input.as_f64() - self.at_baseline.as_f64();
        (total - diff).abs() / diff.abs().max(1e-12)
    }
}

/// Integrated gradients of `f` for `masked_ids` against a baseline of pad
/// embeddings at every position.
pub fn ig_attribution<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &B,
    masked_ids: &[TokenId],
    f: &TargetFunction,
    steps: usize,
) -> Result<IgAttribution<T>> {
    let input = backend.embed(masked_ids)?;
    let baseline = backend.embed(&vec![PAD_ID; masked_ids.len()])?;
    let ig = riemann_integrated_gradients(&input, &baseline, steps, |point| {
        backend.gradient_wrt_embeddings(point, f)
    })?;
    Ok(IgAttribution {
        per_token: ig.sum_axis(Axis(1)).to_vec(),
        at_input: evaluate_target(&backend.encode_from_embeddings(&input)?, f)?,
        at_baseline: evaluate_target(&backend.encode_from_embeddings(&baseline)?, f)?,
    })
}

/// Integrated-gradients raw scores `|a_i|` for the context tokens of the
/// original sentence. The target span is masked; for vocabulary-probability
/// objectives the explained token is the target's first subword.
pub fn integrated_gradients<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &B,
    token_ids: &[TokenId],
    target_span: Range<usize>,
    context: &[usize],
    ig: IgConfig,
) -> Result<RawScores<T>> {
    check_positions(token_ids.len(), &target_span, context)?;
    let masked = mask_target(token_ids, target_span.clone());
    let mask_position = target_span.start;
    let f = TargetFunction::new(ig.mode, mask_position, Some(token_ids[target_span.start]))?;
    let attribution = ig_attribution(backend, &masked, &f, ig.steps)?;

    // Original positions after the span move left by span_len - 1.
    let to_masked = |i: usize| {
        if i < target_span.start {
            i
        } else {
            i - target_span.len() + 1
        }
    };
    Ok(RawScores {
        positions: context.to_vec(),
        scores: context
            .iter()
            .map(|&i| attribution.per_token[to_masked(i)].abs())
            .collect(),
        target_score: attribution.per_token[mask_position].abs(),
    })
}

/// Raw scores for `scheme`; schemes without raw scores yield zeros.
pub fn raw_scores<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &B,
    sentence: &TokenizedSentence,
    output: &EncoderOutput<T>,
    scheme: Scheme,
    layer_range: LayerRange,
    ig: IgConfig,
    include_specials: bool,
) -> Result<RawScores<T>> {
    let span = sentence.target()?;
    let context = sentence.context_positions(include_specials)?;
    match scheme {
        Scheme::Attention => attention_scores(output, span, &context, layer_range),
        Scheme::IntegratedGradients => {
            integrated_gradients(backend, &sentence.token_ids, span, &context, ig)
        }
        Scheme::TargetOnly | Scheme::UniformOne => Ok(RawScores {
            scores: vec![T::zero(); context.len()],
            positions: context,
            target_score: T::zero(),
        }),
    }
}

/// Turn raw scores into weights for `scheme`.
pub fn normalize<T: Scalar>(
    raw: &RawScores<T>,
    scheme: Scheme,
    target: TargetWeighting,
) -> Result<TokenWeights<T>> {
    let n = raw.positions.len();
    let (weights, target_weight) = match scheme {
        Scheme::TargetOnly => (vec![T::zero(); n], T::one()),
        Scheme::UniformOne => (vec![T::one(); n], T::one()),
        Scheme::Attention | Scheme::IntegratedGradients => {
            if n == 0 {
                return Err(Error::Degenerate(
                    "no context tokens to normalize over".into(),
                ));
            }
            match target {
                TargetWeighting::Fixed => (softmax(&raw.scores), T::one()),
                TargetWeighting::Dropped => (softmax(&raw.scores), T::zero()),
                TargetWeighting::InSoftmax => {
                    let mut all = raw.scores.clone();
                    all.push(raw.target_score);
                    let mut w = softmax(&all);
                    let t = w.pop().expect("target appended");
                    (w, t)
                }
            }
        }
    };
    Ok(TokenWeights {
        scheme,
        positions: raw.positions.clone(),
        weights,
        target_weight,
        target,
    })
}

/// One line of the attribution dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub token: String,
    pub position: usize,
    pub raw_score: Option<f64>,
    pub weight: f64,
    pub scheme: Scheme,
    pub is_target: bool,
}

/// Dump rows for every weighted token (context and target span), in
/// sentence order.
pub fn attribution_records<T: Scalar>(
    sentence: &TokenizedSentence,
    raw: &RawScores<T>,
    weights: &TokenWeights<T>,
) -> Result<Vec<AttributionRecord>> {
    let span = sentence.target()?;
    let has_raw = weights.scheme.uses_softmax();
    let mut records = Vec::new();
    for position in 0..sentence.len() {
        let record = if span.contains(&position) {
            AttributionRecord {
                token: sentence.surface(position),
                position,
                raw_score: has_raw.then(|| raw.target_score.as_f64()),
                weight: weights.target_weight.as_f64(),
                scheme: weights.scheme,
                is_target: true,
            }
        } else if let Ok(i) = raw.positions.binary_search(&position) {
            AttributionRecord {
                token: sentence.surface(position),
                position,
                raw_score: has_raw.then(|| raw.scores[i].as_f64()),
                weight: weights.weights[i].as_f64(),
                scheme: weights.scheme,
                is_target: false,
            }
        } else {
            continue;
        };
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn raw(scores: Vec<f64>) -> RawScores<f64> {
        RawScores {
            positions: (1..=scores.len()).collect(),
            scores,
            target_score: 0.0,
        }
    }

    #[test]
    fn equal_scores_split_evenly() {
        let w = normalize(
            &raw(vec![0.0, 0.0]),
            Scheme::Attention,
            TargetWeighting::Fixed,
        )
        .unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(w.target_weight, 1.0);
    }

    #[test]
    fn log_two_gives_two_thirds() {
        let w = normalize(
            &raw(vec![2f64.ln(), 0.0]),
            Scheme::IntegratedGradients,
            TargetWeighting::Dropped,
        )
        .unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.target_weight, 0.0);
    }

    #[test]
    fn degenerate_schemes() {
        let scores = raw(vec![0.3, 0.9, 0.1]);
        let t = normalize(&scores, Scheme::TargetOnly, TargetWeighting::Fixed).unwrap();
        assert_eq!(t.target_weight, 1.0);
        assert!(t.weights.iter().all(|&w| w == 0.0));
        let one = normalize(&scores, Scheme::UniformOne, TargetWeighting::Dropped).unwrap();
        assert_eq!(one.target_weight, 1.0);
        assert!(one.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn softmax_without_context_is_an_error() {
        let empty = raw(vec![]);
        assert!(matches!(
            normalize(&empty, Scheme::Attention, TargetWeighting::Fixed),
            Err(Error::Degenerate(_))
        ));
        assert!(normalize(&empty, Scheme::UniformOne, TargetWeighting::Fixed).is_ok());
    }

    #[test]
    fn target_in_softmax_shares_the_mass() {
        let mut scores = raw(vec![0.0, 0.0]);
        scores.target_score = 0.0;
        let w = normalize(&scores, Scheme::Attention, TargetWeighting::InSoftmax).unwrap();
        let total: f64 = w.weights.iter().sum::<f64>() + w.target_weight;
        assert!((total - 1.0).abs() < 1e-15);
        assert!((w.target_weight - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn layer_ranges() {
        assert_eq!(
            LayerRange::default_for(24).unwrap(),
            LayerRange { start: 3, end: 22 }
        );
        assert_eq!(LayerRange::default_for(6).unwrap().len(), 2);
        assert!(LayerRange::default_for(4).is_ok());
        assert!(LayerRange::default_for(3).is_err());
        let r: LayerRange = "2:9".parse().unwrap();
        assert_eq!(r.clamped(6).unwrap(), LayerRange { start: 2, end: 6 });
        assert!(LayerRange { start: 8, end: 9 }.clamped(6).is_err());
        assert!("3-4".parse::<LayerRange>().is_err());
    }

    #[test]
    fn scheme_names_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.short_name().parse::<Scheme>().unwrap(), s);
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("nope".parse::<Scheme>().is_err());
    }

    fn output_with(attn: Vec<Array3<f64>>) -> EncoderOutput<f64> {
        let t = attn[0].dim().1;
        EncoderOutput {
            hidden: vec![Array2::zeros((t, 2)); attn.len() + 1],
            attentions: attn,
            logits: Array2::zeros((t, 3)),
        }
    }

    #[test]
    fn single_head_reads_tensor_directly() {
        let a = array![[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.25, 0.25, 0.5]];
        let out = output_with(vec![a.clone().insert_axis(Axis(0))]);
        let s = attention_scores(&out, 1..2, &[0, 2], LayerRange { start: 1, end: 1 }).unwrap();
        assert_eq!(s.scores, vec![a[[0, 1]], a[[2, 1]]]);
        assert_eq!(s.target_score, a[[1, 1]]);
    }

    #[test]
    fn uniform_attention_gives_equal_scores() {
        let a = Array3::from_elem((2, 4, 4), 0.25);
        let out = output_with(vec![a.clone(), a]);
        let s = attention_scores(&out, 2..3, &[0, 1, 3], LayerRange { start: 1, end: 2 }).unwrap();
        assert!(s.scores.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn multi_piece_target_averages_columns() {
        let a = array![
            [0.1, 0.2, 0.3, 0.4],
            [0.25, 0.25, 0.25, 0.25],
            [0.4, 0.3, 0.2, 0.1],
            [0.7, 0.1, 0.1, 0.1]
        ];
        let out = output_with(vec![a.insert_axis(Axis(0))]);
        let s = attention_scores(&out, 1..3, &[0, 3], LayerRange { start: 1, end: 1 }).unwrap();
        assert!((s.scores[0] - 0.25).abs() < 1e-15);
        assert!((s.scores[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bad_positions_are_rejected() {
        let out = output_with(vec![Array3::from_elem((1, 3, 3), 1.0 / 3.0)]);
        let r = LayerRange { start: 1, end: 1 };
        assert!(attention_scores(&out, 1..2, &[1], r).is_err());
        assert!(attention_scores(&out, 1..2, &[5], r).is_err());
        assert!(attention_scores(&out, 1..4, &[0], r).is_err());
    }

    #[test]
    fn linear_function_integrates_exactly() {
        let w = array![[0.5, -1.0], [2.0, 0.25], [-3.0, 1.5]];
        let x = array![[1.0, 2.0], [-0.5, 4.0], [0.75, -1.0]];
        let zero = Array2::zeros((3, 2));
        for steps in [1, 2, 7] {
            let ig = riemann_integrated_gradients(&x, &zero, steps, |_| Ok(w.clone())).unwrap();
            for (i, v) in ig.iter().enumerate() {
                let (r, c) = (i / 2, i % 2);
                assert_eq!(*v, w[[r, c]] * x[[r, c]]);
            }
        }
        assert!(riemann_integrated_gradients(&x, &zero, 0, |_| Ok(w.clone())).is_err());
    }

    #[test]
    fn mask_replaces_whole_span() {
        assert_eq!(
            mask_target(&[2, 10, 11, 12, 3], 1..3),
            vec![2, MASK_ID, 12, 3]
        );
    }

    proptest! {
        #[test]
        fn softmax_weights_properties(
            scores in prop::collection::vec(-5.0f64..5.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let w = normalize(&raw(scores.clone()), Scheme::Attention, TargetWeighting::Fixed).unwrap();
            let total: f64 = w.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));

            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let w2 = normalize(&raw(shifted), Scheme::Attention, TargetWeighting::Fixed).unwrap();
            for (a, b) in w.weights.iter().zip(&w2.weights) {
                prop_assert!((a - b).abs() < 1e-12);
            }

            let argmax = |v: &[f64]| v.iter().enumerate()
                .fold(0, |best, (i, &x)| if x > v[best] { i } else { best });
            let top = argmax(&scores);
            prop_assert!(w.weights.iter().all(|&x| x <= w.weights[top]));
        }
    }
}
