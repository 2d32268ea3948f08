//! Deterministic reference transformer encoder and the backend contract.
//!
//! The reference encoder is a small post-layer-norm transformer whose weights
//! are drawn from a SplitMix64 stream, so that any implementation seeded the
//! same way builds bit-identical parameters. It exposes everything the ranking
//! pipeline needs from a language model: per-layer hidden states, per-head
//! attention maps, vocabulary logits, embedding injection and exact gradients
//! with respect to the injected embeddings.
//!
//! External models plug in through [`EncoderBackend`]. Backends that cannot
//! inject embeddings or differentiate keep the default methods, which report a
//! [`Error::Capability`].

mod backward;
pub mod conformance;
mod forward;
mod init;
mod io;

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{softmax, Scalar, Total};
use crate::tokenizer::TokenId;

pub use init::{uniform_weight, WeightStream};

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn small(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 32,
            n_heads: 4,
            n_layers: 6,
            ffn_dim: 64,
            max_positions: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers < 4 {
            return Err(Error::Config(format!(
                "n_layers must be at least 4, got {}",
                self.n_layers
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Everything a forward pass exposes for one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// `n_layers + 1` matrices of shape `seq_len × d_model`; index 0 is the
    /// embedding output, index `l` the output of layer `l`.
    pub hidden: Vec<Array2<T>>,
    /// One `n_heads × seq_len × seq_len` tensor per layer, rows are queries.
    pub attentions: Vec<Array3<T>>,
    /// `seq_len × vocab_size`.
    pub logits: Array2<T>,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn seq_len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.attentions.len()
    }

    pub fn final_hidden(&self) -> &Array2<T> {
        self.hidden.last().expect("at least the embedding layer")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Vocabulary probability of a token id at the target position.
    VocabProb,
    /// Euclidean norm of the final hidden vector at the target position.
    L2Norm,
}

/// Scalar function of an encoder output that attribution explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFunction {
    VocabProb { position: usize, token_id: TokenId },
    L2Norm { position: usize },
}

impl TargetFunction {
    pub fn new(mode: TargetMode, position: usize, token_id: Option<TokenId>) -> Result<Self> {
        match (mode, token_id) {
            (TargetMode::VocabProb, Some(token_id)) => {
                Ok(TargetFunction::VocabProb { position, token_id })
            }
            (TargetMode::VocabProb, None) => Err(Error::Input(
                "vocab_prob target function requires a token id".into(),
            )),
            (TargetMode::L2Norm, _) => Ok(TargetFunction::L2Norm { position }),
        }
    }

    pub fn position(&self) -> usize {
        match *self {
            TargetFunction::VocabProb { position, .. } | TargetFunction::L2Norm { position } => {
                position
            }
        }
    }

    pub fn mode(&self) -> TargetMode {
        match self {
            TargetFunction::VocabProb { .. } => TargetMode::VocabProb,
            TargetFunction::L2Norm { .. } => TargetMode::L2Norm,
        }
    }

    fn check<T: Scalar>(&self, output: &EncoderOutput<T>) -> Result<()> {
        let position = self.position();
        if position >= output.seq_len() {
            return Err(Error::Input(format!(
                "target position {position} out of bounds for length {}",
                output.seq_len()
            )));
        }
        if let TargetFunction::VocabProb { token_id, .. } = *self {
            if token_id as usize >= output.logits.ncols() {
                return Err(Error::Input(format!(
                    "target token id {token_id} outside vocabulary of {}",
                    output.logits.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Evaluate a target function on a forward-pass output.
pub fn evaluate_target<T: Scalar>(output: &EncoderOutput<T>, f: &TargetFunction) -> Result<T> {
    f.check(output)?;
    Ok(match *f {
        TargetFunction::VocabProb { position, token_id } => {
            let row = output.logits.row(position);
            softmax(row.as_slice().expect("logits are contiguous"))[token_id as usize]
        }
        TargetFunction::L2Norm { position } => l2_norm(output.final_hidden().row(position)),
    })
}

pub(crate) fn l2_norm<T: Scalar>(v: ArrayView1<T>) -> T {
    v.iter().map(|&x| x * x).total().sqrt()
}

/// Capabilities the ranking pipeline needs from a language model.
///
/// `encode` is mandatory. Integrated gradients additionally needs `embed`,
/// `encode_from_embeddings` and `gradient_wrt_embeddings`; the defaults report
/// the missing capability so attention-only backends stay usable.
pub trait EncoderBackend<T: Scalar>: Send + Sync {
    fn n_layers(&self) -> usize;

    fn d_model(&self) -> usize;

    fn encode(&self, token_ids: &[TokenId]) -> Result<EncoderOutput<T>>;

    /// Token-embedding rows for `token_ids` (no positional component).
    fn embed(&self, _token_ids: &[TokenId]) -> Result<Array2<T>> {
        Err(Error::Capability("embedding lookup"))
    }

    fn encode_from_embeddings(&self, _token_embeddings: &Array2<T>) -> Result<EncoderOutput<T>> {
        Err(Error::Capability("embedding injection"))
    }

    fn gradient_wrt_embeddings(
        &self,
        _token_embeddings: &Array2<T>,
        _f: &TargetFunction,
    ) -> Result<Array2<T>> {
        Err(Error::Capability("gradients"))
    }
}

/// Weights of one encoder layer, all `x · W` oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
    /// `d_model × ffn_dim`
    pub w_ff1: Array2<T>,
    /// `ffn_dim × d_model`
    pub w_ff2: Array2<T>,
}

/// The reference encoder. Immutable after construction.
///
/// Biases are identically zero and layer norms have unit gain and zero
/// offset, so neither is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEncoder<T> {
    config: EncoderConfig,
    token_embedding: Array2<T>,
    positions: Array2<T>,
    layers: Vec<LayerWeights<T>>,
    diagonal_attention: bool,
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut stream = WeightStream::new(config.seed);
        Ok(Self::from_parameters(config, || {
            T::of(stream.next_weight())
        }))
    }

    pub(crate) fn from_parameters(config: EncoderConfig, mut next: impl FnMut() -> T) -> Self {
        let d = config.d_model;
        let mut matrix = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| next());
        let token_embedding = matrix(config.vocab_size, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                w_q: matrix(d, d),
                w_k: matrix(d, d),
                w_v: matrix(d, d),
                w_o: matrix(d, d),
                w_ff1: matrix(d, config.ffn_dim),
                w_ff2: matrix(config.ffn_dim, d),
            })
            .collect();
        ReferenceEncoder {
            config,
            token_embedding,
            positions: sinusoidal_positions(config.max_positions, d),
            layers,
            diagonal_attention: false,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `vocab_size × d_model`, also used as the tied output head.
    pub fn token_embedding(&self) -> &Array2<T> {
        &self.token_embedding
    }

    /// `max_positions × d_model` sinusoidal table.
    pub fn positions(&self) -> &Array2<T> {
        &self.positions
    }

    pub fn layers(&self) -> &[LayerWeights<T>] {
        &self.layers
    }

    /// All learned parameters in fill order.
    pub fn parameters(&self) -> impl Iterator<Item = T> + '_ {
        let per_layer = self.layers.iter().flat_map(|layer| {
            [
                &layer.w_q,
                &layer.w_k,
                &layer.w_v,
                &layer.w_o,
                &layer.w_ff1,
                &layer.w_ff2,
            ]
            .into_iter()
            .flat_map(|m| m.iter().copied())
        });
        self.token_embedding.iter().copied().chain(per_layer)
    }

    #[cfg(test)]
    pub(crate) fn force_diagonal_attention(mut self) -> Self {
        self.diagonal_attention = true;
        self
    }

    fn check_ids(&self, token_ids: &[TokenId]) -> Result<()> {
        self.check_length(token_ids.len())?;
        if let Some(&bad) = token_ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Input("empty token sequence".into()));
        }
        if len > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence length {len} exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        Ok(())
    }

    fn check_embeddings(&self, token_embeddings: &Array2<T>) -> Result<()> {
        self.check_length(token_embeddings.nrows())?;
        if token_embeddings.ncols() != self.config.d_model {
            return Err(Error::Input(format!(
                "embedding width {} does not match d_model {}",
                token_embeddings.ncols(),
                self.config.d_model
            )));
        }
        Ok(())
    }

    pub fn lookup(&self, token_ids: &[TokenId]) -> Result<Array2<T>> {
        self.check_ids(token_ids)?;
        let d = self.config.d_model;
        Ok(Array2::from_shape_fn((token_ids.len(), d), |(i, j)| {
            self.token_embedding[[token_ids[i] as usize, j]]
        }))
    }

    pub fn encode(&self, token_ids: &[TokenId]) -> Result<EncoderOutput<T>> {
        let embeddings = self.lookup(token_ids)?;
        Ok(self.forward(&embeddings).0)
    }

    pub fn encode_from_embeddings(&self, token_embeddings: &Array2<T>) -> Result<EncoderOutput<T>> {
        self.check_embeddings(token_embeddings)?;
        Ok(self.forward(token_embeddings).0)
    }

    /// Exact gradient of `f(encode_from_embeddings(e))` with respect to `e`.
    pub fn gradient_wrt_embeddings(
        &self,
        token_embeddings: &Array2<T>,
        f: &TargetFunction,
    ) -> Result<Array2<T>> {
        self.gradient_scaled(token_embeddings, f, T::one())
    }

    /// Reverse-mode pass seeded with `upstream` as the derivative of the
    /// objective with respect to `f`.
    pub(crate) fn gradient_scaled(
        &self,
        token_embeddings: &Array2<T>,
        f: &TargetFunction,
        upstream: T,
    ) -> Result<Array2<T>> {
        self.check_embeddings(token_embeddings)?;
        let (output, tape) = self.forward(token_embeddings);
        f.check(&output)?;
        Ok(self.backward(&output, &tape, f, upstream))
    }
}

impl<T: Scalar> EncoderBackend<T> for ReferenceEncoder<T> {
    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn encode(&self, token_ids: &[TokenId]) -> Result<EncoderOutput<T>> {
        ReferenceEncoder::encode(self, token_ids)
    }

    fn embed(&self, token_ids: &[TokenId]) -> Result<Array2<T>> {
        self.lookup(token_ids)
    }

    fn encode_from_embeddings(&self, token_embeddings: &Array2<T>) -> Result<EncoderOutput<T>> {
        ReferenceEncoder::encode_from_embeddings(self, token_embeddings)
    }

    fn gradient_wrt_embeddings(
        &self,
        token_embeddings: &Array2<T>,
        f: &TargetFunction,
    ) -> Result<Array2<T>> {
        ReferenceEncoder::gradient_wrt_embeddings(self, token_embeddings, f)
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(…)`.
pub fn sinusoidal_positions<T: Scalar>(max_positions: usize, d_model: usize) -> Array2<T> {
    Array2::from_shape_fn((max_positions, d_model), |(p, j)| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}
