use ndarray::{s, Array1, Array2, Array3, Axis};

use super::{EncoderOutput, ReferenceEncoder, LAYER_NORM_EPS};
use crate::scalar::{Scalar, Total};

/// Intermediate values of one layer kept for the reverse pass.
pub(super) struct LayerTape<T> {
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Output of the first layer norm.
    pub norm1: Array2<T>,
    pub sigma1: Array1<T>,
    /// Feed-forward pre-activation.
    pub ff_pre: Array2<T>,
    pub sigma2: Array1<T>,
}

pub(super) struct Tape<T> {
    pub layers: Vec<LayerTape<T>>,
}

/// Parameter-free layer norm over each row. Returns the normalized rows and
/// the per-row `sqrt(var + eps)`.
pub(super) fn layer_norm<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let eps = T::of(LAYER_NORM_EPS);
    let width = T::of_usize(x.ncols());
    let mut out = x.clone();
    let mut sigmas = Array1::zeros(x.nrows());
    for (mut row, sigma) in out.rows_mut().into_iter().zip(sigmas.iter_mut()) {
        let mean = row.iter().copied().total() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).total() / width;
        *sigma = (var + eps).sqrt();
        let s = *sigma;
        row.mapv_inplace(|v| v / s);
    }
    (out, sigmas)
}

/// Row-wise softmax of a square score matrix, in place.
fn softmax_rows<T: Scalar>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.iter().copied().total();
        row.mapv_inplace(|v| v / total);
    }
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub(super) fn forward(&self, token_embeddings: &Array2<T>) -> (EncoderOutput<T>, Tape<T>) {
        let seq_len = token_embeddings.nrows();
        let n_heads = self.config.n_heads;
        let head_dim = self.config.head_dim();
        let scale = T::one() / T::of_usize(head_dim).sqrt();

        let mut x = token_embeddings + &self.positions.slice(s![..seq_len, ..]);
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut attentions = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        hidden.push(x.clone());

        for layer in &self.layers {
            let q = x.dot(&layer.w_q);
            let k = x.dot(&layer.w_k);
            let v = x.dot(&layer.w_v);

            let mut attn = Array3::zeros((n_heads, seq_len, seq_len));
            let mut context = Array2::zeros((seq_len, self.config.d_model));
            for h in 0..n_heads {
                let cols = s![.., h * head_dim..(h + 1) * head_dim];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let mut scores = qh.dot(&kh.t()).mapv(|v| v * scale);
                if self.diagonal_attention {
                    for ((i, j), value) in scores.indexed_iter_mut() {
                        if i != j {
                            *value = T::neg_infinity();
                        }
                    }
                }
                softmax_rows(&mut scores);
                context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.index_axis_mut(Axis(0), h).assign(&scores);
            }

            let (norm1, sigma1) = layer_norm(&(&x + &context.dot(&layer.w_o)));
            let ff_pre = norm1.dot(&layer.w_ff1);
            let ff_act = ff_pre.mapv(|v| v.max(T::zero()));
            let (out, sigma2) = layer_norm(&(&norm1 + &ff_act.dot(&layer.w_ff2)));

            tapes.push(LayerTape {
                q,
                k,
                v,
                norm1,
                sigma1,
                ff_pre,
                sigma2,
            });
            attentions.push(attn);
            hidden.push(out.clone());
            x = out;
        }

        let logits = x.dot(&self.token_embedding.t());
        (
            EncoderOutput {
                hidden,
                attentions,
                logits,
            },
            Tape { layers: tapes },
        )
    }
}
