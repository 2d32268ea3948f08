use ndarray::{s, Array1, Array2, Axis};

use super::forward::Tape;
use super::{EncoderOutput, ReferenceEncoder, TargetFunction};
use crate::scalar::{softmax, Scalar, Total};

/// Reverse pass through a parameter-free layer norm given its output `y` and
/// per-row `sigma`: `dx = (dy - mean(dy) - y * mean(dy * y)) / sigma`.
fn layer_norm_backward<T: Scalar>(y: &Array2<T>, sigma: &Array1<T>, dy: &Array2<T>) -> Array2<T> {
    let width = T::of_usize(y.ncols());
    let mut dx = dy.clone();
    for ((mut dx_row, y_row), &s) in dx.rows_mut().into_iter().zip(y.rows()).zip(sigma) {
        let mean_dy = dx_row.iter().copied().total() / width;
        let mean_dy_y = dx_row.iter().zip(y_row).map(|(&a, &b)| a * b).total() / width;
        for (d, &yv) in dx_row.iter_mut().zip(y_row) {
            *d = (*d - mean_dy - yv * mean_dy_y) / s;
        }
    }
    dx
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub(super) fn backward(
        &self,
        output: &EncoderOutput<T>,
        tape: &Tape<T>,
        f: &TargetFunction,
        upstream: T,
    ) -> Array2<T> {
        let seq_len = output.seq_len();
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let head_dim = self.config.head_dim();
        let scale = T::one() / T::of_usize(head_dim).sqrt();

        // Seed: derivative of the target with respect to the final hidden states.
        let mut grad = Array2::zeros((seq_len, d));
        match *f {
            TargetFunction::VocabProb { position, token_id } => {
                let row = output.logits.row(position);
                let probs = softmax(row.as_slice().expect("logits are contiguous"));
                let p_target = probs[token_id as usize];
                let mut d_logits = Array1::from_iter(probs.iter().map(|&p| -p_target * p));
                d_logits[token_id as usize] += p_target;
                d_logits.mapv_inplace(|v| v * upstream);
                grad.row_mut(position)
                    .assign(&d_logits.dot(&self.token_embedding));
            }
            TargetFunction::L2Norm { position } => {
                let h = output.final_hidden().row(position);
                let norm = super::l2_norm(h);
                grad.row_mut(position)
                    .assign(&h.mapv(|v| upstream * v / norm));
            }
        }

        for (l, (layer, cache)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            let layer_in = &output.hidden[l];
            let layer_out = &output.hidden[l + 1];
            let attn = &output.attentions[l];

            // Feed-forward block with residual.
            let d_sum2 = layer_norm_backward(layer_out, &cache.sigma2, &grad);
            let mut d_ff = d_sum2.dot(&layer.w_ff2.t());
            d_ff.zip_mut_with(&cache.ff_pre, |g, &pre| {
                if pre <= T::zero() {
                    *g = T::zero();
                }
            });
            let d_norm1 = &d_sum2 + &d_ff.dot(&layer.w_ff1.t());

            // Attention block with residual.
            let d_sum1 = layer_norm_backward(&cache.norm1, &cache.sigma1, &d_norm1);
            let d_context = d_sum1.dot(&layer.w_o.t());
            let mut d_q = Array2::zeros((seq_len, d));
            let mut d_k = Array2::zeros((seq_len, d));
            let mut d_v = Array2::zeros((seq_len, d));
            for h in 0..n_heads {
                let cols = s![.., h * head_dim..(h + 1) * head_dim];
                let a = attn.index_axis(Axis(0), h);
                let d_ctx_h = d_context.slice(cols);
                let d_attn = d_ctx_h.dot(&cache.v.slice(cols).t());
                d_v.slice_mut(cols).assign(&a.t().dot(&d_ctx_h));

                // Softmax Jacobian applied row-wise.
                let mut d_scores = Array2::zeros((seq_len, seq_len));
                for i in 0..seq_len {
                    let dot = a
                        .row(i)
                        .iter()
                        .zip(d_attn.row(i))
                        .map(|(&p, &g)| p * g)
                        .total();
                    for j in 0..seq_len {
                        d_scores[[i, j]] = a[[i, j]] * (d_attn[[i, j]] - dot) * scale;
                    }
                }
                d_q.slice_mut(cols)
                    .assign(&d_scores.dot(&cache.k.slice(cols)));
                d_k.slice_mut(cols)
                    .assign(&d_scores.t().dot(&cache.q.slice(cols)));
            }

            let mut d_in = d_sum1;
            d_in += &d_q.dot(&layer.w_q.t());
            d_in += &d_k.dot(&layer.w_k.t());
            d_in += &d_v.dot(&layer.w_v.t());
            debug_assert_eq!(d_in.dim(), layer_in.dim());
            grad = d_in;
        }

        // Positions are additive constants, so the embedding gradient passes through.
        grad
    }
}
