//! Invariant checks any [`EncoderBackend`] must satisfy. Out-of-tree adapters
//! can call these from their own test suites.

use super::EncoderBackend;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer::TokenId;

/// Every attention row is a probability distribution (rows sum to 1 within
/// `tol`, entries in `[0, 1]`) and every output value is finite.
pub fn check_attention_stochastic<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &B,
    token_ids: &[TokenId],
    tol: f64,
) -> Result<()> {
    let out = backend.encode(token_ids)?;
    if out.attentions.len() != backend.n_layers() {
        return Err(Error::Consistency(format!(
            "expected {} attention tensors, got {}",
            backend.n_layers(),
            out.attentions.len()
        )));
    }
    for (l, attn) in out.attentions.iter().enumerate() {
        for (h, head) in attn.outer_iter().enumerate() {
            for (i, row) in head.rows().into_iter().enumerate() {
                let total: f64 = row.iter().map(|v| v.as_f64()).sum();
                if (total - 1.0).abs() > tol {
                    return Err(Error::Consistency(format!(
                        "layer {} head {h} row {i} sums to {total}",
                        l + 1
                    )));
                }
                if row.iter().any(|&v| v < T::zero() || v > T::one()) {
                    return Err(Error::Consistency(format!(
                        "layer {} head {h} row {i} has an entry outside [0, 1]",
                        l + 1
                    )));
                }
            }
        }
    }
    let finite = out.hidden.iter().all(|m| m.iter().all(|v| v.is_finite()))
        && out.logits.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Consistency(
            "non-finite value in encoder output".into(),
        ));
    }
    Ok(())
}

/// Injecting the looked-up embeddings reproduces `encode` exactly.
pub fn check_injection_consistency<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &B,
    token_ids: &[TokenId],
) -> Result<()> {
    let direct = backend.encode(token_ids)?;
    let injected = backend.encode_from_embeddings(&backend.embed(token_ids)?)?;
    if direct != injected {
        return Err(Error::Consistency(
            "encode_from_embeddings(embed(ids)) differs from encode(ids)".into(),
        ));
    }
    Ok(())
}
