//! Composite differentiable losses built from tape primitives.

use super::{Tape, TensorId};
use crate::error::Result;

/// Kullback-Leibler divergence between softmax-normalized logit vectors:
/// `KL(softmax(p_logits) || softmax(q_logits))`.
///
/// Raw encoder features are not distributions, so both sides pass through
/// softmax before the divergence. Zero when the logits agree, nonnegative
/// always.
pub fn differentiable_kl(tape: &mut Tape, p_logits: TensorId, q_logits: TensorId) -> Result<TensorId> {
    let p = tape.softmax(p_logits)?;
    let q = tape.softmax(q_logits)?;
    let log_p = tape.log(p)?;
    let log_q = tape.log(q)?;
    let diff = tape.sub(log_p, log_q)?;
    let weighted = tape.mul(p, diff)?;
    tape.sum_all(weighted)
}
