//! Likelihood accounting over scored token sequences.
//!
//! Token sets follow the annotated-sequence categories:
//!
//! - original tokens (`T_org`): [`TokenCategory::Original`]
//! - loss-bearing tokens (`T_train`): every token with mask 1, i.e. all but
//!   retrieved values and `<|db_end|>`
//!
//! | metric               | sum over   | normalized by |
//! |----------------------|------------|---------------|
//! | [`nll`]              | `T_train`  | (none)        |
//! | [`ppl_over_original`]| `T_org`    | `|T_org|`     |
//! | [`ppl_normalized`]   | `T_train`  | `|T_org|`     |
//!
//! Static and dynamic perplexity share [`ppl_over_original`]; they differ
//! only in how the log-probabilities were produced.

mod offload;
mod scored;

use thiserror::Error;

pub use offload::{
    corrector_filter, delta_loss_records, rank_offload, top_count, DeltaLossRecord, OffloadRanking, FOLLOWING_WINDOW,
};
pub use scored::{ScoreMode, ScoredSequence, ScoredToken};

use crate::markup::TokenCategory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountingError {
    #[error("sequence has no original tokens")]
    EmptyOriginal,
    #[error("token {index}: {reason}")]
    InvalidToken { index: usize, reason: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Negative log-likelihood over mask==1 tokens, summed left to right.
pub fn nll(seq: &ScoredSequence) -> f64 {
    -seq.tokens()
        .iter()
        .filter(|t| t.mask == 1)
        .fold(0.0, |acc, t| acc + t.logprob)
}

/// `exp(-(1/|T_org|) * sum of original-token logprobs)`.
pub fn ppl_over_original(seq: &ScoredSequence) -> Result<f64, AccountingError> {
    let n = seq.original_token_count();
    if n == 0 {
        return Err(AccountingError::EmptyOriginal);
    }
    let sum = seq
        .tokens()
        .iter()
        .filter(|t| t.category == TokenCategory::Original)
        .fold(0.0, |acc, t| acc + t.logprob);
    Ok((-sum / n as f64).exp())
}

/// `exp(-(1/|T_org|) * sum of mask==1 logprobs)`: lookup-call arguments
/// count toward the numerator, the denominator stays the original length.
pub fn ppl_normalized(seq: &ScoredSequence) -> Result<f64, AccountingError> {
    let n = seq.original_token_count();
    if n == 0 {
        return Err(AccountingError::EmptyOriginal);
    }
    Ok((nll(seq) / n as f64).exp())
}
