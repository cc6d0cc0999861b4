use serde::{Deserialize, Serialize};

use super::AccountingError;
use crate::markup::{AnnotatedDocument, TokenCategory};

/// How the log-probabilities of a sequence were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Teacher-forced over a reference with its correct lookups.
    Static,
    /// Lookups generated and executed live.
    Dynamic,
}

/// One line of the scored-sequence interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub surface: String,
    pub category: TokenCategory,
    /// Natural-log probability of the token given its prefix.
    pub logprob: f64,
    pub mask: u8,
    /// Inserted from the database rather than chosen by the model.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub spliced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    tokens: Vec<ScoredToken>,
    original_token_count: usize,
    mode: ScoreMode,
}

impl ScoredSequence {
    /// Validate tokens: finite non-positive logprobs and masks that agree
    /// with the categories.
    pub fn new(tokens: Vec<ScoredToken>, mode: ScoreMode) -> Result<Self, AccountingError> {
        for (index, t) in tokens.iter().enumerate() {
            let bad = |reason: String| AccountingError::InvalidToken { index, reason };
            if !t.logprob.is_finite() || t.logprob > 0.0 {
                return Err(bad(format!("logprob {} is not a finite value <= 0", t.logprob)));
            }
            if t.mask != t.category.loss_mask() {
                return Err(bad(format!(
                    "mask {} disagrees with category {}",
                    t.mask,
                    t.category.as_str()
                )));
            }
        }
        let original_token_count = tokens.iter().filter(|t| t.category == TokenCategory::Original).count();
        Ok(ScoredSequence {
            tokens,
            original_token_count,
            mode,
        })
    }

    /// Build from `(surface, category, logprob)` triples; masks are derived.
    pub fn from_parts<I>(parts: I, mode: ScoreMode) -> Result<Self, AccountingError>
    where
        I: IntoIterator<Item = (String, TokenCategory, f64)>,
    {
        let tokens = parts
            .into_iter()
            .map(|(surface, category, logprob)| ScoredToken {
                surface,
                category,
                logprob,
                mask: category.loss_mask(),
                spliced: false,
            })
            .collect();
        Self::new(tokens, mode)
    }

    /// Pair every token of `doc` with the logprob at the same position.
    pub fn from_document(doc: &AnnotatedDocument, logprobs: &[f64], mode: ScoreMode) -> Result<Self, AccountingError> {
        if logprobs.len() != doc.tokens().len() {
            return Err(AccountingError::Parse(format!(
                "{} logprobs for {} tokens",
                logprobs.len(),
                doc.tokens().len()
            )));
        }
        Self::from_parts(
            doc.tokens()
                .iter()
                .zip(logprobs)
                .map(|(t, &lp)| (t.surface.clone(), t.category, lp)),
            mode,
        )
    }

    /// Parse the JSON-lines interchange format, one token per line.
    pub fn from_jsonl(text: &str, mode: ScoreMode) -> Result<Self, AccountingError> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: ScoredToken =
                serde_json::from_str(line).map_err(|e| AccountingError::Parse(format!("line {}: {e}", n + 1)))?;
            tokens.push(t);
        }
        Self::new(tokens, mode)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&serde_json::to_string(t).expect("scored tokens serialize"));
            out.push('\n');
        }
        out
    }

    pub fn tokens(&self) -> &[ScoredToken] {
        &self.tokens
    }

    pub fn original_token_count(&self) -> usize {
        self.original_token_count
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: ScoreMode) -> Self {
        self.mode = mode;
        self
    }
}
