//! Lookup-call markup.
//!
//! Two surface syntaxes carry the same information:
//!
//! - token form: `<|db_start|> entity <|sep|> relation <|db_retrieve|> value <|db_end|>`
//! - inline form: `[dblookup('entity', 'relation') -> value]`
//!
//! Both parse into an [`AnnotatedDocument`], where every token carries a
//! [`TokenCategory`]. The document drives triplet extraction, the training
//! loss mask and the perplexity accounting in [`crate::accounting`].

mod inline;
mod parse;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inline::{inline_to_tokenform, parse_inline};
pub use parse::{parse_tokenform, parse_tokenform_with, ParseMode, ParseOutcome};
pub use tokenize::{is_punct_token, join_canonical, tokenize, TRAILING_PUNCT};

/// The four reserved delimiter tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    DbStart,
    Sep,
    DbRetrieve,
    DbEnd,
}

impl Special {
    pub const ALL: [Special; 4] = [Special::DbStart, Special::Sep, Special::DbRetrieve, Special::DbEnd];

    pub const fn literal(self) -> &'static str {
        match self {
            Special::DbStart => "<|db_start|>",
            Special::Sep => "<|sep|>",
            Special::DbRetrieve => "<|db_retrieve|>",
            Special::DbEnd => "<|db_end|>",
        }
    }

    pub fn from_surface(s: &str) -> Option<Special> {
        Special::ALL.into_iter().find(|sp| sp.literal() == s)
    }

    pub const fn category(self) -> TokenCategory {
        match self {
            Special::DbStart => TokenCategory::DbStart,
            Special::Sep => TokenCategory::Sep,
            Special::DbRetrieve => TokenCategory::DbRetrieve,
            Special::DbEnd => TokenCategory::DbEnd,
        }
    }
}

pub const DB_START: &str = Special::DbStart.literal();
pub const SEP: &str = Special::Sep.literal();
pub const DB_RETRIEVE: &str = Special::DbRetrieve.literal();
pub const DB_END: &str = Special::DbEnd.literal();

/// Role of a token inside an annotated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCategory {
    /// Text from the raw, unannotated corpus.
    Original,
    DbStart,
    Sep,
    DbRetrieve,
    DbEnd,
    /// Entity argument of a lookup call.
    Entity,
    /// Relation argument of a lookup call.
    Relation,
    /// Value returned by the database.
    Value,
}

impl TokenCategory {
    pub fn is_delimiter(self) -> bool {
        matches!(
            self,
            TokenCategory::DbStart | TokenCategory::Sep | TokenCategory::DbRetrieve | TokenCategory::DbEnd
        )
    }

    /// Training-loss mask bit: retrieved values and the closing delimiter are
    /// excluded, everything else is scored.
    pub fn loss_mask(self) -> u8 {
        match self {
            TokenCategory::Value | TokenCategory::DbEnd => 0,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TokenCategory::Original => "original",
            TokenCategory::DbStart => "db_start",
            TokenCategory::Sep => "sep",
            TokenCategory::DbRetrieve => "db_retrieve",
            TokenCategory::DbEnd => "db_end",
            TokenCategory::Entity => "entity",
            TokenCategory::Relation => "relation",
            TokenCategory::Value => "value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub category: TokenCategory,
    /// Position in the annotated token sequence.
    pub index: usize,
}

/// One lookup call with its location in the token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupCall {
    pub entity: String,
    pub relation: String,
    pub value: String,
    /// Inclusive token range from `<|db_start|>` to `<|db_end|>`.
    pub span: (usize, usize),
    /// Index of the first original token after the call, or the token count
    /// when the call ends the document.
    pub anchor: usize,
}

impl LookupCall {
    pub fn triplet(&self) -> Triplet {
        Triplet::new(&self.entity, &self.relation, &self.value)
    }
}

/// Trim and collapse internal whitespace runs to single spaces. Case is kept.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// An `(entity, relation) -> value` fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub entity: String,
    pub relation: String,
    pub value: String,
}

impl Triplet {
    /// Builds a triplet with normalized entity/relation and a trimmed value.
    pub fn new(entity: &str, relation: &str, value: &str) -> Self {
        Triplet {
            entity: normalize(entity),
            relation: normalize(relation),
            value: value.trim().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("malformed annotation at byte {position}: {reason}")]
    MalformedAnnotation { position: usize, reason: String },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
}

impl MarkupError {
    pub(crate) fn malformed(position: usize, reason: impl Into<String>) -> Self {
        MarkupError::MalformedAnnotation {
            position,
            reason: reason.into(),
        }
    }
}

/// Output syntax for [`AnnotatedDocument::serialize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    TokenForm,
    Inline,
}

/// A token sequence with its lookup calls resolved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    tokens: Vec<Token>,
    calls: Vec<LookupCall>,
    original_token_count: usize,
}

impl AnnotatedDocument {
    /// Build a document from categorized surfaces, validating call structure.
    ///
    /// Categories must form flat `DbStart Entity+ Sep Relation+ DbRetrieve
    /// Value* DbEnd` blocks separated by `Original` tokens, and delimiter
    /// categories must carry their literal surface.
    pub fn from_categorized<I, S>(items: I) -> Result<Self, MarkupError>
    where
        I: IntoIterator<Item = (S, TokenCategory)>,
        S: Into<String>,
    {
        use TokenCategory as C;
        let tokens: Vec<Token> = items
            .into_iter()
            .enumerate()
            .map(|(index, (s, category))| Token {
                surface: s.into(),
                category,
                index,
            })
            .collect();

        let bad =
            |t: &Token, why: &str| MarkupError::InvalidDocument(format!("token {} ({:?}): {why}", t.index, t.surface));

        let mut calls = Vec::new();
        let mut original_token_count = 0;
        let mut i = 0;
        while i < tokens.len() {
            let t = &tokens[i];
            let special = Special::from_surface(&t.surface);
            match (t.category, special) {
                (C::Original, None) => {
                    original_token_count += 1;
                    i += 1;
                    continue;
                }
                (C::DbStart, Some(Special::DbStart)) => {}
                (c, Some(sp)) if c == sp.category() => return Err(bad(t, "delimiter outside call order")),
                (_, Some(_)) => return Err(bad(t, "delimiter surface with non-delimiter category")),
                _ => return Err(bad(t, "argument token outside a lookup call")),
            }
            let start = i;
            i += 1;
            let mut parts: [Vec<&str>; 3] = Default::default();
            for (slot, (arg_cat, closer)) in [
                (C::Entity, Special::Sep),
                (C::Relation, Special::DbRetrieve),
                (C::Value, Special::DbEnd),
            ]
            .into_iter()
            .enumerate()
            {
                while i < tokens.len() && tokens[i].category == arg_cat {
                    if Special::from_surface(&tokens[i].surface).is_some() {
                        return Err(bad(&tokens[i], "delimiter surface inside argument"));
                    }
                    parts[slot].push(&tokens[i].surface);
                    i += 1;
                }
                match tokens.get(i) {
                    Some(t) if t.category == closer.category() && t.surface == closer.literal() => i += 1,
                    Some(t) => return Err(bad(t, "call delimiters out of order")),
                    None => {
                        return Err(MarkupError::InvalidDocument(format!(
                            "call starting at token {start} is unterminated"
                        )))
                    }
                }
                if slot < 2 && parts[slot].is_empty() {
                    return Err(bad(&tokens[start], "empty entity or relation"));
                }
            }
            let end = i - 1;
            calls.push(LookupCall {
                entity: join_canonical(&parts[0]),
                relation: join_canonical(&parts[1]),
                value: join_canonical(&parts[2]),
                span: (start, end),
                anchor: 0,
            });
        }
        // Anchors: first Original token after each span.
        for call in &mut calls {
            call.anchor = tokens[call.span.1 + 1..]
                .iter()
                .find(|t| t.category == C::Original)
                .map_or(tokens.len(), |t| t.index);
        }
        Ok(AnnotatedDocument {
            tokens,
            calls,
            original_token_count,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn calls(&self) -> &[LookupCall] {
        &self.calls
    }

    pub fn original_token_count(&self) -> usize {
        self.original_token_count
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn serialize(&self, format: Format) -> String {
        match format {
            Format::TokenForm => join_canonical(&self.surfaces()),
            Format::Inline => inline::render(self),
        }
    }

    /// The original text with every lookup call removed.
    pub fn strip_annotations(&self) -> String {
        let originals: Vec<&str> = self
            .tokens
            .iter()
            .filter(|t| t.category == TokenCategory::Original)
            .map(|t| t.surface.as_str())
            .collect();
        join_canonical(&originals)
    }

    /// One triplet per call, in span order. Duplicates are kept.
    pub fn extract_triplets(&self) -> Vec<Triplet> {
        self.calls.iter().map(LookupCall::triplet).collect()
    }

    /// Per-token training-loss mask: 0 on values and `<|db_end|>`, 1 elsewhere.
    pub fn loss_mask(&self) -> Vec<u8> {
        self.tokens.iter().map(|t| t.category.loss_mask()).collect()
    }

    /// Keep only the calls whose occurrence index is in `keep`; the other
    /// call blocks are deleted and the surrounding original text is left as is.
    pub fn revert_annotations(&self, keep: &std::collections::BTreeSet<usize>) -> Result<Self, MarkupError> {
        if let Some(bad) = keep.iter().find(|&&id| id >= self.calls.len()) {
            return Err(MarkupError::InvalidDocument(format!(
                "unknown call occurrence id {bad} (document has {} calls)",
                self.calls.len()
            )));
        }
        let mut dropped = vec![false; self.tokens.len()];
        for (id, call) in self.calls.iter().enumerate() {
            if !keep.contains(&id) {
                dropped[call.span.0..=call.span.1].iter_mut().for_each(|d| *d = true);
            }
        }
        AnnotatedDocument::from_categorized(
            self.tokens
                .iter()
                .zip(dropped)
                .filter(|(_, d)| !d)
                .map(|(t, _)| (t.surface.clone(), t.category)),
        )
    }

    /// Token count per category, in [`TokenCategory`] declaration order.
    pub fn category_counts(&self) -> std::collections::BTreeMap<&'static str, usize> {
        let mut m = std::collections::BTreeMap::new();
        for t in &self.tokens {
            *m.entry(t.category.as_str()).or_insert(0) += 1;
        }
        m
    }
}
