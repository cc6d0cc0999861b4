use super::tokenize::tokenize_spans;
use super::{AnnotatedDocument, MarkupError, Special, TokenCategory};

/// How to treat a lookup call left open at end of input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Unterminated calls are an error.
    #[default]
    Strict,
    /// Unterminated trailing calls are dropped and reported as a warning.
    /// Generation can be cut off by a length limit mid-call.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub document: AnnotatedDocument,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Outside,
    Entity,
    Relation,
    Value,
}

/// Parse token-form annotated text in strict mode.
pub fn parse_tokenform(text: &str) -> Result<AnnotatedDocument, MarkupError> {
    parse_tokenform_with(text, ParseMode::Strict).map(|o| o.document)
}

pub fn parse_tokenform_with(text: &str, mode: ParseMode) -> Result<ParseOutcome, MarkupError> {
    let spans = tokenize_spans(text);
    let mut categorized: Vec<(&str, TokenCategory)> = Vec::with_capacity(spans.len());
    let mut state = State::Outside;
    let mut call_start = (0usize, 0usize); // (byte offset, token index)
    let mut arg_len = 0usize;

    for &(at, surface) in &spans {
        let special = Special::from_surface(surface);
        let category = match (state, special) {
            (State::Outside, None) => TokenCategory::Original,
            (State::Outside, Some(Special::DbStart)) => {
                call_start = (at, categorized.len());
                state = State::Entity;
                arg_len = 0;
                TokenCategory::DbStart
            }
            (State::Outside, Some(sp)) => {
                return Err(MarkupError::malformed(
                    at,
                    format!("{} outside a lookup call", sp.literal()),
                ))
            }
            (_, Some(Special::DbStart)) => {
                return Err(MarkupError::malformed(at, "nested <|db_start|> inside an open call"))
            }
            (State::Entity, None) => {
                arg_len += 1;
                TokenCategory::Entity
            }
            (State::Entity, Some(Special::Sep)) => {
                if arg_len == 0 {
                    return Err(MarkupError::malformed(at, "empty entity"));
                }
                state = State::Relation;
                arg_len = 0;
                TokenCategory::Sep
            }
            (State::Entity, Some(sp)) => {
                return Err(MarkupError::malformed(
                    at,
                    format!("{} before <|sep|> (missing <|sep|>)", sp.literal()),
                ))
            }
            (State::Relation, None) => {
                arg_len += 1;
                TokenCategory::Relation
            }
            (State::Relation, Some(Special::DbRetrieve)) => {
                if arg_len == 0 {
                    return Err(MarkupError::malformed(at, "empty relation"));
                }
                state = State::Value;
                TokenCategory::DbRetrieve
            }
            (State::Relation, Some(sp)) => {
                return Err(MarkupError::malformed(
                    at,
                    format!("{} before <|db_retrieve|>", sp.literal()),
                ))
            }
            (State::Value, None) => TokenCategory::Value,
            (State::Value, Some(Special::DbEnd)) => {
                state = State::Outside;
                TokenCategory::DbEnd
            }
            (State::Value, Some(sp)) => {
                return Err(MarkupError::malformed(at, format!("{} inside a value", sp.literal())))
            }
        };
        categorized.push((surface, category));
    }

    let mut warnings = Vec::new();
    if state != State::Outside {
        match mode {
            ParseMode::Strict => {
                return Err(MarkupError::malformed(
                    call_start.0,
                    "lookup call unterminated at end of input",
                ))
            }
            ParseMode::Lenient => {
                warnings.push(format!(
                    "dropped unterminated lookup call starting at byte {}",
                    call_start.0
                ));
                categorized.truncate(call_start.1);
            }
        }
    }
    let document = AnnotatedDocument::from_categorized(categorized)?;
    Ok(ParseOutcome { document, warnings })
}
