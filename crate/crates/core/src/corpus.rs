//! JSON-lines corpus files: `{"id": ..., "text": ..., "format": ...}` per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markup::{parse_inline, parse_tokenform, AnnotatedDocument, MarkupError, Special};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    TokenForm,
    Inline,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub format: CorpusFormat,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("record {id:?}: {source}")]
    Markup { id: String, source: MarkupError },
}

impl CorpusRecord {
    pub fn parse(&self) -> Result<AnnotatedDocument, MarkupError> {
        parse_text(&self.text, self.format)
    }
}

/// Parse text in the given corpus format. Plain text must not contain
/// lookup delimiters.
pub fn parse_text(text: &str, format: CorpusFormat) -> Result<AnnotatedDocument, MarkupError> {
    match format {
        CorpusFormat::TokenForm => parse_tokenform(text),
        CorpusFormat::Inline => parse_inline(text),
        CorpusFormat::Plain => {
            if let Some(at) = Special::ALL.iter().filter_map(|s| text.find(s.literal())).min() {
                return Err(MarkupError::MalformedAnnotation {
                    position: at,
                    reason: "lookup delimiter in plain text".into(),
                });
            }
            parse_tokenform(text)
        }
    }
}

/// Read every record of a JSON-lines corpus. Blank lines are ignored.
pub fn read_records(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Json {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Read and parse every record.
pub fn read_documents(text: &str) -> Result<Vec<(String, AnnotatedDocument)>, CorpusError> {
    read_records(text)?
        .into_iter()
        .map(|r| {
            let doc = r.parse().map_err(|source| CorpusError::Markup {
                id: r.id.clone(),
                source,
            })?;
            Ok((r.id, doc))
        })
        .collect()
}
