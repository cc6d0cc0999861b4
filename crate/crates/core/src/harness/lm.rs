//! Language-model provider boundary and the scripted test double.

use std::collections::HashMap;

use serde::Deserialize;
use thiserror::Error;

use crate::markup::{tokenize, Special};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LmError {
    /// The scripted model has nothing left to say; treated as end of text.
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("provider failure: {0}")]
    Provider(String),
}

/// A model that scores the next token given a prefix of token surfaces.
pub trait LmProvider {
    /// The vocabulary, including the four lookup delimiters.
    fn vocab(&self) -> &[String];

    /// Natural-log next-token probabilities, one per vocabulary entry.
    fn score(&self, prefix: &[String]) -> Result<Vec<f64>, LmError>;

    /// Surface that ends generation when selected.
    fn end_of_text(&self) -> Option<&str> {
        None
    }
}

/// Probability mass the scripted model leaves for non-scripted tokens.
pub const SCRIPT_EPSILON: f64 = 1.0 / (1u64 << 20) as f64;

/// Log-probability of the scripted next token: `ln(1 - 2^-20)`.
pub fn scripted_logprob() -> f64 {
    (-SCRIPT_EPSILON).ln_1p()
}

/// Deterministic model that follows a fixed token script.
///
/// The script is the model's view of the whole sequence, prompt included.
/// Spliced database output (everything after `<|db_retrieve|>` up to and
/// including `<|db_end|>`) is invisible to it, so the script lists the
/// lookup query and then carries on with the text after the call.
#[derive(Debug, Clone)]
pub struct ScriptedLm {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    script: Vec<usize>,
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default)]
    vocab: Vec<String>,
    script: Vec<String>,
}

impl ScriptedLm {
    /// `vocab` is extended with the lookup delimiters and any script token it
    /// lacks. Every entry must be a single token under the markup tokenizer.
    pub fn new(vocab: Vec<String>, script: Vec<String>) -> Result<Self, LmError> {
        let mut lm = ScriptedLm {
            vocab: Vec::new(),
            index: HashMap::new(),
            script: Vec::with_capacity(script.len()),
        };
        let specials = Special::ALL.iter().map(|s| s.literal().to_owned());
        for v in vocab.into_iter().chain(specials) {
            lm.add(v)?;
        }
        for s in script {
            let i = lm.add(s)?;
            lm.script.push(i);
        }
        Ok(lm)
    }

    /// Vocabulary made of the delimiters and the script's own tokens.
    pub fn from_script<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Result<Self, LmError> {
        Self::new(Vec::new(), script.into_iter().map(Into::into).collect())
    }

    /// Script whose tokens come from `tokenize(text)`.
    pub fn from_text(text: &str) -> Result<Self, LmError> {
        Self::from_script(tokenize(text))
    }

    /// Load `{"vocab": [...], "script": [...]}`.
    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let f: ScriptFile =
            serde_json::from_str(text).map_err(|e| LmError::Provider(format!("bad script file: {e}")))?;
        Self::new(f.vocab, f.script)
    }

    fn add(&mut self, surface: String) -> Result<usize, LmError> {
        if let Some(&i) = self.index.get(&surface) {
            return Ok(i);
        }
        if tokenize(&surface) != [surface.as_str()] {
            return Err(LmError::Provider(format!(
                "vocabulary entry {surface:?} is not a single token"
            )));
        }
        self.vocab.push(surface.clone());
        self.index.insert(surface, self.vocab.len() - 1);
        Ok(self.vocab.len() - 1)
    }

    pub fn script(&self) -> Vec<&str> {
        self.script.iter().map(|&i| self.vocab[i].as_str()).collect()
    }
}

/// Number of prefix tokens the model itself produced or was fed, skipping
/// spliced value spans.
pub fn model_view_len(prefix: &[String]) -> usize {
    let mut n = 0;
    let mut in_splice = false;
    for t in prefix {
        match Special::from_surface(t) {
            Some(Special::DbRetrieve) => {
                n += 1;
                in_splice = true;
            }
            Some(Special::DbEnd) if in_splice => in_splice = false,
            _ if in_splice => {}
            _ => n += 1,
        }
    }
    n
}

impl LmProvider for ScriptedLm {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn score(&self, prefix: &[String]) -> Result<Vec<f64>, LmError> {
        let &next = self
            .script
            .get(model_view_len(prefix))
            .ok_or(LmError::ScriptExhausted)?;
        let others = (self.vocab.len() - 1).max(1) as f64;
        let rest = (SCRIPT_EPSILON / others).ln();
        let mut scores = vec![rest; self.vocab.len()];
        scores[next] = scripted_logprob();
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_scores() {
        let lm = ScriptedLm::from_script(["a", "b"]).unwrap();
        assert_eq!(lm.vocab().len(), 6);
        let s = lm.score(&[]).unwrap();
        let a = lm.vocab().iter().position(|v| v == "a").unwrap();
        assert_eq!(s[a], (1.0 - SCRIPT_EPSILON).ln());
        assert_eq!(s[a], scripted_logprob());
        let total: f64 = s.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(lm.score(&["a".into(), "b".into()]), Err(LmError::ScriptExhausted));
    }

    #[test]
    fn splices_are_invisible() {
        let p: Vec<String> = [
            "x",
            "<|db_start|>",
            "e",
            "<|sep|>",
            "r",
            "<|db_retrieve|>",
            "v",
            "w",
            "<|db_end|>",
            "y",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(model_view_len(&p), 7);
    }

    #[test]
    fn vocab_must_be_atomic() {
        assert!(ScriptedLm::from_script(["two words"]).is_err());
        assert!(ScriptedLm::from_script(["end."]).is_err());
        assert!(ScriptedLm::from_json(r#"{"vocab":["a"],"script":["a","b"]}"#).is_ok());
        assert!(ScriptedLm::from_json(r#"{"script":5}"#).is_err());
    }
}
