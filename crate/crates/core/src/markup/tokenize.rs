//! Deterministic word + punctuation tokenizer.
//!
//! The four lookup delimiters are matched first as atomic units wherever they
//! occur. Remaining text is split on whitespace, and any run of trailing
//! punctuation on a chunk is peeled off one character per token.

use super::Special;

/// Characters that are split off the end of a whitespace chunk.
pub const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '\'', '"', '(', ')'];

fn is_trailing_punct(c: char) -> bool {
    TRAILING_PUNCT.contains(&c)
}

/// True when every character of `surface` is trailing punctuation.
///
/// Such tokens are glued to their predecessor by [`join_canonical`].
pub fn is_punct_token(surface: &str) -> bool {
    !surface.is_empty() && surface.chars().all(is_trailing_punct)
}

/// Tokenize `text` into surfaces.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|(_, s)| s.to_owned()).collect()
}

/// Tokenize `text`, returning each surface with its byte offset.
pub(crate) fn tokenize_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut rest = 0usize;
    while rest < text.len() {
        match find_special(&text[rest..]) {
            Some((at, special)) => {
                split_words(text, rest, rest + at, &mut out);
                let start = rest + at;
                let lit = special.literal();
                out.push((start, &text[start..start + lit.len()]));
                rest = start + lit.len();
            }
            None => {
                split_words(text, rest, text.len(), &mut out);
                break;
            }
        }
    }
    out
}

fn find_special(hay: &str) -> Option<(usize, Special)> {
    // Earliest occurrence wins; delimiters never overlap each other.
    Special::ALL
        .iter()
        .filter_map(|s| hay.find(s.literal()).map(|at| (at, *s)))
        .min_by_key(|(at, _)| *at)
}

fn split_words<'a>(text: &'a str, from: usize, to: usize, out: &mut Vec<(usize, &'a str)>) {
    let segment = &text[from..to];
    let mut chunk_start: Option<usize> = None;
    for (i, c) in segment.char_indices().chain(std::iter::once((segment.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                push_chunk(text, from + s, from + i, out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
}

fn push_chunk<'a>(text: &'a str, start: usize, end: usize, out: &mut Vec<(usize, &'a str)>) {
    let chunk = &text[start..end];
    let base_len = chunk
        .char_indices()
        .rev()
        .take_while(|(_, c)| is_trailing_punct(*c))
        .last()
        .map_or(chunk.len(), |(i, _)| i);
    if base_len > 0 {
        out.push((start, &chunk[..base_len]));
    }
    for (i, c) in chunk[base_len..].char_indices() {
        let at = base_len + i;
        out.push((start + at, &chunk[at..at + c.len_utf8()]));
    }
}

/// Join surfaces with single spaces, gluing punctuation-only tokens to the
/// token before them. Re-tokenizing the result yields the same surfaces.
pub fn join_canonical<S: AsRef<str>>(surfaces: &[S]) -> String {
    let mut out = String::new();
    for (i, s) in surfaces.iter().enumerate() {
        let s = s.as_ref();
        if i > 0 && !is_punct_token(s) {
            out.push(' ');
        }
        out.push_str(s);
    }
    out
}
