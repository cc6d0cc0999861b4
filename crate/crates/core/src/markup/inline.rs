//! The `[dblookup('E', 'R') -> V]` syntax.
//!
//! Quoted arguments escape a single quote by doubling it (`''`). The
//! unquoted value escapes a closing bracket the same way (`]]`).

use super::tokenize::is_punct_token;
use super::{parse_tokenform, AnnotatedDocument, MarkupError, Special, TokenCategory};
use super::{DB_END, DB_RETRIEVE, DB_START, SEP};

const OPEN: &str = "[dblookup(";

/// Parse inline-annotated text.
pub fn parse_inline(text: &str) -> Result<AnnotatedDocument, MarkupError> {
    let converted = convert(text)?;
    parse_tokenform(&converted.text).map_err(|e| match e {
        MarkupError::MalformedAnnotation { position, reason } => MarkupError::MalformedAnnotation {
            position: converted.original_offset(position),
            reason,
        },
        other => other,
    })
}

/// Rewrite every inline block as its token-form equivalent.
pub fn inline_to_tokenform(text: &str) -> Result<String, MarkupError> {
    convert(text).map(|c| c.text)
}

struct Converted {
    text: String,
    /// (offset in converted text, offset in source) at the start of each
    /// verbatim-copied piece.
    pieces: Vec<(usize, usize)>,
}

impl Converted {
    fn original_offset(&self, at: usize) -> usize {
        let i = self.pieces.partition_point(|&(c, _)| c <= at);
        match i.checked_sub(1).map(|i| self.pieces[i]) {
            Some((c, o)) => o + (at - c),
            None => at,
        }
    }
}

fn convert(text: &str) -> Result<Converted, MarkupError> {
    let mut out = Converted {
        text: String::with_capacity(text.len() + 32),
        pieces: Vec::new(),
    };
    let mut pos = 0;
    while let Some(rel) = text[pos..].find(OPEN) {
        let start = pos + rel;
        out.pieces.push((out.text.len(), pos));
        out.text.push_str(&text[pos..start]);
        let (block, end) = parse_block(text, start)?;
        for (s, arg) in [
            (DB_START, &block.entity),
            (SEP, &block.relation),
            (DB_RETRIEVE, &block.value),
        ] {
            out.text.push(' ');
            out.text.push_str(s);
            out.text.push(' ');
            out.text.push_str(arg);
        }
        out.text.push(' ');
        out.text.push_str(DB_END);
        out.text.push(' ');
        pos = end;
    }
    out.pieces.push((out.text.len(), pos));
    out.text.push_str(&text[pos..]);
    Ok(out)
}

struct Block {
    entity: String,
    relation: String,
    value: String,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn expect(&mut self, lit: &str, what: &str) -> Result<(), MarkupError> {
        self.skip_ws();
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(MarkupError::malformed(self.pos, format!("expected {what}")))
        }
    }

    fn quoted(&mut self, what: &str) -> Result<String, MarkupError> {
        self.skip_ws();
        if !self.rest().starts_with('\'') {
            return Err(MarkupError::malformed(
                self.pos,
                format!("missing opening quote for {what}"),
            ));
        }
        let open = self.pos;
        self.pos += 1;
        let mut s = String::new();
        loop {
            let Some(c) = self.rest().chars().next() else {
                return Err(MarkupError::malformed(open, format!("unterminated quote in {what}")));
            };
            self.pos += c.len_utf8();
            if c == '\'' {
                if self.rest().starts_with('\'') {
                    self.pos += 1;
                    s.push('\'');
                } else {
                    return Ok(s);
                }
            } else {
                s.push(c);
            }
        }
    }

    fn value(&mut self, block_start: usize) -> Result<String, MarkupError> {
        let mut s = String::new();
        loop {
            let Some(c) = self.rest().chars().next() else {
                return Err(MarkupError::malformed(
                    block_start,
                    "unbalanced brackets: missing closing ']'",
                ));
            };
            self.pos += c.len_utf8();
            if c == ']' {
                if self.rest().starts_with(']') {
                    self.pos += 1;
                    s.push(']');
                } else {
                    return Ok(s);
                }
            } else {
                s.push(c);
            }
        }
    }
}

fn parse_block(text: &str, start: usize) -> Result<(Block, usize), MarkupError> {
    let mut cur = Cursor {
        text,
        pos: start + OPEN.len(),
    };
    let entity_at = cur.pos;
    let entity = cur.quoted("entity")?;
    cur.expect(",", "',' between entity and relation")?;
    let relation_at = cur.pos;
    let relation = cur.quoted("relation")?;
    cur.expect(")", "')' after relation")?;
    cur.expect("->", "'->' before value")?;
    let value_at = cur.pos;
    let value = cur.value(start)?;
    for (arg, at, what) in [
        (&entity, entity_at, "entity"),
        (&relation, relation_at, "relation"),
        (&value, value_at, "value"),
    ] {
        if Special::ALL.iter().any(|s| arg.contains(s.literal())) {
            return Err(MarkupError::malformed(at, format!("delimiter token inside {what}")));
        }
        if what != "value" && arg.trim().is_empty() {
            return Err(MarkupError::malformed(at, format!("empty {what}")));
        }
    }
    Ok((
        Block {
            entity,
            relation,
            value,
        },
        cur.pos,
    ))
}

/// Canonical inline rendering of a document.
pub(super) fn render(doc: &AnnotatedDocument) -> String {
    let mut out = String::new();
    let push_unit = |out: &mut String, unit: &str, glue: bool| {
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        out.push_str(unit);
    };
    let tokens = doc.tokens();
    let mut i = 0;
    let mut calls = doc.calls().iter().peekable();
    while i < tokens.len() {
        match calls.peek() {
            Some(call) if call.span.0 == i => {
                let block = format!(
                    "[dblookup('{}', '{}') -> {}]",
                    call.entity.replace('\'', "''"),
                    call.relation.replace('\'', "''"),
                    call.value.replace(']', "]]"),
                );
                push_unit(&mut out, &block, false);
                i = call.span.1 + 1;
                calls.next();
            }
            _ => {
                let t = &tokens[i];
                debug_assert_eq!(t.category, TokenCategory::Original);
                push_unit(&mut out, &t.surface, i > 0 && is_punct_token(&t.surface));
                i += 1;
            }
        }
    }
    out
}
