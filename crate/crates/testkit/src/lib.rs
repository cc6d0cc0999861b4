//! Synthetic fixtures for tests: annotated documents with independently
//! computed expected renderings, random keys, and profile-shaped fact sets.
//!
//! Nothing here depends on the library under test.

use rand::seq::SliceRandom;
use rand::Rng;

/// Word tokens; none ends in trailing punctuation.
pub const WORDS: &[&str] = &[
    "Napoleon",
    "was",
    "born",
    "on",
    "August",
    "15",
    "1769",
    "the",
    "of",
    "in",
    "Zürich",
    "東京",
    "O'Brien",
    "e.g",
    "x-ray",
    "U.S",
    "3.14",
    "naïve",
    "Birth_Date",
    "r&b",
    "C++",
    "x]y",
    "z]",
    "a->b",
    "café",
    "42",
];

/// Punctuation-only tokens.
pub const PUNCT: &[&str] = &[",", ".", ";", ":", "!", "?", "(", ")", "'", "\""];

const SPECIALS: [&str; 4] = ["<|db_start|>", "<|sep|>", "<|db_retrieve|>", "<|db_end|>"];

pub fn is_punct(t: &str) -> bool {
    PUNCT.contains(&t)
}

/// Single spaces between tokens, except that punctuation tokens attach to
/// whatever precedes them.
pub fn glue_join<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if i > 0 && !t.chars().all(|c: char| ".,;:!?'\"()".contains(c)) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCall {
    pub entity: Vec<String>,
    pub relation: Vec<String>,
    pub value: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Word(String),
    Call(SynthCall),
}

/// An annotated document known piece by piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDoc {
    pub pieces: Vec<Piece>,
}

fn random_token<R: Rng>(rng: &mut R, punct_ok: bool) -> String {
    if punct_ok && rng.gen_bool(0.2) {
        PUNCT.choose(rng).unwrap().to_string()
    } else {
        WORDS.choose(rng).unwrap().to_string()
    }
}

fn random_tokens<R: Rng>(rng: &mut R, min: usize, max: usize) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|i| random_token(rng, i > 0 || min == 0)).collect()
}

impl SynthDoc {
    /// Up to `max_calls` calls between runs of 0 to 6 tokens.
    pub fn random<R: Rng>(rng: &mut R, max_calls: usize) -> Self {
        let calls = rng.gen_range(0..=max_calls);
        let mut pieces = Vec::new();
        for c in 0..=calls {
            for t in random_tokens(rng, 0, 6) {
                pieces.push(Piece::Word(t));
            }
            if c < calls {
                pieces.push(Piece::Call(SynthCall {
                    entity: random_tokens(rng, 1, 3),
                    relation: random_tokens(rng, 1, 2),
                    value: random_tokens(rng, 0, 4),
                }));
            }
        }
        SynthDoc { pieces }
    }

    pub fn calls(&self) -> impl Iterator<Item = &SynthCall> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Call(c) => Some(c),
            Piece::Word(_) => None,
        })
    }

    /// Every surface with its category name.
    pub fn categorized(&self) -> Vec<(String, &'static str)> {
        let mut out = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Word(w) => out.push((w.clone(), "original")),
                Piece::Call(c) => {
                    out.push((SPECIALS[0].to_owned(), "db_start"));
                    out.extend(c.entity.iter().map(|t| (t.clone(), "entity")));
                    out.push((SPECIALS[1].to_owned(), "sep"));
                    out.extend(c.relation.iter().map(|t| (t.clone(), "relation")));
                    out.push((SPECIALS[2].to_owned(), "db_retrieve"));
                    out.extend(c.value.iter().map(|t| (t.clone(), "value")));
                    out.push((SPECIALS[3].to_owned(), "db_end"));
                }
            }
        }
        out
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.categorized().into_iter().map(|(s, _)| s).collect()
    }

    /// 0 for value tokens and `<|db_end|>`, 1 elsewhere.
    pub fn expected_mask(&self) -> Vec<u8> {
        self.categorized()
            .iter()
            .map(|(_, c)| u8::from(!matches!(*c, "value" | "db_end")))
            .collect()
    }

    /// Canonical token-form text.
    pub fn token_form(&self) -> String {
        glue_join(&self.surfaces())
    }

    /// Token-form text with random whitespace: punctuation is either
    /// attached or separated, other tokens get one or more whitespace chars.
    pub fn token_form_noisy<R: Rng>(&self, rng: &mut R) -> String {
        let mut out = String::new();
        if rng.gen_bool(0.3) {
            out.push_str(" \n");
        }
        for (i, t) in self.surfaces().iter().enumerate() {
            if i > 0 {
                let gap = if is_punct(t) {
                    ["", "", " ", "\t"].choose(rng).unwrap()
                } else {
                    [" ", " ", "  ", "\n", " \t "].choose(rng).unwrap()
                };
                out.push_str(gap);
            }
            out.push_str(t);
        }
        if rng.gen_bool(0.3) {
            out.push('\n');
        }
        out
    }

    /// Canonical inline text.
    pub fn inline(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.pieces.iter().enumerate() {
            let (unit, glue) = match p {
                Piece::Word(w) => (w.clone(), is_punct(w)),
                Piece::Call(c) => (
                    format!(
                        "[dblookup('{}', '{}') -> {}]",
                        glue_join(&c.entity).replace('\'', "''"),
                        glue_join(&c.relation).replace('\'', "''"),
                        glue_join(&c.value).replace(']', "]]"),
                    ),
                    false,
                ),
            };
            if i > 0 && !glue {
                out.push(' ');
            }
            out.push_str(&unit);
        }
        out
    }

    /// The text with every call removed.
    pub fn plain(&self) -> String {
        let words: Vec<&String> = self
            .pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Word(w) => Some(w),
                Piece::Call(_) => None,
            })
            .collect();
        glue_join(&words)
    }

    /// `(entity, relation, value)` of every call, arguments glue-joined.
    pub fn triplets(&self) -> Vec<(String, String, String)> {
        self.calls()
            .map(|c| (glue_join(&c.entity), glue_join(&c.relation), glue_join(&c.value)))
            .collect()
    }

    /// Copy keeping only the calls whose ordinal is in `keep`.
    pub fn keep_calls(&self, keep: &[usize]) -> SynthDoc {
        let mut n = 0;
        let pieces = self
            .pieces
            .iter()
            .filter(|p| match p {
                Piece::Call(_) => {
                    n += 1;
                    keep.contains(&(n - 1))
                }
                Piece::Word(_) => true,
            })
            .cloned()
            .collect();
        SynthDoc { pieces }
    }
}

/// A random name of `words` capitalized pseudo-words.
pub fn random_name<R: Rng>(rng: &mut R, words: usize) -> String {
    const ONSETS: &[&str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "th", "kr", "pl",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ei"];
    (0..words)
        .map(|_| {
            let syllables = rng.gen_range(2..=4);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
                .collect();
            let mut c = w.chars();
            let first = c.next().unwrap().to_uppercase().collect::<String>();
            first + c.as_str()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` distinct random `(entity, relation)` pairs.
pub fn random_keys<R: Rng>(rng: &mut R, n: usize) -> Vec<(String, String)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let words = rng.gen_range(1..=3);
        let k = (random_name(rng, words), random_name(rng, 1).to_lowercase());
        if seen.insert(k.clone()) {
            out.push(k);
        }
    }
    out
}

/// Relations of a fictitious-author profile.
pub const PROFILE_RELATIONS: &[&str] = &[
    "birth_place",
    "birth_date",
    "genre",
    "father_occupation",
    "mother_occupation",
    "first_book",
    "award",
    "nationality",
    "gender",
    "writing_language",
    "debut_year",
    "publisher",
    "education",
    "residence",
    "famous_series",
    "pen_name",
    "mentor",
    "inspiration",
    "spouse",
    "death_place",
];

/// One author profile: a name and one value per relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub author: String,
    pub facts: Vec<(String, String)>,
}

/// `authors` profiles with distinct names and one fact per relation in
/// [`PROFILE_RELATIONS`].
pub fn profiles<R: Rng>(rng: &mut R, authors: usize) -> Vec<Profile> {
    let mut names = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(authors);
    while out.len() < authors {
        let author = random_name(rng, 3);
        if !names.insert(author.clone()) {
            continue;
        }
        let facts = PROFILE_RELATIONS
            .iter()
            .map(|r| {
                (
                    r.to_string(),
                    format!("{} {}", random_name(rng, 1), rng.gen_range(1900..2024)),
                )
            })
            .collect();
        out.push(Profile { author, facts });
    }
    out
}

/// Brute-force reference for the hashed trigram embedding and cosine scan.
pub mod oracle {
    pub const DIM: usize = 256;

    pub fn fnv1a64(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Sparse unit vector as ascending `(bucket, weight)` pairs; `None` for
    /// blank text.
    pub fn embed(text: &str) -> Option<Vec<(usize, f64)>> {
        if text.trim().is_empty() {
            return None;
        }
        let padded = format!("^{}$", text.to_lowercase());
        let chars: Vec<char> = padded.chars().collect();
        let mut counts = [0u32; DIM];
        for i in 0..chars.len().saturating_sub(2) {
            let tri: String = chars[i..i + 3].iter().collect();
            counts[(fnv1a64(tri.as_bytes()) % DIM as u64) as usize] += 1;
        }
        let norm = counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
        Some(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(b, &c)| (b, c as f64 / norm))
                .collect(),
        )
    }

    pub fn dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    /// First index with the largest cosine.
    pub fn nearest(vectors: &[Vec<(usize, f64)>], q: &[(usize, f64)]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in vectors.iter().enumerate() {
            let s = dot(v, q);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }

    /// The query text used for a key: `entity <|sep|> relation`.
    pub fn query_text(entity: &str, relation: &str) -> String {
        format!("{entity} <|sep|> {relation}")
    }
}
