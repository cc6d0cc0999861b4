//! Prefix tree over tokenized `entity <|sep|> relation` keys.
//!
//! Generating a lookup call by walking this trie guarantees that the query
//! names a key present in the store.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::markup::{tokenize, SEP};
use crate::store::{StoreKey, TripletStore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WalkError<E> {
    #[error("trie has no keys")]
    EmptyTrie,
    #[error("token {token:?} after {prefix:?} leaves the trie")]
    DeadEnd { prefix: Vec<String>, token: String },
    #[error("termination chosen at a non-terminal node after {0:?}")]
    NotTerminal(Vec<String>),
    #[error("scorer failed: {0}")]
    Scorer(E),
}

#[derive(Debug, Default, Clone)]
struct Node {
    children: BTreeMap<String, usize>,
    terminal: Option<StoreKey>,
}

/// What may follow a prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NextOptions {
    pub tokens: BTreeSet<String>,
    /// The prefix spells a complete key.
    pub may_terminate: bool,
}

impl NextOptions {
    pub fn is_dead_end(&self) -> bool {
        self.tokens.is_empty() && !self.may_terminate
    }
}

/// A scorer's decision at one step of [`QueryTrie::constrained_walk`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalkStep {
    Token(String),
    Terminate,
}

#[derive(Debug, Clone)]
pub struct QueryTrie {
    nodes: Vec<Node>,
    terminals: usize,
}

impl Default for QueryTrie {
    fn default() -> Self {
        QueryTrie {
            nodes: vec![Node::default()],
            terminals: 0,
        }
    }
}

/// Token path for a key: `tokenize(entity) ++ [<|sep|>] ++ tokenize(relation)`.
pub fn key_path(key: &StoreKey) -> Vec<String> {
    let mut path = tokenize(&key.entity);
    path.push(SEP.to_owned());
    path.extend(tokenize(&key.relation));
    path
}

impl QueryTrie {
    pub fn build(store: &TripletStore) -> Self {
        let mut trie = QueryTrie::default();
        for key in store.keys() {
            trie.insert(key);
        }
        trie
    }

    /// Insert a key; returns false when it was already present.
    pub fn insert(&mut self, key: &StoreKey) -> bool {
        let mut at = 0;
        for tok in key_path(key) {
            at = match self.nodes[at].children.get(&tok) {
                Some(&child) => child,
                None => {
                    self.nodes.push(Node::default());
                    let child = self.nodes.len() - 1;
                    self.nodes[at].children.insert(tok, child);
                    child
                }
            };
        }
        if self.nodes[at].terminal.is_some() {
            return false;
        }
        self.nodes[at].terminal = Some(key.clone());
        self.terminals += 1;
        true
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn find<S: AsRef<str>>(&self, prefix: &[S]) -> Option<usize> {
        prefix
            .iter()
            .try_fold(0, |at, tok| self.nodes[at].children.get(tok.as_ref()).copied())
    }

    /// Children of the prefix node plus whether the prefix is a full key.
    /// A prefix that leaves the trie yields no options.
    pub fn allowed_next<S: AsRef<str>>(&self, prefix: &[S]) -> NextOptions {
        match self.find(prefix) {
            Some(at) => NextOptions {
                tokens: self.nodes[at].children.keys().cloned().collect(),
                may_terminate: self.nodes[at].terminal.is_some(),
            },
            None => NextOptions::default(),
        }
    }

    /// The key stored at exactly this path, if any.
    pub fn terminal_at<S: AsRef<str>>(&self, path: &[S]) -> Option<&StoreKey> {
        self.find(path).and_then(|at| self.nodes[at].terminal.as_ref())
    }

    /// Every root-to-terminal token path, in lexicographic order.
    pub fn paths(&self) -> Vec<(Vec<String>, StoreKey)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::<String>::new())];
        while let Some((at, path)) = stack.pop() {
            if let Some(k) = &self.nodes[at].terminal {
                out.push((path.clone(), k.clone()));
            }
            for (tok, &child) in self.nodes[at].children.iter().rev() {
                let mut p = path.clone();
                p.push(tok.clone());
                stack.push((child, p));
            }
        }
        out
    }

    /// Let `scorer` pick one step at a time from the allowed options until
    /// it terminates at a complete key.
    ///
    /// The scorer sees the path so far and the options for the next step.
    pub fn constrained_walk<F, E>(&self, mut scorer: F) -> Result<StoreKey, WalkError<E>>
    where
        F: FnMut(&[String], &NextOptions) -> Result<WalkStep, E>,
    {
        if self.terminals == 0 {
            return Err(WalkError::EmptyTrie);
        }
        let mut at = 0;
        let mut path = Vec::new();
        loop {
            let node = &self.nodes[at];
            let options = NextOptions {
                tokens: node.children.keys().cloned().collect(),
                may_terminate: node.terminal.is_some(),
            };
            match scorer(&path, &options).map_err(WalkError::Scorer)? {
                WalkStep::Terminate => {
                    return node.terminal.clone().ok_or(WalkError::NotTerminal(path));
                }
                WalkStep::Token(tok) => match node.children.get(&tok) {
                    Some(&child) => {
                        at = child;
                        path.push(tok);
                    }
                    None => {
                        return Err(WalkError::DeadEnd {
                            prefix: path,
                            token: tok,
                        })
                    }
                },
            }
        }
    }
}

/// Scorer that always takes the lexicographically smallest child and only
/// terminates when no child remains or the node is terminal with no children.
pub fn smallest_first(_: &[String], options: &NextOptions) -> Result<WalkStep, std::convert::Infallible> {
    Ok(match options.tokens.iter().next() {
        Some(t) => WalkStep::Token(t.clone()),
        None => WalkStep::Terminate,
    })
}
