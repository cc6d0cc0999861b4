//! Interleaved generate-and-lookup inference.
//!
//! A session walks the phases `Free -> InEntity -> InRelation -> AwaitValue
//! -> Free`. In `Free` the model writes text until it picks `<|db_start|>`;
//! the query arguments are then produced either freely (fuzzy mode) or by a
//! constrained walk over the query trie (trie mode). After
//! `<|db_retrieve|>` the retrieved value, or the fallback text, is spliced
//! in verbatim together with `<|db_end|>`.
//!
//! Selection is greedy. Delimiters that cannot legally appear in the current
//! phase are never selected.

mod lm;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lm::{model_view_len, scripted_logprob, LmError, LmProvider, ScriptedLm, SCRIPT_EPSILON};

use crate::accounting::{ScoreMode, ScoredSequence, ScoredToken};
use crate::markup::{
    join_canonical, parse_tokenform, tokenize, AnnotatedDocument, MarkupError, Special, TokenCategory,
};
use crate::retrieval::{CosineIndex, Outcome, RetrievalError, DEFAULT_THRESHOLD};
use crate::store::{StoreKey, TripletStore};
use crate::trie::{NextOptions, QueryTrie, WalkError, WalkStep};

/// Logprob recorded for tokens the model cannot score (outside its
/// vocabulary, zero probability, or past the end of a script).
pub const UNSCORED_LOGPROB: f64 = -708.3964185322641;

/// Maximum tokens per query argument before the closing delimiter is forced.
pub const MAX_ARGUMENT_TOKENS: usize = 16;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("provider failure: {0}")]
    ProviderFailure(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(MarkupError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("position {0} is not a lookup anchor of the reference")]
    InvalidPosition(usize),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    Fuzzy,
    Trie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Tokens the model may select; prompt and spliced tokens do not count.
    pub max_tokens: usize,
    pub repetition_penalty: f64,
    /// Additive bias per delimiter surface, applied in the free phase.
    pub logit_bias: BTreeMap<String, f64>,
    pub query_mode: QueryMode,
    pub retrieval_threshold: f64,
    pub fallback_text: String,
    pub max_argument_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_tokens: 256,
            repetition_penalty: 1.2,
            logit_bias: [
                (Special::DbStart, 5.0),
                (Special::Sep, 2.0),
                (Special::DbRetrieve, 2.0),
                (Special::DbEnd, 2.0),
            ]
            .into_iter()
            .map(|(s, b)| (s.literal().to_owned(), b))
            .collect(),
            query_mode: QueryMode::Fuzzy,
            retrieval_threshold: DEFAULT_THRESHOLD,
            fallback_text: "unknown".to_owned(),
            max_argument_tokens: MAX_ARGUMENT_TOKENS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_argument_tokens == 0 {
            return bad("max_argument_tokens must be positive".into());
        }
        if !(self.repetition_penalty.is_finite() && self.repetition_penalty > 0.0) {
            return bad(format!(
                "repetition_penalty {} must be positive",
                self.repetition_penalty
            ));
        }
        if !(-1.0..=1.0).contains(&self.retrieval_threshold) {
            return bad(format!(
                "retrieval_threshold {} outside [-1, 1]",
                self.retrieval_threshold
            ));
        }
        for (k, v) in &self.logit_bias {
            if Special::from_surface(k).is_none() {
                return bad(format!("logit_bias key {k:?} is not a lookup delimiter"));
            }
            if !v.is_finite() {
                return bad(format!("logit_bias for {k} is not finite"));
            }
        }
        if tokenize(&self.fallback_text)
            .iter()
            .any(|t| Special::from_surface(t).is_some())
        {
            return bad("fallback_text contains a lookup delimiter".into());
        }
        Ok(())
    }
}

/// Everything a session consults when it executes a lookup.
#[derive(Clone, Copy)]
pub struct KnowledgeBase<'a> {
    pub store: &'a TripletStore,
    pub index: &'a CosineIndex,
    pub trie: &'a QueryTrie,
}

/// Result of one executed lookup call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LookupOutcome {
    /// Position of the call among the output document's calls.
    pub call: usize,
    /// Query arguments as generated.
    pub entity: String,
    pub relation: String,
    pub hit: bool,
    /// Text spliced after `<|db_retrieve|>`.
    pub value: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched: Option<StoreKey>,
    /// Best cosine similarity in fuzzy mode; absent when nothing was compared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub document: AnnotatedDocument,
    pub scored: ScoredSequence,
    pub outcomes: Vec<LookupOutcome>,
    pub warnings: Vec<String>,
}

/// Why a session stopped selecting tokens.
enum Halt {
    Budget,
    EndOfText,
    /// Trie mode with an empty trie: no query can be formed.
    NoKeys,
    Failed(HarnessError),
}

impl From<HarnessError> for Halt {
    fn from(e: HarnessError) -> Self {
        Halt::Failed(e)
    }
}

struct Emitted {
    surface: String,
    category: TokenCategory,
    logprob: f64,
    spliced: bool,
}

struct Session<'a, L: LmProvider + ?Sized> {
    lm: &'a L,
    kb: KnowledgeBase<'a>,
    config: &'a GenerationConfig,
    vocab_index: HashMap<&'a str, usize>,
    special_ids: [Option<usize>; 4],
    eos: Option<usize>,
    context: Vec<String>,
    seen: HashSet<String>,
    out: Vec<Emitted>,
    outcomes: Vec<LookupOutcome>,
    warnings: Vec<String>,
    /// Tokens selected by the model so far.
    selected: usize,
    /// Whether `selected` is capped by `max_tokens`.
    budgeted: bool,
}

fn special_slot(s: Special) -> usize {
    match s {
        Special::DbStart => 0,
        Special::Sep => 1,
        Special::DbRetrieve => 2,
        Special::DbEnd => 3,
    }
}

impl<'a, L: LmProvider + ?Sized> Session<'a, L> {
    fn new(
        lm: &'a L,
        kb: KnowledgeBase<'a>,
        config: &'a GenerationConfig,
        budgeted: bool,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut vocab_index = HashMap::new();
        let mut special_ids = [None; 4];
        for (i, v) in lm.vocab().iter().enumerate() {
            if tokenize(v) != [v.as_str()] {
                return Err(HarnessError::ProviderFailure(format!(
                    "vocabulary entry {v:?} is not a single token"
                )));
            }
            if vocab_index.insert(v.as_str(), i).is_some() {
                return Err(HarnessError::ProviderFailure(format!(
                    "duplicate vocabulary entry {v:?}"
                )));
            }
            if let Some(s) = Special::from_surface(v) {
                special_ids[special_slot(s)] = Some(i);
            }
        }
        let eos =
            match lm.end_of_text() {
                Some(e) => Some(*vocab_index.get(e).ok_or_else(|| {
                    HarnessError::ProviderFailure(format!("end-of-text {e:?} is not in the vocabulary"))
                })?),
                None => None,
            };
        Ok(Session {
            lm,
            kb,
            config,
            vocab_index,
            special_ids,
            eos,
            context: Vec::new(),
            seen: HashSet::new(),
            out: Vec::new(),
            outcomes: Vec::new(),
            warnings: Vec::new(),
            selected: 0,
            budgeted,
        })
    }

    fn special_id(&self, s: Special) -> Option<usize> {
        self.special_ids[special_slot(s)]
    }

    /// Next-token scores for the current context; `None` past end of text.
    fn scores(&self) -> Result<Option<Vec<f64>>, HarnessError> {
        let scores = match self.lm.score(&self.context) {
            Ok(s) => s,
            Err(LmError::ScriptExhausted) => return Ok(None),
            Err(LmError::Provider(m)) => return Err(HarnessError::ProviderFailure(m)),
        };
        if scores.len() != self.lm.vocab().len() {
            return Err(HarnessError::ProviderFailure(format!(
                "{} scores for a vocabulary of {}",
                scores.len(),
                self.lm.vocab().len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s > 1e-9) {
            return Err(HarnessError::ProviderFailure(format!(
                "score {bad} is not a log-probability"
            )));
        }
        Ok(Some(scores))
    }

    fn logprob_of(&self, scores: Option<&[f64]>, surface: &str) -> f64 {
        let lp = match (scores, self.vocab_index.get(surface)) {
            (Some(s), Some(&i)) => s[i],
            _ => return UNSCORED_LOGPROB,
        };
        if lp == f64::NEG_INFINITY {
            UNSCORED_LOGPROB
        } else {
            lp.min(0.0)
        }
    }

    fn push(&mut self, surface: String, category: TokenCategory, logprob: f64, spliced: bool) {
        self.context.push(surface.clone());
        self.seen.insert(surface.clone());
        self.out.push(Emitted {
            surface,
            category,
            logprob,
            spliced,
        });
    }

    /// Append a token chosen by the caller, scoring it under the model.
    fn force(&mut self, surface: &str, category: TokenCategory) -> Result<(), HarnessError> {
        let scores = self.scores()?;
        let lp = self.logprob_of(scores.as_deref(), surface);
        self.push(surface.to_owned(), category, lp, false);
        Ok(())
    }

    fn take_budget(&mut self) -> Result<(), Halt> {
        if self.budgeted && self.selected >= self.config.max_tokens {
            return Err(Halt::Budget);
        }
        self.selected += 1;
        Ok(())
    }

    /// Greedy choice among `allowed` vocabulary ids. Returns the id and its
    /// unadjusted logprob.
    fn select(&mut self, allowed: impl Fn(usize, &str) -> bool, free: bool) -> Result<(usize, f64), Halt> {
        self.take_budget()?;
        let scores = self.scores()?.ok_or(Halt::EndOfText)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.lm.vocab().iter().enumerate() {
            let is_eos = Some(i) == self.eos;
            if !is_eos && !allowed(i, v) {
                continue;
            }
            let mut s = scores[i];
            if free {
                if self.seen.contains(v.as_str()) {
                    s = if s > 0.0 {
                        s / self.config.repetition_penalty
                    } else {
                        s * self.config.repetition_penalty
                    };
                }
                if let Some(b) = self.config.logit_bias.get(v.as_str()) {
                    s += b;
                }
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.ok_or(Halt::EndOfText)?;
        if Some(i) == self.eos {
            return Err(Halt::EndOfText);
        }
        Ok((i, self.logprob_of(Some(&scores), &self.lm.vocab()[i])))
    }

    fn emit_selected(&mut self, id: usize, logprob: f64, category: TokenCategory) {
        let surface = self.lm.vocab()[id].clone();
        self.push(surface, category, logprob, false);
    }

    fn prompt(&mut self, prompt: &str, scored: bool) -> Result<(), HarnessError> {
        let doc = parse_tokenform(prompt).map_err(HarnessError::InvalidPrompt)?;
        for t in doc.tokens() {
            if scored {
                self.force(&t.surface, t.category)?;
            } else {
                self.context.push(t.surface.clone());
                self.seen.insert(t.surface.clone());
            }
        }
        Ok(())
    }

    /// Free generation until the budget or end of text.
    fn run_free(&mut self) -> Result<(), HarnessError> {
        let db_start = self.special_id(Special::DbStart);
        let lookups_possible = self.config.query_mode == QueryMode::Fuzzy || self.kb.trie.terminal_count() > 0;
        loop {
            let pick = self.select(
                |i, v| Special::from_surface(v).is_none() || (lookups_possible && Some(i) == db_start),
                true,
            );
            let (id, lp) = match pick {
                Ok(p) => p,
                Err(Halt::Failed(e)) => return Err(e),
                Err(_) => return Ok(()),
            };
            if Some(id) == db_start {
                let call_start = self.out.len();
                self.emit_selected(id, lp, TokenCategory::DbStart);
                match self.run_call() {
                    Ok(()) => {}
                    Err(Halt::Failed(e)) => return Err(e),
                    Err(halt) => {
                        self.drop_partial_call(call_start, &halt);
                        return Ok(());
                    }
                }
            } else {
                self.emit_selected(id, lp, TokenCategory::Original);
            }
        }
    }

    fn drop_partial_call(&mut self, call_start: usize, halt: &Halt) {
        let why = match halt {
            Halt::Budget => "token budget exhausted",
            Halt::NoKeys => "no stored keys to query",
            _ => "end of text",
        };
        self.warnings.push(format!(
            "{why} inside the lookup call starting at token {call_start}; partial call dropped"
        ));
        let removed = self.out.len() - call_start;
        self.out.truncate(call_start);
        self.context.truncate(self.context.len() - removed);
    }

    /// Produce query arguments after `<|db_start|>`, execute the lookup and
    /// splice the result.
    fn run_call(&mut self) -> Result<(), Halt> {
        match self.config.query_mode {
            QueryMode::Fuzzy => self.fuzzy_call(),
            QueryMode::Trie => self.trie_call(),
        }
    }

    fn fuzzy_call(&mut self) -> Result<(), Halt> {
        let sep = self.special_id(Special::Sep);
        let retrieve = self.special_id(Special::DbRetrieve);
        let mut args: [Vec<String>; 2] = Default::default();
        let phases = [
            (Special::Sep, sep, TokenCategory::Entity),
            (Special::DbRetrieve, retrieve, TokenCategory::Relation),
        ];
        for (slot, (closer, closer_id, category)) in phases.into_iter().enumerate() {
            loop {
                let have = args[slot].len();
                if have >= self.config.max_argument_tokens {
                    self.take_budget()?;
                    self.force(closer.literal(), closer.category())?;
                    break;
                }
                let (id, lp) = self.select(
                    |i, v| Special::from_surface(v).is_none() || (have > 0 && Some(i) == closer_id),
                    false,
                )?;
                if Some(id) == closer_id {
                    self.emit_selected(id, lp, closer.category());
                    break;
                }
                args[slot].push(self.lm.vocab()[id].clone());
                self.emit_selected(id, lp, category);
            }
        }
        let entity = join_canonical(&args[0]);
        let relation = join_canonical(&args[1]);
        let key = StoreKey::new(&entity, &relation);
        let result = self
            .kb
            .index
            .retrieve(self.kb.store, &key, self.config.retrieval_threshold)
            .map_err(HarnessError::from)?;
        let similarity = Some(result.similarity).filter(|s| s.is_finite());
        let (hit, matched, value) = match result.outcome {
            Outcome::Hit { value, matched } => (true, Some(matched), value),
            Outcome::Unknown => (false, None, self.config.fallback_text.clone()),
        };
        self.splice(LookupOutcome {
            call: self.outcomes.len(),
            entity,
            relation,
            hit,
            value,
            matched,
            similarity,
        })?;
        Ok(())
    }

    fn trie_call(&mut self) -> Result<(), Halt> {
        let trie = self.kb.trie;
        let sep = Special::Sep.literal();
        let walked = trie.constrained_walk(|path: &[String], options: &NextOptions| -> Result<WalkStep, Halt> {
            self.take_budget()?;
            let scores = self.scores()?.ok_or(Halt::EndOfText)?;
            let mut best: Option<(WalkStep, f64)> = None;
            for t in &options.tokens {
                let s = self.logprob_of(Some(&scores), t);
                if best.as_ref().is_none_or(|(_, b)| s > *b) {
                    best = Some((WalkStep::Token(t.clone()), s));
                }
            }
            if options.may_terminate {
                let s = self.logprob_of(Some(&scores), Special::DbRetrieve.literal());
                if best.as_ref().is_none_or(|(_, b)| s > *b) {
                    best = Some((WalkStep::Terminate, s));
                }
            }
            let (step, lp) = best.expect("trie nodes always offer a step");
            let (surface, category) = match &step {
                WalkStep::Terminate => (Special::DbRetrieve.literal().to_owned(), TokenCategory::DbRetrieve),
                WalkStep::Token(t) if t == sep => (t.clone(), TokenCategory::Sep),
                WalkStep::Token(t) if path.iter().any(|p| p == sep) => (t.clone(), TokenCategory::Relation),
                WalkStep::Token(t) => (t.clone(), TokenCategory::Entity),
            };
            self.push(surface, category, lp, false);
            Ok(step)
        });
        let key = match walked {
            Ok(k) => k,
            Err(WalkError::Scorer(h)) => return Err(h),
            Err(WalkError::EmptyTrie) => return Err(Halt::NoKeys),
            Err(WalkError::DeadEnd { .. } | WalkError::NotTerminal(_)) => {
                unreachable!("the scorer only picks offered steps")
            }
        };
        let (hit, value) = match self.kb.store.lookup_exact(&key) {
            Some(v) => (true, v.to_owned()),
            None => (false, self.config.fallback_text.clone()),
        };
        self.splice(LookupOutcome {
            call: self.outcomes.len(),
            entity: key.entity.clone(),
            relation: key.relation.clone(),
            hit,
            value,
            matched: hit.then_some(key),
            similarity: None,
        })?;
        Ok(())
    }

    fn splice(&mut self, outcome: LookupOutcome) -> Result<(), HarnessError> {
        let mut tokens: Vec<(String, TokenCategory)> = tokenize(&outcome.value)
            .into_iter()
            .map(|t| (t, TokenCategory::Value))
            .collect();
        tokens.push((Special::DbEnd.literal().to_owned(), TokenCategory::DbEnd));
        for (surface, category) in tokens {
            let scores = self.scores()?;
            let lp = self.logprob_of(scores.as_deref(), &surface);
            self.push(surface, category, lp, true);
        }
        self.outcomes.push(outcome);
        Ok(())
    }

    fn finish(self, mode: ScoreMode) -> Generation {
        let document = AnnotatedDocument::from_categorized(self.out.iter().map(|e| (e.surface.as_str(), e.category)))
            .expect("session emits well-formed lookup calls");
        let scored = ScoredSequence::new(
            self.out
                .into_iter()
                .map(|e| ScoredToken {
                    surface: e.surface,
                    category: e.category,
                    logprob: e.logprob,
                    mask: e.category.loss_mask(),
                    spliced: e.spliced,
                })
                .collect(),
            mode,
        )
        .expect("session logprobs are finite and non-positive");
        Generation {
            document,
            scored,
            outcomes: self.outcomes,
            warnings: self.warnings,
        }
    }
}

/// Continue `prompt` (token-form text) with interleaved lookups.
///
/// Prompt tokens are part of the output and are scored teacher-forced.
pub fn generate<L: LmProvider + ?Sized>(
    lm: &L,
    prompt: &str,
    kb: KnowledgeBase<'_>,
    config: &GenerationConfig,
) -> Result<Generation, HarnessError> {
    let mut s = Session::new(lm, kb, config, true)?;
    s.prompt(prompt, true)?;
    s.run_free()?;
    Ok(s.finish(ScoreMode::Dynamic))
}

/// Teacher-force the original tokens of `reference`, forcing a lookup call
/// before each anchor in `positions` (one per reference call anchored
/// there) whose arguments the model generates itself.
///
/// The prompt is unscored context. Reference calls outside `positions` are
/// left out of the output.
pub fn forced_lookup_generate<L: LmProvider + ?Sized>(
    lm: &L,
    prompt: &str,
    positions: &BTreeSet<usize>,
    reference: &AnnotatedDocument,
    kb: KnowledgeBase<'_>,
    config: &GenerationConfig,
) -> Result<Generation, HarnessError> {
    let mut per_anchor: BTreeMap<usize, usize> = BTreeMap::new();
    for c in reference.calls() {
        *per_anchor.entry(c.anchor).or_default() += 1;
    }
    if let Some(&p) = positions.iter().find(|p| !per_anchor.contains_key(p)) {
        return Err(HarnessError::InvalidPosition(p));
    }
    let mut s = Session::new(lm, kb, config, false)?;
    s.prompt(prompt, false)?;
    let tokens = reference.tokens();
    for i in 0..=tokens.len() {
        if positions.contains(&i) {
            for _ in 0..per_anchor[&i] {
                let call_start = s.out.len();
                s.force(Special::DbStart.literal(), TokenCategory::DbStart)?;
                match s.run_call() {
                    Ok(()) => {}
                    Err(Halt::Failed(e)) => return Err(e),
                    Err(halt) => s.drop_partial_call(call_start, &halt),
                }
            }
        }
        if let Some(t) = tokens.get(i).filter(|t| t.category == TokenCategory::Original) {
            s.force(&t.surface, TokenCategory::Original)?;
        }
    }
    Ok(s.finish(ScoreMode::Dynamic))
}

/// Teacher-force every token of `reference` after an unscored prompt.
pub fn score_reference<L: LmProvider + ?Sized>(
    lm: &L,
    prompt: &str,
    reference: &AnnotatedDocument,
) -> Result<ScoredSequence, HarnessError> {
    let empty_store = TripletStore::new();
    let empty_index = CosineIndex::with_trigrams(&empty_store);
    let empty_trie = QueryTrie::default();
    let kb = KnowledgeBase {
        store: &empty_store,
        index: &empty_index,
        trie: &empty_trie,
    };
    let config = GenerationConfig::default();
    let mut s = Session::new(lm, kb, &config, false)?;
    s.prompt(prompt, false)?;
    for t in reference.tokens() {
        s.force(&t.surface, t.category)?;
    }
    Ok(s.finish(ScoreMode::Static).scored)
}
