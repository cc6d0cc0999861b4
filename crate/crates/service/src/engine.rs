//! In-process implementation of every service operation.
//!
//! Each operation takes a JSON request body and returns the JSON response
//! value. The HTTP layer serializes that value unchanged, so a response read
//! off the wire is byte-identical to `serde_json::to_vec` of the value
//! returned here.

use std::path::PathBuf;
use std::sync::RwLock;

use factweave::accounting::{nll, ppl_normalized, ppl_over_original, ScoreMode, ScoredSequence, ScoredToken};
use factweave::corpus::CorpusRecord;
use factweave::harness::{generate, GenerationConfig, KnowledgeBase, ScriptedLm};
use factweave::markup::{parse_inline, parse_tokenform};
use factweave::retrieval::{CosineIndex, Outcome};
use factweave::store::StoreError;
use factweave::trie::QueryTrie;
use factweave::{Format, Selector, StoreKey, Triplet, TripletStore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::ServiceConfig;
use crate::error::ApiError;

/// Round to 9 significant digits for the wire.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Ingest,
    Lookup,
    Retrieve,
    Delete,
    Stats,
    TrieNext,
    Mask,
    Ppl,
    Generate,
    SnapshotSave,
    SnapshotLoad,
}

impl Op {
    pub const ALL: [Op; 11] = [
        Op::Ingest,
        Op::Lookup,
        Op::Retrieve,
        Op::Delete,
        Op::Stats,
        Op::TrieNext,
        Op::Mask,
        Op::Ppl,
        Op::Generate,
        Op::SnapshotSave,
        Op::SnapshotLoad,
    ];

    pub fn mutates(self) -> bool {
        matches!(self, Op::Ingest | Op::Delete | Op::SnapshotLoad)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default)]
    pub triplets: Vec<Triplet>,
    /// Source id for `triplets`.
    #[serde(default = "default_source")]
    pub source: String,
    /// Corpus records; each record's lookup calls are ingested with the
    /// record id as source.
    #[serde(default)]
    pub documents: Vec<CorpusRecord>,
}

fn default_source() -> String {
    "request".to_owned()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRequest {
    pub entity: String,
    pub relation: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub entity: String,
    pub relation: String,
    pub threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrieNextRequest {
    pub prefix: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    pub text: String,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplMode {
    Static,
    Dynamic,
    Normalized,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PplRequest {
    pub mode: PplMode,
    pub tokens: Vec<ScoredToken>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSpec {
    #[serde(default)]
    pub vocab: Vec<String>,
    pub script: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    /// Scripted model given inline.
    pub lm: Option<LmSpec>,
    /// Scripted model file readable by the service.
    pub lm_path: Option<PathBuf>,
    #[serde(default)]
    pub prompt: String,
    /// Overrides on top of the default generation config.
    #[serde(default)]
    pub config: Map<String, Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRequest {
    pub path: Option<PathBuf>,
}

/// Store plus the derived structures rebuilt after every mutation.
pub struct State {
    pub store: TripletStore,
    pub index: CosineIndex,
    pub trie: QueryTrie,
}

impl State {
    pub fn new(store: TripletStore) -> Self {
        let index = CosineIndex::with_trigrams(&store);
        let trie = QueryTrie::build(&store);
        State { store, index, trie }
    }

    fn kb(&self) -> KnowledgeBase<'_> {
        KnowledgeBase {
            store: &self.store,
            index: &self.index,
            trie: &self.trie,
        }
    }
}

pub struct Engine {
    config: ServiceConfig,
    state: RwLock<State>,
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(body).map_err(|e| ApiError::invalid_json(e.to_string()))
}

fn store_error(path: &std::path::Path, e: StoreError) -> ApiError {
    match e {
        StoreError::Io(e) => ApiError::io(format!("{}: {e}", path.display())),
        StoreError::CorruptSnapshot(m) => ApiError::snapshot(format!("{}: {m}", path.display())),
    }
}

/// Hex checksum from the final line of the store's snapshot encoding.
pub fn state_hash(store: &TripletStore) -> String {
    let bytes = store.to_snapshot_bytes();
    let text = String::from_utf8_lossy(&bytes);
    text.trim_end().rsplit(' ').next().unwrap_or_default().to_owned()
}

impl Engine {
    /// Start from the configured snapshot when the file exists, otherwise
    /// from an empty store.
    pub fn new(config: ServiceConfig) -> Result<Self, ApiError> {
        config.validate()?;
        let store = match &config.snapshot {
            Some(p) if p.exists() => TripletStore::load_snapshot(p).map_err(|e| store_error(p, e))?,
            _ => TripletStore::new(),
        };
        Ok(Self::with_store(store, config))
    }

    pub fn with_store(store: TripletStore, config: ServiceConfig) -> Self {
        Engine {
            config,
            state: RwLock::new(State::new(store)),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Run one operation on a raw JSON body.
    pub fn dispatch(&self, op: Op, body: &[u8]) -> Result<Value, ApiError> {
        match op {
            Op::Ingest => self.ingest(parse(body)?),
            Op::Lookup => Ok(self.lookup(parse(body)?)),
            Op::Retrieve => self.retrieve(parse(body)?),
            Op::Delete => Ok(self.delete(parse(body)?)),
            Op::Stats => Ok(self.stats()),
            Op::TrieNext => Ok(self.trie_next(parse(body)?)),
            Op::Mask => self.mask(parse(body)?),
            Op::Ppl => self.ppl(parse(body)?),
            Op::Generate => self.generate(parse(body)?),
            Op::SnapshotSave => self.snapshot_save(parse(body)?),
            Op::SnapshotLoad => self.snapshot_load(parse(body)?),
        }
    }

    pub fn ingest(&self, req: IngestRequest) -> Result<Value, ApiError> {
        let mut batches: Vec<(String, Vec<Triplet>)> = Vec::new();
        if !req.triplets.is_empty() {
            batches.push((req.source, req.triplets));
        }
        for r in req.documents {
            let doc = r
                .parse()
                .map_err(|e| ApiError::markup(format!("record {:?}: {e}", r.id)))?;
            batches.push((r.id, doc.extract_triplets()));
        }
        let submitted: usize = batches.iter().map(|(_, t)| t.len()).sum();
        let mut state = self.write();
        let ingested: u64 = batches.iter().map(|(src, t)| state.store.ingest(t, src)).sum();
        if ingested > 0 {
            *state = State::new(std::mem::take(&mut state.store));
        }
        Ok(json!({ "ingested": ingested, "skipped": submitted as u64 - ingested }))
    }

    pub fn lookup(&self, req: KeyRequest) -> Value {
        let state = self.read();
        match state.store.lookup_exact(&StoreKey::new(&req.entity, &req.relation)) {
            Some(v) => json!({ "outcome": "hit", "value": v, "similarity": 1.0 }),
            None => json!({ "outcome": "unknown" }),
        }
    }

    pub fn retrieve(&self, req: RetrieveRequest) -> Result<Value, ApiError> {
        let threshold = req.threshold.unwrap_or(self.config.threshold);
        let state = self.read();
        let r = state
            .index
            .retrieve(&state.store, &StoreKey::new(&req.entity, &req.relation), threshold)
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        let mut out = Map::new();
        match r.outcome {
            Outcome::Hit { value, matched } => {
                out.insert("outcome".into(), json!("hit"));
                out.insert("value".into(), json!(value));
                out.insert("matched".into(), json!(matched));
            }
            Outcome::Unknown => {
                out.insert("outcome".into(), json!("unknown"));
            }
        }
        if r.similarity.is_finite() {
            out.insert("similarity".into(), json!(sig9(r.similarity)));
        }
        if r.unembeddable {
            out.insert("unembeddable".into(), json!(true));
        }
        Ok(Value::Object(out))
    }

    pub fn delete(&self, selector: Selector) -> Value {
        let mut state = self.write();
        let deleted = state.store.delete_matching(&selector);
        if deleted > 0 {
            *state = State::new(std::mem::take(&mut state.store));
        }
        json!({ "deleted": deleted })
    }

    pub fn stats(&self) -> Value {
        let state = self.read();
        let mut out = match serde_json::to_value(state.store.stats()) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        out.insert("provider".into(), json!(state.index.provider_info()));
        out.insert("threshold".into(), json!(self.config.threshold));
        out.insert("state_hash".into(), json!(state_hash(&state.store)));
        Value::Object(out)
    }

    pub fn trie_next(&self, req: TrieNextRequest) -> Value {
        let state = self.read();
        let next = state.trie.allowed_next(&req.prefix);
        json!({ "tokens": next.tokens, "may_terminate": next.may_terminate })
    }

    pub fn mask(&self, req: MaskRequest) -> Result<Value, ApiError> {
        let doc = match req.format.unwrap_or(Format::TokenForm) {
            Format::TokenForm => parse_tokenform(&req.text),
            Format::Inline => parse_inline(&req.text),
        }
        .map_err(|e| ApiError::markup(e.to_string()))?;
        Ok(json!({
            "tokens": doc.surfaces(),
            "categories": doc.tokens().iter().map(|t| t.category).collect::<Vec<_>>(),
            "mask": doc.loss_mask(),
            "triplets": doc.extract_triplets(),
            "stripped": doc.strip_annotations(),
            "token_form": doc.serialize(Format::TokenForm),
            "inline": doc.serialize(Format::Inline),
        }))
    }

    pub fn ppl(&self, req: PplRequest) -> Result<Value, ApiError> {
        let score_mode = match req.mode {
            PplMode::Static => ScoreMode::Static,
            _ => ScoreMode::Dynamic,
        };
        let seq = ScoredSequence::new(req.tokens, score_mode).map_err(|e| ApiError::invalid(e.to_string()))?;
        let ppl = match req.mode {
            PplMode::Normalized => ppl_normalized(&seq),
            _ => ppl_over_original(&seq),
        }
        .map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(json!({
            "mode": req.mode,
            "ppl": sig9(ppl),
            "nll": sig9(nll(&seq)),
            "original_tokens": seq.original_token_count(),
        }))
    }

    /// Generation config with the service threshold as default and the
    /// request's overrides applied.
    pub fn generation_config(&self, overrides: Map<String, Value>) -> Result<GenerationConfig, ApiError> {
        let base = GenerationConfig {
            retrieval_threshold: self.config.threshold,
            ..GenerationConfig::default()
        };
        let mut merged = match serde_json::to_value(base) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        merged.extend(overrides);
        let config: GenerationConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| ApiError::invalid(format!("config: {e}")))?;
        config.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn generate(&self, req: GenerateRequest) -> Result<Value, ApiError> {
        let lm = match (req.lm, req.lm_path) {
            (Some(lm), None) => ScriptedLm::new(lm.vocab, lm.script),
            (None, Some(path)) => {
                let text =
                    std::fs::read_to_string(&path).map_err(|e| ApiError::io(format!("{}: {e}", path.display())))?;
                ScriptedLm::from_json(&text)
            }
            _ => return Err(ApiError::invalid("exactly one of \"lm\" and \"lm_path\" is required")),
        }
        .map_err(|e| ApiError::invalid(e.to_string()))?;
        let config = self.generation_config(req.config)?;
        let state = self.read();
        let g = generate(&lm, &req.prompt, state.kb(), &config).map_err(|e| ApiError::harness(e.to_string()))?;
        let outcomes: Vec<Value> = g
            .outcomes
            .iter()
            .map(|o| {
                let mut v = json!(o);
                if let (Some(s), Some(obj)) = (o.similarity, v.as_object_mut()) {
                    obj.insert("similarity".into(), json!(sig9(s)));
                }
                v
            })
            .collect();
        Ok(json!({
            "text": g.document.serialize(Format::TokenForm),
            "stripped": g.document.strip_annotations(),
            "outcomes": outcomes,
            "warnings": g.warnings,
            "tokens": g.scored.tokens(),
        }))
    }

    fn snapshot_path(&self, req: SnapshotRequest) -> Result<PathBuf, ApiError> {
        req.path
            .or_else(|| self.config.snapshot.clone())
            .ok_or_else(|| ApiError::invalid("no snapshot path given or configured"))
    }

    pub fn snapshot_save(&self, req: SnapshotRequest) -> Result<Value, ApiError> {
        let path = self.snapshot_path(req)?;
        let state = self.read();
        state.store.save_snapshot(&path).map_err(|e| store_error(&path, e))?;
        Ok(json!({
            "path": path.display().to_string(),
            "state_hash": state_hash(&state.store),
            "stats": state.store.stats(),
        }))
    }

    pub fn snapshot_load(&self, req: SnapshotRequest) -> Result<Value, ApiError> {
        let path = self.snapshot_path(req)?;
        let store = TripletStore::load_snapshot(&path).map_err(|e| store_error(&path, e))?;
        let mut state = self.write();
        *state = State::new(store);
        Ok(json!({
            "path": path.display().to_string(),
            "state_hash": state_hash(&state.store),
            "stats": state.store.stats(),
        }))
    }
}
