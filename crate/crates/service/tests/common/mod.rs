#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use factweave::markup::parse_tokenform;
use factweave::retrieval::{CosineIndex, Outcome};
use factweave::trie::{key_path, QueryTrie};
use factweave::{Selector, StoreKey, Triplet, TripletStore};
use factweave_service::http::{route_of, RunningServer};
use factweave_service::{Engine, Op, ServiceConfig};
use factweave_testkit::{random_name, SynthDoc};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use reqwest::blocking::Client;
use reqwest::Method;
use serde_json::{json, Value};

pub struct Wire {
    pub server: RunningServer,
    pub engine: Arc<Engine>,
    pub client: Client,
}

impl Wire {
    pub fn start(config: ServiceConfig) -> Self {
        let engine = Arc::new(Engine::new(config).unwrap());
        let server = RunningServer::start(engine.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
        Wire {
            server,
            engine,
            client: Client::new(),
        }
    }

    pub fn empty() -> Self {
        Self::start(ServiceConfig::default())
    }

    /// Status and raw body of one operation over HTTP.
    pub fn raw(&self, op: Op, body: &Value) -> (u16, Vec<u8>) {
        let (method, path) = route_of(op);
        let method = Method::from_bytes(method.as_bytes()).unwrap();
        let mut req = self.client.request(method, self.server.url(path));
        if op != Op::Stats {
            req = req
                .header("content-type", "application/json")
                .body(serde_json::to_vec(body).unwrap());
        }
        let resp = req.send().unwrap();
        (resp.status().as_u16(), resp.bytes().unwrap().to_vec())
    }

    pub fn call(&self, op: Op, body: Value) -> (u16, Value) {
        let (status, bytes) = self.raw(op, &body);
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    pub fn ok(&self, op: Op, body: Value) -> Value {
        let (status, v) = self.call(op, body);
        assert_eq!(status, 200, "{op:?}: {v}");
        v
    }
}

/// Status and serialized body of one operation run in process.
pub fn local(engine: &Engine, op: Op, body: &Value) -> (u16, Vec<u8>) {
    match engine.dispatch(op, &serde_json::to_vec(body).unwrap()) {
        Ok(v) => (200, serde_json::to_vec(&v).unwrap()),
        Err(e) => (e.status, serde_json::to_vec(&e.body()).unwrap()),
    }
}

/// Random request generator over a small key pool so operations interact.
pub struct Gen {
    rng: StdRng,
    entities: Vec<String>,
    relations: Vec<String>,
    snapshot: String,
}

impl Gen {
    fn key(&mut self) -> (String, String) {
        (
            self.entities.choose(&mut self.rng).unwrap().clone(),
            self.relations.choose(&mut self.rng).unwrap().clone(),
        )
    }

    fn triplet(&mut self) -> Value {
        let (e, r) = self.key();
        json!({"entity": e, "relation": r, "value": format!("v{}", self.rng.gen_range(0..4))})
    }

    fn op(&mut self) -> (Op, Value) {
        let rng = &mut self.rng;
        match rng.gen_range(0..100) {
            0..=19 => {
                let n = self.rng.gen_range(1..4);
                let ts: Vec<Value> = (0..n).map(|_| self.triplet()).collect();
                let src = ["a", "b", "c"].choose(&mut self.rng).unwrap();
                if self.rng.gen_bool(0.2) {
                    let doc = SynthDoc::random(&mut self.rng, 2);
                    (
                        Op::Ingest,
                        json!({"documents": [{"id": src, "text": doc.inline(), "format": "inline"}]}),
                    )
                } else {
                    (Op::Ingest, json!({"triplets": ts, "source": src}))
                }
            }
            20..=34 => {
                let (e, r) = self.key();
                (Op::Lookup, json!({"entity": e, "relation": r}))
            }
            35..=49 => {
                let (mut e, r) = self.key();
                if self.rng.gen_bool(0.5) {
                    e.pop();
                }
                if self.rng.gen_bool(0.3) {
                    let t = self.rng.gen_range(-1.0..1.0);
                    (Op::Retrieve, json!({"entity": e, "relation": r, "threshold": t}))
                } else {
                    (Op::Retrieve, json!({"entity": e, "relation": r}))
                }
            }
            50..=59 => {
                let (e, r) = self.key();
                let sel = match self.rng.gen_range(0..4) {
                    0 => json!({"by_key": {"entity": e, "relation": r}}),
                    1 => json!({"by_entity": e}),
                    2 => {
                        let src = ["a", "b", "c"].choose(&mut self.rng).unwrap();
                        json!({ "by_source": src })
                    }
                    _ => {
                        let t = self.triplet();
                        json!({ "by_triplets": [t] })
                    }
                };
                (Op::Delete, sel)
            }
            60..=64 => (Op::Stats, Value::Null),
            65..=72 => {
                let (e, r) = self.key();
                let path = key_path(&StoreKey::new(&e, &r));
                let cut = self.rng.gen_range(0..=path.len());
                (Op::TrieNext, json!({"prefix": path[..cut]}))
            }
            73..=80 => {
                let doc = SynthDoc::random(&mut self.rng, 3);
                match self.rng.gen_range(0..3) {
                    0 => (Op::Mask, json!({"text": doc.token_form()})),
                    1 => (Op::Mask, json!({"text": doc.inline(), "format": "inline"})),
                    _ => (Op::Mask, json!({"text": format!("{} <|db_end|>", doc.token_form())})),
                }
            }
            81..=86 => {
                let n = self.rng.gen_range(0..6);
                let tokens: Vec<Value> = (0..n)
                    .map(|i| {
                        let lp = -self.rng.gen_range(0.0..5.0);
                        json!({"surface": format!("w{i}"), "category": "original", "logprob": lp, "mask": 1})
                    })
                    .collect();
                let mode = ["static", "dynamic", "normalized"].choose(&mut self.rng).unwrap();
                (Op::Ppl, json!({"mode": mode, "tokens": tokens}))
            }
            87..=93 => {
                let (e, r) = self.key();
                let mut script = vec!["The".to_owned(), "<|db_start|>".to_owned()];
                script.extend(factweave::markup::tokenize(&e));
                script.push("<|sep|>".into());
                script.extend(factweave::markup::tokenize(&r));
                script.push("<|db_retrieve|>".into());
                script.push("end".into());
                let mode = if self.rng.gen_bool(0.3) { "trie" } else { "fuzzy" };
                (
                    Op::Generate,
                    json!({"lm": {"script": script}, "config": {"query_mode": mode}}),
                )
            }
            94..=96 => (Op::SnapshotSave, json!({"path": self.snapshot})),
            _ => (Op::SnapshotLoad, json!({"path": self.snapshot})),
        }
    }
}

/// Core-library view of the same store, driven independently of the service.
pub fn check_semantics(mirror: &mut TripletStore, op: Op, req: &Value, status: u16, resp: &Value) {
    let key = |v: &Value| StoreKey::new(v["entity"].as_str().unwrap(), v["relation"].as_str().unwrap());
    match op {
        Op::Ingest if status == 200 => {
            let mut n = 0;
            if let Some(ts) = req.get("triplets") {
                let ts: Vec<Triplet> = serde_json::from_value(ts.clone()).unwrap();
                n += mirror.ingest(&ts, req["source"].as_str().unwrap());
            }
            for d in req.get("documents").and_then(Value::as_array).into_iter().flatten() {
                let doc = factweave::markup::parse_inline(d["text"].as_str().unwrap()).unwrap();
                n += mirror.ingest(&doc.extract_triplets(), d["id"].as_str().unwrap());
            }
            assert_eq!(resp["ingested"], n);
        }
        Op::Lookup => match mirror.lookup_exact(&key(req)) {
            Some(v) => assert_eq!(resp["value"], v),
            None => assert_eq!(resp, &json!({"outcome": "unknown"})),
        },
        Op::Retrieve if status == 200 => {
            let index = CosineIndex::with_trigrams(mirror);
            let t = req.get("threshold").and_then(Value::as_f64).unwrap_or(0.6);
            let r = index.retrieve(mirror, &key(req), t).unwrap();
            match r.outcome {
                Outcome::Hit { value, matched } => {
                    assert_eq!(resp["value"], value.as_str());
                    assert_eq!(resp["matched"], serde_json::to_value(matched).unwrap());
                }
                Outcome::Unknown => assert_eq!(resp["outcome"], "unknown"),
            }
            if r.similarity.is_finite() {
                assert!((resp["similarity"].as_f64().unwrap() - r.similarity).abs() < 1e-8);
            }
        }
        Op::Delete => {
            let sel: Selector = serde_json::from_value(req.clone()).unwrap();
            assert_eq!(resp["deleted"], mirror.delete_matching(&sel));
        }
        Op::Stats => {
            let s = serde_json::to_value(mirror.stats()).unwrap();
            for (k, v) in s.as_object().unwrap() {
                assert_eq!(&resp[k], v, "{k}");
            }
        }
        Op::TrieNext => {
            let prefix: Vec<String> = serde_json::from_value(req["prefix"].clone()).unwrap();
            let next = QueryTrie::build(mirror).allowed_next(&prefix);
            let tokens: BTreeSet<String> = serde_json::from_value(resp["tokens"].clone()).unwrap();
            assert_eq!(tokens, next.tokens);
            assert_eq!(resp["may_terminate"], next.may_terminate);
        }
        Op::Mask => match (req.get("format"), status) {
            (None, 200) => {
                let doc = parse_tokenform(req["text"].as_str().unwrap()).unwrap();
                assert_eq!(resp["mask"], json!(doc.loss_mask()));
            }
            (None, _) => assert!(parse_tokenform(req["text"].as_str().unwrap()).is_err()),
            _ => assert_eq!(status, 200),
        },
        Op::SnapshotLoad if status == 200 => {
            *mirror = TripletStore::load_snapshot(req["path"].as_str().unwrap()).unwrap();
        }
        _ => {}
    }
}

/// Drive `ops` random operations through HTTP and an in-process engine in
/// lockstep, asserting byte-equal responses and core-library semantics.
/// Returns how often each `Op/status` pair occurred.
pub fn differential(seed: u64, ops: usize) -> BTreeMap<String, usize> {
    let dir = tempfile::tempdir().unwrap();
    let wire = Wire::empty();
    let inproc = Engine::new(ServiceConfig::default()).unwrap();
    let mut mirror = TripletStore::new();
    let mut rng = StdRng::seed_from_u64(seed);
    let entities = (0..8).map(|_| random_name(&mut rng, 2)).collect();
    let relations = ["born", "died", "spouse", "capital of"].map(String::from).to_vec();
    let mut gen = Gen {
        rng,
        entities,
        relations,
        snapshot: dir.path().join("diff.tsv").display().to_string(),
    };
    let mut per_op = BTreeMap::new();
    for i in 0..ops {
        let (op, body) = gen.op();
        let (hs, hb) = wire.raw(op, &body);
        let (ls, lb) = local(&inproc, op, &body);
        assert_eq!((hs, &hb), (ls, &lb), "op {i} {op:?} {body}");
        let resp: Value = serde_json::from_slice(&hb).unwrap();
        check_semantics(&mut mirror, op, &body, hs, &resp);
        *per_op.entry(format!("{op:?}/{hs}")).or_insert(0) += 1;
    }
    per_op
}

/// The `factweave` binary with no snapshot taken from the environment.
pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_factweave"));
    c.env_remove("FACTWEAVE_SNAPSHOT");
    c
}

/// A `factweave serve` child process and its base URL; killed on drop.
pub struct Serve(pub Child, pub String);

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

pub fn serve(store: &Path) -> Serve {
    let mut child = bin()
        .arg("--store")
        .arg(store)
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    Serve(child, format!("http://{addr}"))
}
