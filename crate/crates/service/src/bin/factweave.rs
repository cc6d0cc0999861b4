use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factweave::accounting::{rank_offload, DeltaLossRecord};
use factweave::markup::{parse_inline, parse_tokenform};
use factweave::{Format, Selector, StoreKey};
use factweave_service::engine::{
    GenerateRequest, IngestRequest, KeyRequest, MaskRequest, PplMode, PplRequest, RetrieveRequest, SnapshotRequest,
    TrieNextRequest,
};
use factweave_service::{ApiError, Engine, ServiceConfig};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(
    name = "factweave",
    version,
    about = "Triplet store, fuzzy lookup and lookup-call tooling"
)]
struct Cli {
    /// Snapshot file holding the store between invocations.
    #[arg(long, global = true, env = "FACTWEAVE_SNAPSHOT")]
    store: Option<PathBuf>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    #[value(name = "token_form")]
    TokenForm,
    Inline,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::TokenForm => Format::TokenForm,
            FormatArg::Inline => Format::Inline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PplModeArg {
    Static,
    Dynamic,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryModeArg {
    Fuzzy,
    Trie,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DeleteArgs {
    #[arg(long, value_name = "ENTITY")]
    by_entity: Option<String>,
    #[arg(long, value_name = "SOURCE")]
    by_source: Option<String>,
    #[arg(long, num_args = 2, value_names = ["ENTITY", "RELATION"])]
    by_key: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum SnapshotAction {
    Save { path: PathBuf },
    Load { path: PathBuf },
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the lookup calls of a JSON-lines corpus.
    Ingest { corpus: PathBuf },
    /// Exact lookup of the majority value.
    Lookup { entity: String, relation: String },
    /// Fuzzy lookup with a rejection threshold.
    Retrieve {
        entity: String,
        relation: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Delete stored triplets.
    Delete(DeleteArgs),
    /// Store statistics.
    Stats,
    /// Loss mask of an annotated document (`-` reads standard input).
    Mask {
        doc: PathBuf,
        #[arg(long, value_enum)]
        from: Option<FormatArg>,
    },
    /// Remove all lookup calls from a document.
    Strip {
        doc: PathBuf,
        #[arg(long, value_enum)]
        from: Option<FormatArg>,
    },
    /// Convert between inline and token-form annotation.
    Convert {
        doc: PathBuf,
        #[arg(long, value_enum)]
        to: FormatArg,
        #[arg(long, value_enum)]
        from: Option<FormatArg>,
    },
    /// Perplexity of a scored JSON-lines sequence.
    Ppl {
        #[arg(long, value_enum)]
        mode: PplModeArg,
        scored: PathBuf,
    },
    /// Rank delta-loss records and keep the top fraction.
    OffloadRank {
        #[arg(long)]
        ratio: f64,
        deltas: PathBuf,
    },
    /// Generate with a scripted model and live lookups.
    Generate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, value_enum)]
        mode: Option<QueryModeArg>,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Tokens allowed after a query prefix.
    TrieNext { prefix: Vec<String> },
    /// Save or load a store snapshot.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "FACTWEAVE_ADDR")]
        addr: Option<SocketAddr>,
    },
}

fn read_input(path: &Path) -> Result<String, ApiError> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| ApiError::io(format!("stdin: {e}")))?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| ApiError::io(format!("{}: {e}", path.display())))
}

fn detect_format(text: &str, from: Option<FormatArg>) -> Format {
    match from {
        Some(f) => f.into(),
        None if text.contains("[dblookup(") && !text.contains("<|db_start|>") => Format::Inline,
        None => Format::TokenForm,
    }
}

fn parse_doc(text: &str, format: Format) -> Result<factweave::AnnotatedDocument, ApiError> {
    match format {
        Format::TokenForm => parse_tokenform(text),
        Format::Inline => parse_inline(text),
    }
    .map_err(|e| ApiError::markup(e.to_string()))
}

fn num(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn table(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<w$}  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Result of one command: JSON value plus its human rendering.
struct Output {
    value: Value,
    human: String,
    mutated: bool,
}

impl Output {
    fn new(value: Value, human: impl Into<String>) -> Self {
        Output {
            value,
            human: human.into(),
            mutated: false,
        }
    }
}

fn lookup_line(v: &Value) -> String {
    match v["outcome"].as_str() {
        Some("hit") => {
            let mut s = v["value"].as_str().unwrap_or_default().to_owned();
            if let Some(m) = v.get("matched") {
                s.push_str(&format!(
                    "\t(matched {} / {}, similarity {})",
                    num(&m["entity"]),
                    num(&m["relation"]),
                    num(&v["similarity"])
                ));
            }
            s
        }
        _ => match v.get("similarity") {
            Some(s) => format!("unknown\t(best similarity {})", num(s)),
            None => "unknown".into(),
        },
    }
}

fn run(cli: Cli) -> Result<Output, ApiError> {
    let mut config = ServiceConfig::from_env()?;
    config.snapshot = cli.store.clone();
    let engine = Engine::new(config)?;
    let out = match cli.command {
        Command::Ingest { corpus } => {
            let text = read_input(&corpus)?;
            let documents = factweave::corpus::read_records(&text).map_err(|e| ApiError::invalid(e.to_string()))?;
            let v = engine.ingest(IngestRequest {
                triplets: Vec::new(),
                source: String::new(),
                documents,
            })?;
            let human = format!(
                "ingested {} triplets ({} skipped)",
                num(&v["ingested"]),
                num(&v["skipped"])
            );
            Output {
                mutated: true,
                ..Output::new(v, human)
            }
        }
        Command::Lookup { entity, relation } => {
            let v = engine.lookup(KeyRequest { entity, relation });
            let human = lookup_line(&v);
            Output::new(v, human)
        }
        Command::Retrieve {
            entity,
            relation,
            threshold,
        } => {
            let v = engine.retrieve(RetrieveRequest {
                entity,
                relation,
                threshold,
            })?;
            let human = lookup_line(&v);
            Output::new(v, human)
        }
        Command::Delete(d) => {
            let selector = match (d.by_entity, d.by_source, d.by_key) {
                (Some(e), _, _) => Selector::ByEntity(e),
                (_, Some(s), _) => Selector::BySource(s),
                (_, _, Some(k)) => Selector::ByKey(StoreKey::new(&k[0], &k[1])),
                _ => return Err(ApiError::invalid("no selector given")),
            };
            let v = engine.delete(selector);
            let human = format!("deleted {} occurrences", num(&v["deleted"]));
            Output {
                mutated: true,
                ..Output::new(v, human)
            }
        }
        Command::Stats => {
            let v = engine.stats();
            let rows: Vec<(String, String)> = v
                .as_object()
                .map(|m| {
                    m.iter()
                        .map(|(k, x)| match x {
                            Value::Object(o) => (k.clone(), o.values().map(num).collect::<Vec<_>>().join(" ")),
                            _ => (k.clone(), num(x)),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let human = table(&rows);
            Output::new(v, human)
        }
        Command::Mask { doc, from } => {
            let text = read_input(&doc)?;
            let format = detect_format(&text, from);
            let v = engine.mask(MaskRequest {
                text,
                format: Some(format),
            })?;
            let mut human = String::new();
            if let (Some(toks), Some(cats), Some(mask)) =
                (v["tokens"].as_array(), v["categories"].as_array(), v["mask"].as_array())
            {
                for (i, ((t, c), m)) in toks.iter().zip(cats).zip(mask).enumerate() {
                    human.push_str(&format!("{i}\t{}\t{}\t{}\n", num(t), num(c), num(m)));
                }
            }
            Output::new(v, human.trim_end())
        }
        Command::Strip { doc, from } => {
            let text = read_input(&doc)?;
            let d = parse_doc(&text, detect_format(&text, from))?;
            let s = d.strip_annotations();
            Output::new(json!({ "text": s }), s)
        }
        Command::Convert { doc, to, from } => {
            let text = read_input(&doc)?;
            let d = parse_doc(&text, detect_format(&text, from))?;
            let s = d.serialize(to.into());
            Output::new(json!({ "text": s }), s)
        }
        Command::Ppl { mode, scored } => {
            let text = read_input(&scored)?;
            let mode = match mode {
                PplModeArg::Static => PplMode::Static,
                PplModeArg::Dynamic => PplMode::Dynamic,
                PplModeArg::Normalized => PplMode::Normalized,
            };
            let seq =
                factweave::accounting::ScoredSequence::from_jsonl(&text, factweave::accounting::ScoreMode::Static)
                    .map_err(|e| ApiError::invalid(e.to_string()))?;
            let v = engine.ppl(PplRequest {
                mode,
                tokens: seq.tokens().to_vec(),
            })?;
            let human = format!("{}\t{}", num(&v["mode"]), num(&v["ppl"]));
            Output::new(v, human)
        }
        Command::OffloadRank { ratio, deltas } => {
            let text = read_input(&deltas)?;
            let records = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(n, l)| {
                    serde_json::from_str::<DeltaLossRecord>(l)
                        .map_err(|e| ApiError::invalid_json(format!("line {}: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let ranking = rank_offload(&records, ratio).map_err(|e| ApiError::invalid(e.to_string()))?;
            let v = json!(ranking);
            let human = format!(
                "keep {} of {}\tthreshold {}\nids {}",
                ranking.keep.len(),
                records.len(),
                ranking.threshold.map_or("-".to_owned(), |t| t.to_string()),
                ranking.keep.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
            );
            Output::new(v, human)
        }
        Command::Generate {
            script,
            prompt,
            mode,
            max_tokens,
            threshold,
        } => {
            let mut overrides = Map::new();
            if let Some(m) = mode {
                let m = match m {
                    QueryModeArg::Fuzzy => "fuzzy",
                    QueryModeArg::Trie => "trie",
                };
                overrides.insert("query_mode".into(), json!(m));
            }
            if let Some(n) = max_tokens {
                overrides.insert("max_tokens".into(), json!(n));
            }
            if let Some(t) = threshold {
                overrides.insert("retrieval_threshold".into(), json!(t));
            }
            let v = engine.generate(GenerateRequest {
                lm: None,
                lm_path: Some(script),
                prompt,
                config: overrides,
            })?;
            let mut human = v["text"].as_str().unwrap_or_default().to_owned();
            for o in v["outcomes"].as_array().into_iter().flatten() {
                human.push_str(&format!(
                    "\ncall {}: {} / {} -> {} ({})",
                    num(&o["call"]),
                    num(&o["entity"]),
                    num(&o["relation"]),
                    num(&o["value"]),
                    if o["hit"] == json!(true) { "hit" } else { "failed" }
                ));
            }
            for w in v["warnings"].as_array().into_iter().flatten() {
                eprintln!("warning: {}", num(w));
            }
            Output::new(v, human)
        }
        Command::TrieNext { prefix } => {
            let v = engine.trie_next(TrieNextRequest { prefix });
            let mut lines: Vec<String> = v["tokens"].as_array().into_iter().flatten().map(num).collect();
            if v["may_terminate"] == json!(true) {
                lines.push("(may terminate)".into());
            }
            Output::new(v, lines.join("\n"))
        }
        Command::Snapshot { action } => match action {
            SnapshotAction::Save { path } => {
                let v = engine.snapshot_save(SnapshotRequest { path: Some(path) })?;
                let human = format!("saved {} ({})", num(&v["path"]), num(&v["state_hash"]));
                Output::new(v, human)
            }
            SnapshotAction::Load { path } => {
                let v = engine.snapshot_load(SnapshotRequest { path: Some(path) })?;
                let human = format!("loaded {} ({})", num(&v["path"]), num(&v["state_hash"]));
                Output {
                    mutated: true,
                    ..Output::new(v, human)
                }
            }
        },
        Command::Serve { addr } => return serve(engine, addr).map(|()| Output::new(Value::Null, "")),
    };
    if out.mutated && cli.store.is_some() {
        engine.snapshot_save(SnapshotRequest::default())?;
    }
    Ok(out)
}

fn serve(engine: Engine, addr: Option<SocketAddr>) -> Result<(), ApiError> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let addr = addr.unwrap_or(engine.config().addr);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ApiError::io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ApiError::io(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| ApiError::io(e.to_string()))?;
        tracing::info!(%local, "listening");
        println!("listening on {local}");
        factweave_service::http::serve(Arc::new(engine), listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::io(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                if !out.value.is_null() {
                    println!("{}", out.value);
                }
            } else if !out.human.is_empty() {
                println!("{}", out.human);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                println!("{}", e.body());
            }
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
