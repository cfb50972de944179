//! Multi-source knowledge aggregation for a resolved entity: a local KB
//! of curated records plus best-effort external fetchers (knowledge
//! graph, web search, pageview API) merged into one ranked snippet list.
//!
//! Externals are contracts, not implementations: each fetcher maps
//! (entity name, question) to raw snippets and runs on its own thread
//! against a shared deadline. A failing or slow source is recorded in
//! the per-source report and skipped — it never poisons the rest.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Category, QuestionType};
use crate::resolve::EntityHypothesis;
use crate::text::content_tokens;

/// Default per-aggregation fetcher deadline.
pub const DEFAULT_FETCH_TIMEOUT_MS: u64 = 3_000;
/// Default score bonus for fresh snippets on dynamic questions.
pub const DEFAULT_RECENCY_BONUS: f64 = 0.5;
/// Default freshness window (seconds) for the recency bonus.
pub const DEFAULT_RECENCY_WINDOW_SECS: i64 = 7 * 24 * 60 * 60;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("entity not found in local store: {0}")]
    NotFound(String),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("aggregation budget must be at least 1")]
    InvalidBudget,
    #[error("fetcher failure: {0}")]
    FetcherFailure(String),
    #[error("malformed fetcher response: {0}")]
    MalformedResponse(String),
}

/// Where a snippet came from, in descending trust order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalKB,
    KnowledgeGraph,
    WebSearch,
    PageviewApi,
}

impl SourceKind {
    /// Base score of the source: curated beats scraped.
    pub fn priority(&self) -> f64 {
        match self {
            SourceKind::LocalKB => 1.0,
            SourceKind::KnowledgeGraph => 0.8,
            SourceKind::WebSearch => 0.6,
            SourceKind::PageviewApi => 0.4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SourceKind::LocalKB => "local-kb",
            SourceKind::KnowledgeGraph => "knowledge-graph",
            SourceKind::WebSearch => "web-search",
            SourceKind::PageviewApi => "pageview-api",
        }
    }
}

/// One (predicate, object) fact with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub object: String,
    pub source_uri: String,
    /// Unix seconds.
    pub retrieved_at: i64,
}

/// Curated per-entity knowledge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub facts: Vec<Fact>,
}

impl EntityRecord {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.name.trim().is_empty() {
            return Err(KnowledgeError::SchemaViolation(format!(
                "entity {:?}: name must be non-empty",
                self.entity_id
            )));
        }
        Ok(())
    }
}

/// One ranked piece of knowledge handed to answer generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub text: String,
    pub source_kind: SourceKind,
    pub score: f64,
    /// Unix seconds, when the source supplied one.
    pub timestamp: Option<i64>,
    pub source_uri: Option<String>,
}

/// Raw fetcher output before stamping and scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchedSnippet {
    pub text: String,
    #[serde(default)]
    pub uri: Option<String>,
    /// Unix seconds.
    #[serde(default)]
    pub timestamp: Option<i64>,
}

/// External knowledge source contract. Implementations must be cheap to
/// share across threads; aggregation clones the `Arc` into a worker.
pub trait KnowledgeFetcher: Send + Sync {
    fn source_kind(&self) -> SourceKind;
    fn fetch(
        &self,
        entity_name: &str,
        question: &str,
    ) -> Result<Vec<FetchedSnippet>, KnowledgeError>;
}

/// Immutable local KB loaded from JSONL of [`EntityRecord`]s.
#[derive(Debug, Default, Clone)]
pub struct KnowledgeStore {
    records: Vec<EntityRecord>,
}

impl KnowledgeStore {
    pub fn new(records: Vec<EntityRecord>) -> Result<Self, KnowledgeError> {
        let mut seen = BTreeSet::new();
        for record in &records {
            record.validate()?;
            if !seen.insert(record.entity_id.clone()) {
                return Err(KnowledgeError::SchemaViolation(format!(
                    "duplicate entity_id {:?}",
                    record.entity_id
                )));
            }
        }
        Ok(KnowledgeStore { records })
    }

    pub fn from_jsonl<P: AsRef<Path>>(path: P) -> Result<Self, KnowledgeError> {
        let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut records = Vec::new();
        for (idx, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EntityRecord = serde_json::from_str(&line).map_err(|e| {
                KnowledgeError::SchemaViolation(format!("KB line {}: {e}", idx + 1))
            })?;
            records.push(record);
        }
        KnowledgeStore::new(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn lookup_local(&self, entity_id: &str) -> Result<&EntityRecord, KnowledgeError> {
        self.records
            .iter()
            .find(|r| r.entity_id == entity_id)
            .ok_or_else(|| KnowledgeError::NotFound(entity_id.to_string()))
    }
}

/// Aggregation tunables. `now_unix` anchors the recency window so runs
/// are reproducible; `Default` uses the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub timeout_ms: u64,
    pub recency_bonus: f64,
    pub recency_window_secs: i64,
    /// Unix seconds used as "now" for freshness checks.
    pub now_unix: i64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        let now_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        AggregationConfig {
            timeout_ms: DEFAULT_FETCH_TIMEOUT_MS,
            recency_bonus: DEFAULT_RECENCY_BONUS,
            recency_window_secs: DEFAULT_RECENCY_WINDOW_SECS,
            now_unix,
        }
    }
}

/// Outcome of one source during aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SourceStatus {
    /// The source responded; `count` snippets survived validation.
    Fetched {
        count: usize,
    },
    Failed {
        message: String,
    },
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub kind: SourceKind,
    pub outcome: SourceStatus,
}

/// Ranked snippets plus the per-source report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub snippets: Vec<KnowledgeSnippet>,
    pub sources: Vec<SourceOutcome>,
}

/// Score = source priority + question overlap + recency bonus.
///
/// Overlap is |distinct question content tokens found in the snippet| /
/// |distinct question content tokens| (0 when the question has none).
/// The recency bonus applies only to dynamic questions whose snippet
/// carries a timestamp no older than the freshness window.
pub fn score_snippet(
    snippet: &KnowledgeSnippet,
    question: &str,
    qtype: QuestionType,
    cfg: &AggregationConfig,
) -> f64 {
    let question_tokens: BTreeSet<String> = content_tokens(question).into_iter().collect();
    let overlap = if question_tokens.is_empty() {
        0.0
    } else {
        let snippet_tokens: BTreeSet<String> =
            crate::text::tokenize(&snippet.text).into_iter().collect();
        let shared = question_tokens.intersection(&snippet_tokens).count();
        shared as f64 / question_tokens.len() as f64
    };
    let recency = match (qtype, snippet.timestamp) {
        (QuestionType::Dynamic, Some(ts)) if cfg.now_unix - ts <= cfg.recency_window_secs => {
            cfg.recency_bonus
        }
        _ => 0.0,
    };
    snippet.source_kind.priority() + overlap + recency
}

fn stamp_and_score(
    raw: Vec<FetchedSnippet>,
    kind: SourceKind,
    question: &str,
    qtype: QuestionType,
    cfg: &AggregationConfig,
) -> Vec<KnowledgeSnippet> {
    raw.into_iter()
        .filter(|s| !s.text.trim().is_empty())
        .map(|s| {
            let mut snippet = KnowledgeSnippet {
                text: s.text,
                source_kind: kind,
                score: 0.0,
                timestamp: s.timestamp,
                source_uri: s.uri,
            };
            snippet.score = score_snippet(&snippet, question, qtype, cfg);
            snippet
        })
        .collect()
}

fn local_snippets(
    record: &EntityRecord,
    question: &str,
    qtype: QuestionType,
    cfg: &AggregationConfig,
) -> Vec<KnowledgeSnippet> {
    let mut raw = Vec::with_capacity(record.facts.len() + 1);
    if !record.summary.trim().is_empty() {
        raw.push(FetchedSnippet {
            text: record.summary.clone(),
            uri: None,
            timestamp: None,
        });
    }
    for fact in &record.facts {
        raw.push(FetchedSnippet {
            text: format!("{}: {}", fact.predicate, fact.object),
            uri: Some(fact.source_uri.clone()),
            timestamp: Some(fact.retrieved_at),
        });
    }
    stamp_and_score(raw, SourceKind::LocalKB, question, qtype, cfg)
}

/// Gather knowledge for a resolved entity from the local store plus all
/// fetchers, then dedup, rank, and truncate.
///
/// Fetchers run concurrently against one shared deadline
/// (`cfg.timeout_ms`); a source that errors, panics, or misses the
/// deadline is reported in `sources` and contributes nothing. Exact
/// duplicate texts collapse to the highest-priority source (first seen
/// on ties). Ranking is total: score descending, then source priority
/// descending, then text ascending.
pub fn aggregate(
    store: &KnowledgeStore,
    entity: &EntityHypothesis,
    question: &str,
    qtype: QuestionType,
    fetchers: &[Arc<dyn KnowledgeFetcher>],
    budget: usize,
    cfg: &AggregationConfig,
) -> Result<Aggregation, KnowledgeError> {
    if budget == 0 {
        return Err(KnowledgeError::InvalidBudget);
    }

    let mut sources = Vec::with_capacity(fetchers.len() + 1);
    let mut merged: Vec<KnowledgeSnippet> = Vec::new();

    // Local KB first: highest priority, and the source of the entity's
    // display name for the external fetchers.
    let entity_name = match store.lookup_local(&entity.entity_id) {
        Ok(record) => {
            let snippets = local_snippets(record, question, qtype, cfg);
            sources.push(SourceOutcome {
                kind: SourceKind::LocalKB,
                outcome: SourceStatus::Fetched {
                    count: snippets.len(),
                },
            });
            merged.extend(snippets);
            record.name.clone()
        }
        Err(KnowledgeError::NotFound(id)) => {
            sources.push(SourceOutcome {
                kind: SourceKind::LocalKB,
                outcome: SourceStatus::Failed {
                    message: format!("no local record for {id}"),
                },
            });
            entity.entity_id.clone()
        }
        Err(other) => return Err(other),
    };

    // Fan out to fetchers, one worker each, all racing a common deadline.
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<FetchedSnippet>, KnowledgeError>)>();
    for (i, fetcher) in fetchers.iter().enumerate() {
        let tx = tx.clone();
        let fetcher = Arc::clone(fetcher);
        let entity_name = entity_name.clone();
        let question = question.to_string();
        std::thread::spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(|| fetcher.fetch(&entity_name, &question)))
                .unwrap_or_else(|_| Err(KnowledgeError::FetcherFailure("panicked".to_string())));
            let _ = tx.send((i, result));
        });
    }
    drop(tx);

    let deadline = Instant::now() + Duration::from_millis(cfg.timeout_ms);
    let mut results: Vec<Option<Result<Vec<FetchedSnippet>, KnowledgeError>>> =
        (0..fetchers.len()).map(|_| None).collect();
    let mut pending = fetchers.len();
    while pending > 0 {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(remaining) {
            Ok((i, result)) => {
                results[i] = Some(result);
                pending -= 1;
            }
            Err(_) => break, // deadline passed or all senders gone
        }
    }

    // Merge in fetcher declaration order, not arrival order.
    for (i, fetcher) in fetchers.iter().enumerate() {
        let kind = fetcher.source_kind();
        match results[i].take() {
            Some(Ok(raw)) => {
                let snippets = stamp_and_score(raw, kind, question, qtype, cfg);
                sources.push(SourceOutcome {
                    kind,
                    outcome: SourceStatus::Fetched {
                        count: snippets.len(),
                    },
                });
                merged.extend(snippets);
            }
            Some(Err(e)) => sources.push(SourceOutcome {
                kind,
                outcome: SourceStatus::Failed {
                    message: e.to_string(),
                },
            }),
            None => sources.push(SourceOutcome {
                kind,
                outcome: SourceStatus::TimedOut,
            }),
        }
    }

    // Exact-text dedup: the higher-priority source keeps the slot; on
    // equal priority the earlier arrival (local before fetchers, fetcher
    // list order) wins.
    let mut deduped: Vec<KnowledgeSnippet> = Vec::with_capacity(merged.len());
    for snippet in merged {
        match deduped.iter_mut().find(|s| s.text == snippet.text) {
            Some(existing) => {
                if snippet.source_kind.priority() > existing.source_kind.priority() {
                    *existing = snippet;
                }
            }
            None => deduped.push(snippet),
        }
    }

    deduped.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(
                b.source_kind
                    .priority()
                    .partial_cmp(&a.source_kind.priority())
                    .expect("priorities are finite"),
            )
            .then_with(|| a.text.cmp(&b.text))
    });
    deduped.truncate(budget);

    Ok(Aggregation {
        snippets: deduped,
        sources,
    })
}

/// In-memory fetcher for tests and offline runs. Loaded from JSONL rows
/// of `{"entity_name": …, "snippets": [{text, uri?, timestamp?}]}`.
#[derive(Debug, Clone)]
pub struct FixtureFetcher {
    kind: SourceKind,
    by_entity: std::collections::BTreeMap<String, Vec<FetchedSnippet>>,
}

impl FixtureFetcher {
    pub fn new(
        kind: SourceKind,
        by_entity: std::collections::BTreeMap<String, Vec<FetchedSnippet>>,
    ) -> Self {
        FixtureFetcher { kind, by_entity }
    }

    pub fn from_jsonl<P: AsRef<Path>>(kind: SourceKind, path: P) -> Result<Self, KnowledgeError> {
        #[derive(Deserialize)]
        struct Row {
            entity_name: String,
            snippets: Vec<FetchedSnippet>,
        }
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut by_entity = std::collections::BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line).map_err(|e| {
                KnowledgeError::SchemaViolation(format!("fetcher fixture line {}: {e}", idx + 1))
            })?;
            by_entity.insert(row.entity_name, row.snippets);
        }
        Ok(FixtureFetcher { kind, by_entity })
    }
}

impl KnowledgeFetcher for FixtureFetcher {
    fn source_kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(
        &self,
        entity_name: &str,
        _question: &str,
    ) -> Result<Vec<FetchedSnippet>, KnowledgeError> {
        Ok(self.by_entity.get(entity_name).cloned().unwrap_or_default())
    }
}

/// HTTP fetcher: POST `{base_url}` with `{"entity_name", "question"}`,
/// expecting `{"snippets": [{text, uri?, timestamp?}]}`.
pub struct HttpFetcher {
    kind: SourceKind,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new(kind: SourceKind, url: impl Into<String>, timeout: Duration) -> Self {
        HttpFetcher {
            kind,
            url: url.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("client construction cannot fail with static options"),
        }
    }
}

impl KnowledgeFetcher for HttpFetcher {
    fn source_kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(
        &self,
        entity_name: &str,
        question: &str,
    ) -> Result<Vec<FetchedSnippet>, KnowledgeError> {
        #[derive(Serialize)]
        struct Request<'a> {
            entity_name: &'a str,
            question: &'a str,
        }
        #[derive(Deserialize)]
        struct Response {
            snippets: Vec<FetchedSnippet>,
        }
        let response = self
            .client
            .post(&self.url)
            .json(&Request {
                entity_name,
                question,
            })
            .send()
            .map_err(|e| KnowledgeError::FetcherFailure(e.to_string()))?;
        if !response.status().is_success() {
            return Err(KnowledgeError::FetcherFailure(format!(
                "{} returned {}",
                self.url,
                response.status()
            )));
        }
        let payload: Response = response
            .json()
            .map_err(|e| KnowledgeError::MalformedResponse(e.to_string()))?;
        Ok(payload.snippets)
    }
}
