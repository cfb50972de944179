//! The end-to-end ask flow: detect the question-relevant region, embed
//! its crop, retrieve nearest captioned references, resolve the entity,
//! aggregate knowledge, assemble a prompt, and generate the answer —
//! recording every stage's output in a single replayable trace.
//!
//! Backends (detector, embedder, knowledge fetchers, generator) are
//! trait objects so the same flow runs against offline fixtures or live
//! HTTP services.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{
    assemble_prompt, generate, Answer, AnswerError, AnswerGenerator, PromptBundle, PromptConfig,
};
use crate::dataset::QuestionType;
use crate::index::{EmbeddingIndex, IndexError, RetrievalSet};
use crate::knowledge::{
    aggregate, Aggregation, AggregationConfig, KnowledgeError, KnowledgeFetcher, KnowledgeStore,
};
use crate::region::{
    crop, detect_regions, detection_query, select_primary_region, DetectorBackend, ImageRef,
    RegionError, RegionProposal, DEFAULT_MIN_CONFIDENCE,
};
use crate::resolve::{resolve, Resolution, ResolutionConfig, ResolveError};

/// Default number of nearest neighbours retrieved per query.
pub const DEFAULT_K: usize = 5;

/// Default cap on snippets handed to prompt assembly.
pub const DEFAULT_SNIPPET_BUDGET: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no embedding on record for image {0:?}")]
    MissingEmbedding(String),
    #[error("embedder unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed embedder response: {0}")]
    MalformedResponse(String),
    #[error("io failure: {0}")]
    IoFailure(String),
}

/// Stage-labelled pipeline failure: the variant names the stage that
/// failed so callers can report where an ask run stopped.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("detect stage failed: {0}")]
    Detect(#[from] RegionError),
    #[error("embed stage failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("retrieve stage failed: {0}")]
    Retrieve(#[from] IndexError),
    #[error("resolve stage failed: {0}")]
    Resolve(#[from] ResolveError),
    #[error("knowledge stage failed: {0}")]
    Knowledge(#[from] KnowledgeError),
    #[error("answer stage failed: {0}")]
    Answer(#[from] AnswerError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A source of crop embeddings (fixture table or encoder service).
pub trait EmbedderBackend: Send + Sync {
    fn embed(&self, image: &ImageRef) -> Result<Vec<f32>, EmbedError>;
}

/// The pluggable stages of one ask run.
pub struct AskBackends<'a> {
    pub detector: &'a dyn DetectorBackend,
    pub embedder: &'a dyn EmbedderBackend,
    pub fetchers: &'a [Arc<dyn KnowledgeFetcher>],
    pub generator: &'a dyn AnswerGenerator,
}

/// Tunables for one ask run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskParams {
    /// Neighbours retrieved from the index.
    pub k: usize,
    pub qtype: QuestionType,
    /// Region proposals below this confidence trigger the full-image
    /// fallback.
    pub min_confidence: f64,
    /// Snippets kept after knowledge aggregation.
    pub snippet_budget: usize,
    pub resolution: ResolutionConfig,
    pub aggregation: AggregationConfig,
    pub prompt: PromptConfig,
}

impl Default for AskParams {
    fn default() -> Self {
        AskParams {
            k: DEFAULT_K,
            qtype: QuestionType::Static,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            snippet_budget: DEFAULT_SNIPPET_BUDGET,
            resolution: ResolutionConfig::default(),
            aggregation: AggregationConfig::default(),
            prompt: PromptConfig::default(),
        }
    }
}

/// Output of the detection stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    /// The query text handed to the detector.
    pub query: String,
    /// All validated proposals, ranked.
    pub proposals: Vec<RegionProposal>,
    /// The region the pipeline actually used.
    pub primary: RegionProposal,
}

/// The complete record of one ask run: each stage appears exactly once,
/// in execution order, carrying its full output. Re-running a stage on
/// the trace's recorded inputs reproduces the recorded output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskTrace {
    pub question: String,
    pub image: ImageRef,
    pub detection: DetectionTrace,
    /// The cropped image reference the embedder saw.
    pub crop: ImageRef,
    /// The (unnormalized) query embedding.
    pub embedding: Vec<f32>,
    pub retrieval: RetrievalSet,
    pub resolution: Resolution,
    /// Display name of the resolved entity, when the knowledge store
    /// knows it.
    pub entity_name: Option<String>,
    pub knowledge: Aggregation,
    pub prompt: PromptBundle,
    pub answer: Answer,
}

/// Run the full ask flow. The trace is the result: `trace.answer` is
/// the final answer and every intermediate stage output rides along.
pub fn ask(
    question: &str,
    image: &ImageRef,
    index: &EmbeddingIndex,
    store: &KnowledgeStore,
    backends: &AskBackends<'_>,
    params: &AskParams,
) -> Result<AskTrace, PipelineError> {
    if params.k == 0 {
        return Err(PipelineError::InvalidParameter("k must be ≥ 1".to_string()));
    }
    params
        .resolution
        .validate()
        .map_err(PipelineError::Resolve)?;

    let query = detection_query(question);
    let proposals = detect_regions(image, &query, backends.detector)?;
    let primary = select_primary_region(&proposals, params.min_confidence);
    let cropped = crop(image, &primary.bbox);

    let embedding = backends.embedder.embed(&cropped)?;
    let retrieval = index.knn(&embedding, params.k)?;
    let resolution = resolve(&retrieval, &params.resolution);

    let (entity_name, knowledge) = match resolution.entity() {
        Some(hypothesis) => {
            let name = store
                .lookup_local(&hypothesis.entity_id)
                .ok()
                .map(|record| record.name.clone());
            let agg = aggregate(
                store,
                hypothesis,
                question,
                params.qtype,
                backends.fetchers,
                params.snippet_budget,
                &params.aggregation,
            )?;
            (name, agg)
        }
        None => (
            None,
            Aggregation {
                snippets: Vec::new(),
                sources: Vec::new(),
            },
        ),
    };

    let prompt = assemble_prompt(
        question,
        &resolution,
        entity_name.as_deref(),
        &knowledge.snippets,
        &params.prompt,
    )?;
    let answer = generate(&prompt, backends.generator)?;

    Ok(AskTrace {
        question: question.to_string(),
        image: image.clone(),
        detection: DetectionTrace {
            query,
            proposals,
            primary,
        },
        crop: cropped,
        embedding,
        retrieval,
        resolution,
        entity_name,
        knowledge,
        prompt,
        answer,
    })
}

/// Embeddings keyed by image id. A crop of a known image falls back to
/// the base image's embedding (the id suffix `#crop(…)` is stripped),
/// so fixtures only need one vector per source image.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    by_image: HashMap<String, Vec<f32>>,
}

impl FixtureEmbedder {
    pub fn from_map(by_image: HashMap<String, Vec<f32>>) -> Self {
        FixtureEmbedder { by_image }
    }

    /// Load from JSONL: one `{"image_id": …, "vector": […]}` per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, EmbedError> {
        #[derive(Deserialize)]
        struct Row {
            image_id: String,
            vector: Vec<f32>,
        }
        let file = File::open(path)
            .map_err(|e| EmbedError::IoFailure(format!("{}: {e}", path.display())))?;
        let mut by_image = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EmbedError::IoFailure(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line)
                .map_err(|e| EmbedError::MalformedResponse(format!("line {}: {e}", lineno + 1)))?;
            by_image.insert(row.image_id, row.vector);
        }
        Ok(FixtureEmbedder { by_image })
    }
}

impl EmbedderBackend for FixtureEmbedder {
    fn embed(&self, image: &ImageRef) -> Result<Vec<f32>, EmbedError> {
        if let Some(v) = self.by_image.get(&image.image_id) {
            return Ok(v.clone());
        }
        if let Some(base) = image.image_id.split("#crop(").next() {
            if let Some(v) = self.by_image.get(base) {
                return Ok(v.clone());
            }
        }
        Err(EmbedError::MissingEmbedding(image.image_id.clone()))
    }
}

/// Encoder service contract: POST `{url}` with `{"image_id", "uri"}`,
/// expecting `{"vector": […]}`.
pub struct HttpEmbedder {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpEmbedder {
            url: url.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("client construction cannot fail with static options"),
        }
    }
}

impl EmbedderBackend for HttpEmbedder {
    fn embed(&self, image: &ImageRef) -> Result<Vec<f32>, EmbedError> {
        #[derive(Serialize)]
        struct Request<'a> {
            image_id: &'a str,
            uri: &'a str,
        }
        #[derive(Deserialize)]
        struct Response {
            vector: Vec<f32>,
        }
        let response = self
            .client
            .post(&self.url)
            .json(&Request {
                image_id: &image.image_id,
                uri: &image.uri,
            })
            .send()
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::BackendUnavailable(format!(
                "{} returned {}",
                self.url,
                response.status()
            )));
        }
        let payload: Response = response
            .json()
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        Ok(payload.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::{TemplateGenerator, UNKNOWN_ANSWER};
    use crate::dataset::Category;
    use crate::index::IndexEntry;
    use crate::knowledge::EntityRecord;
    use crate::region::{FixtureDetector, ProposalDraft};

    fn one_hot(dim: usize, at: usize) -> Vec<f32> {
        let mut v = vec![0.0f32; dim];
        v[at] = 1.0;
        v
    }

    /// Three entities, two identical one-hot entries each, plus local
    /// knowledge records.
    fn fixture_world() -> (EmbeddingIndex, KnowledgeStore) {
        let mut index = EmbeddingIndex::new(8).unwrap();
        let names = ["eiffel-tower", "mona-lisa", "kakapo"];
        for (e, entity) in names.iter().enumerate() {
            for copy in 0..2 {
                index
                    .add_entry(IndexEntry {
                        entry_id: (e * 2 + copy) as u64,
                        vector: one_hot(8, e),
                        caption: format!("{entity} reference {copy}"),
                        entity_id: entity.to_string(),
                        image_uri: format!("img://{entity}/{copy}"),
                        source_uri: format!("src://{entity}/{copy}"),
                    })
                    .unwrap();
            }
        }
        let store = KnowledgeStore::new(vec![
            EntityRecord {
                entity_id: "eiffel-tower".into(),
                name: "Eiffel Tower".into(),
                category: Category::Landmark,
                summary: "A wrought-iron lattice tower in Paris.".into(),
                facts: vec![],
            },
            EntityRecord {
                entity_id: "mona-lisa".into(),
                name: "Mona Lisa".into(),
                category: Category::Painting,
                summary: "A portrait by Leonardo da Vinci.".into(),
                facts: vec![],
            },
            EntityRecord {
                entity_id: "kakapo".into(),
                name: "Kakapo".into(),
                category: Category::Bird,
                summary: "A flightless nocturnal parrot from New Zealand.".into(),
                facts: vec![],
            },
        ])
        .unwrap();
        (index, store)
    }

    fn image(id: &str) -> ImageRef {
        ImageRef {
            image_id: id.to_string(),
            uri: format!("img://{id}"),
            width: 640,
            height: 480,
        }
    }

    fn detector_for(id: &str) -> FixtureDetector {
        let mut map = HashMap::new();
        map.insert(
            id.to_string(),
            vec![ProposalDraft {
                x: 0.25,
                y: 0.25,
                w: 0.5,
                h: 0.5,
                label: "tower".to_string(),
                confidence: 0.9,
            }],
        );
        FixtureDetector::from_map(map)
    }

    #[test]
    fn identity_retrieval_answers_with_the_entity_name() {
        let (index, store) = fixture_world();
        let detector = detector_for("query-img");
        // Embedding keyed by the *base* image id: the pipeline embeds the
        // crop, and the fixture strips the crop suffix.
        let embedder =
            FixtureEmbedder::from_map(HashMap::from([("query-img".to_string(), one_hot(8, 0))]));
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let trace = ask(
            "What is this landmark?",
            &image("query-img"),
            &index,
            &store,
            &backends,
            &AskParams::default(),
        )
        .unwrap();

        assert_eq!(
            trace.resolution.entity().map(|h| h.entity_id.as_str()),
            Some("eiffel-tower")
        );
        assert_eq!(trace.entity_name.as_deref(), Some("Eiffel Tower"));
        assert!(
            trace.answer.text.contains("Eiffel Tower"),
            "{}",
            trace.answer.text
        );
        // Identity retrieval: top hit is an exact match.
        assert!((trace.retrieval.hits()[0].score - 1.0).abs() < 1e-6);
        // The crop stage actually ran (and its suffix reached the embedder).
        assert!(trace.crop.image_id.contains("#crop("));
        assert_eq!(trace.crop.width, 320);
        assert_eq!(trace.crop.height, 240);
        // The local summary flowed through knowledge into the answer.
        assert!(
            trace.answer.text.contains("wrought-iron"),
            "{}",
            trace.answer.text
        );
    }

    #[test]
    fn out_of_corpus_embedding_resolves_unknown_and_says_so() {
        let (index, store) = fixture_world();
        let detector = detector_for("mystery");
        // Direction 7 is unused by every indexed entity: all similarities 0.
        let embedder =
            FixtureEmbedder::from_map(HashMap::from([("mystery".to_string(), one_hot(8, 7))]));
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let trace = ask(
            "What is this?",
            &image("mystery"),
            &index,
            &store,
            &backends,
            &AskParams::default(),
        )
        .unwrap();
        assert!(trace.resolution.is_unknown());
        assert_eq!(trace.answer.text, UNKNOWN_ANSWER);
        assert!(trace.knowledge.snippets.is_empty());
        assert!(trace.prompt.entity_name.is_none());
    }

    #[test]
    fn unknown_image_falls_back_to_full_frame() {
        let (index, store) = fixture_world();
        let detector = FixtureDetector::from_map(HashMap::new());
        let embedder = FixtureEmbedder::from_map(HashMap::from([(
            "no-detections".to_string(),
            one_hot(8, 2),
        )]));
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let trace = ask(
            "What bird is this?",
            &image("no-detections"),
            &index,
            &store,
            &backends,
            &AskParams::default(),
        )
        .unwrap();
        assert_eq!(trace.detection.primary.label, "full-image");
        assert_eq!(trace.detection.primary.confidence, 0.0);
        assert_eq!(trace.crop.width, 640);
        assert_eq!(trace.crop.height, 480);
        assert!(trace.answer.text.contains("Kakapo"));
    }

    #[test]
    fn trace_replays_through_the_modules() {
        let (index, store) = fixture_world();
        let detector = detector_for("query-img");
        let embedder =
            FixtureEmbedder::from_map(HashMap::from([("query-img".to_string(), one_hot(8, 1))]));
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let params = AskParams::default();
        let trace = ask(
            "Who painted it?",
            &image("query-img"),
            &index,
            &store,
            &backends,
            &params,
        )
        .unwrap();

        // Replaying the recorded embedding reproduces retrieval; replaying
        // retrieval reproduces resolution; the recorded prompt reproduces
        // the recorded answer.
        let replayed = index.knn(&trace.embedding, params.k).unwrap();
        assert_eq!(replayed, trace.retrieval);
        assert_eq!(
            resolve(&trace.retrieval, &params.resolution),
            trace.resolution
        );
        assert_eq!(
            generate(&trace.prompt, &TemplateGenerator).unwrap(),
            trace.answer
        );

        // The trace survives a JSON round trip intact.
        let json = serde_json::to_string(&trace).unwrap();
        let back: AskTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn zero_k_is_rejected() {
        let (index, store) = fixture_world();
        let detector = detector_for("query-img");
        let embedder = FixtureEmbedder::default();
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let err = ask(
            "q",
            &image("query-img"),
            &index,
            &store,
            &backends,
            &AskParams {
                k: 0,
                ..AskParams::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::InvalidParameter(_)));
    }

    #[test]
    fn missing_embedding_names_the_embed_stage() {
        let (index, store) = fixture_world();
        let detector = detector_for("query-img");
        let embedder = FixtureEmbedder::default();
        let backends = AskBackends {
            detector: &detector,
            embedder: &embedder,
            fetchers: &[],
            generator: &TemplateGenerator,
        };
        let err = ask(
            "q",
            &image("query-img"),
            &index,
            &store,
            &backends,
            &AskParams::default(),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("embed stage failed"), "{err}");
    }

    #[test]
    fn fixture_embedder_round_trips_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");
        std::fs::write(
            &path,
            "{\"image_id\":\"a\",\"vector\":[1.0,0.0]}\n\n{\"image_id\":\"b\",\"vector\":[0.0,1.0]}\n",
        )
        .unwrap();
        let embedder = FixtureEmbedder::from_jsonl(&path).unwrap();
        let img = ImageRef {
            image_id: "a".into(),
            uri: "u".into(),
            width: 1,
            height: 1,
        };
        assert_eq!(embedder.embed(&img).unwrap(), vec![1.0, 0.0]);
        let cropped = ImageRef {
            image_id: "b#crop(0.0000,0.0000,0.5000,0.5000)".into(),
            uri: "u".into(),
            width: 1,
            height: 1,
        };
        assert_eq!(embedder.embed(&cropped).unwrap(), vec![0.0, 1.0]);
    }
}
