//! entiq — an entity-centric, retrieval-augmented visual question answering
//! engine and its evaluation toolkit.
//!
//! The crate is organized around a single pipeline: a detector proposes the
//! image region most relevant to the question, the cropped region is embedded
//! and matched against an embedding index of captioned reference images,
//! similarity-weighted voting resolves the matched captions to one entity,
//! a knowledge store aggregates scored snippets about that entity, and a
//! generator turns question + entity + snippets into an answer. Every stage
//! is deterministic given its inputs and records its output in a trace.
//!
//! Alongside the engine live the offline pieces: a cross-attention modality
//! adapter trained at desk scale with hand-written gradients, a dataset
//! curation pipeline (filtering, anonymity linting, popularity bucketing),
//! and an evaluation harness (ROUGE-L, BLEU, simplified METEOR, a
//! deterministic correctness judge, rank correlation, and rater agreement).
//!
//! Modules:
//! - [`text`]: shared tokenization, stopwords, phrase containment, slugs.
//! - [`index`]: exact cosine k-NN over normalized embeddings + persistence.
//! - [`region`]: region proposals, primary-region selection, crop arithmetic.
//! - [`resolve`]: similarity-weighted entity voting with a margin rule.
//! - [`knowledge`]: entity records, snippet fetchers, scored aggregation.
//! - [`adapter`]: cross-attention resampler, teacher-forced NLL, training.
//! - [`answer`]: prompt assembly and answer generators.
//! - [`eval`]: metrics, judge, rank correlation, agreement, reports.
//! - [`dataset`]: manifests, filtering stages, QA linting, popularity buckets.
//! - [`pipeline`]: the end-to-end ask flow with a full per-stage trace.

pub mod adapter;
pub mod answer;
pub mod dataset;
pub mod eval;
pub mod index;
pub mod knowledge;
pub mod pipeline;
pub mod region;
pub mod resolve;
pub mod text;
