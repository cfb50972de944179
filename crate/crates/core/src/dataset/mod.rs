//! Dataset curation: entity manifests, staged filtering, QA-pair schema
//! with anonymity checking, and summary statistics.
//!
//! A manifest row describes one candidate entity (name, category, wiki
//! URL, scraped image records, quality flags). Curation runs three
//! filters in a fixed order — wiki validity, image count, ambiguity —
//! each producing a per-category report. QA pairs are validated, never
//! generated: answers must name their entity, questions must not.

pub mod buckets;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{find_phrase, slug, whitespace_token_count};

pub use buckets::{
    bucket_popularity, fetch_pageviews, sample_entities, Bucket, BucketScheme, FixturePageviews,
    HttpPageviews, PageviewClient, PageviewStats, REQUIRED_PAGEVIEW_DAYS,
};

/// Default minimum scraped images per retained entity.
pub const DEFAULT_MIN_IMAGES: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("CSV failure: {0}")]
    CsvFailure(#[from] csv::Error),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown filter stage: {0:?} (expected wiki-validity, image-count, or ambiguity)")]
    UnknownStage(String),
    #[error("category {0} has too few entities for tertile bucketing (need at least 3)")]
    TooFewEntities(String),
    #[error("no pageview stats for entity {0}")]
    MissingStats(String),
    #[error("QA pair references unknown entity {0}")]
    DanglingReference(String),
    #[error("pageview client unavailable: {0}")]
    ClientUnavailable(String),
    #[error("malformed pageview response: {0}")]
    MalformedResponse(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// The closed set of entity categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Landmark,
    Painting,
    Sculpture,
    Food,
    Fruit,
    Vegetable,
    Mammal,
    Amphibian,
    Insect,
    Fish,
    Bird,
    Reptile,
    Celebrity,
    Instrument,
    Plant,
    Electronics,
    Tool,
    Transportation,
    Sport,
    Book,
    Household,
    Car,
}

impl Category {
    pub const ALL: [Category; 22] = [
        Category::Landmark,
        Category::Painting,
        Category::Sculpture,
        Category::Food,
        Category::Fruit,
        Category::Vegetable,
        Category::Mammal,
        Category::Amphibian,
        Category::Insect,
        Category::Fish,
        Category::Bird,
        Category::Reptile,
        Category::Celebrity,
        Category::Instrument,
        Category::Plant,
        Category::Electronics,
        Category::Tool,
        Category::Transportation,
        Category::Sport,
        Category::Book,
        Category::Household,
        Category::Car,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Category::Landmark => "landmark",
            Category::Painting => "painting",
            Category::Sculpture => "sculpture",
            Category::Food => "food",
            Category::Fruit => "fruit",
            Category::Vegetable => "vegetable",
            Category::Mammal => "mammal",
            Category::Amphibian => "amphibian",
            Category::Insect => "insect",
            Category::Fish => "fish",
            Category::Bird => "bird",
            Category::Reptile => "reptile",
            Category::Celebrity => "celebrity",
            Category::Instrument => "instrument",
            Category::Plant => "plant",
            Category::Electronics => "electronics",
            Category::Tool => "tool",
            Category::Transportation => "transportation",
            Category::Sport => "sport",
            Category::Book => "book",
            Category::Household => "household",
            Category::Car => "car",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_lowercase();
        Category::ALL
            .iter()
            .find(|c| c.label() == needle)
            .copied()
            .ok_or_else(|| DatasetError::SchemaViolation(format!("unknown category {s:?}")))
    }
}

/// The five question types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Static,
    Narrative,
    Dynamic,
    Procedural,
    Subjective,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::Static,
        QuestionType::Narrative,
        QuestionType::Dynamic,
        QuestionType::Procedural,
        QuestionType::Subjective,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            QuestionType::Static => "static",
            QuestionType::Narrative => "narrative",
            QuestionType::Dynamic => "dynamic",
            QuestionType::Procedural => "procedural",
            QuestionType::Subjective => "subjective",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QuestionType {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_lowercase();
        QuestionType::ALL
            .iter()
            .find(|q| q.label() == needle)
            .copied()
            .ok_or_else(|| DatasetError::SchemaViolation(format!("unknown question type {s:?}")))
    }
}

/// One scraped image belonging to an entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_url: String,
    pub source_page_url: String,
    pub renamed_image_name: String,
}

/// One candidate entity in the raw manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityManifestRow {
    pub entity_name: String,
    pub category: Category,
    /// May be empty before the wiki-validity filter runs.
    #[serde(default)]
    pub wiki_url: String,
    /// Set upstream when the wiki URL resolved to a 404.
    #[serde(default)]
    pub wiki_404: bool,
    /// Set upstream when the wiki URL resolved to a disambiguation page.
    #[serde(default)]
    pub ambiguous_flag: bool,
    #[serde(default)]
    pub image_records: Vec<ImageRecord>,
}

impl EntityManifestRow {
    /// Stable identifier derived from the entity name.
    pub fn entity_id(&self) -> String {
        slug(&self.entity_name)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.entity_name.trim().is_empty() {
            return Err(DatasetError::SchemaViolation(
                "entity_name must be non-empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// One question/answer pair tied to an entity and an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub entity_id: String,
    pub question: String,
    pub answer: String,
    pub qtype: QuestionType,
    pub image_id: String,
}

/// The three curation filters, applied in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    WikiValidity,
    ImageCount,
    Ambiguity,
}

impl FilterStage {
    pub const CANONICAL_ORDER: [FilterStage; 3] = [
        FilterStage::WikiValidity,
        FilterStage::ImageCount,
        FilterStage::Ambiguity,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FilterStage::WikiValidity => "wiki-validity",
            FilterStage::ImageCount => "image-count",
            FilterStage::Ambiguity => "ambiguity",
        }
    }
}

impl fmt::Display for FilterStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FilterStage {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle: String = s
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match needle.as_str() {
            "wikivalidity" => Ok(FilterStage::WikiValidity),
            "imagecount" => Ok(FilterStage::ImageCount),
            "ambiguity" => Ok(FilterStage::Ambiguity),
            _ => Err(DatasetError::UnknownStage(s.to_string())),
        }
    }
}

/// Tunables for the filter stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_images: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_images: DEFAULT_MIN_IMAGES,
        }
    }
}

/// Kept/removed tallies for one category within one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub kept: usize,
    pub removed: usize,
}

/// Outcome of running one filter stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub stage: FilterStage,
    pub kept: Vec<EntityManifestRow>,
    pub removed: Vec<EntityManifestRow>,
    pub per_category: BTreeMap<Category, StageCount>,
}

impl FilterReport {
    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    pub fn removed_count(&self) -> usize {
        self.removed.len()
    }
}

fn stage_keeps(row: &EntityManifestRow, stage: FilterStage, params: &FilterParams) -> bool {
    match stage {
        FilterStage::WikiValidity => !row.wiki_url.trim().is_empty() && !row.wiki_404,
        FilterStage::ImageCount => row.image_records.len() >= params.min_images,
        FilterStage::Ambiguity => !row.ambiguous_flag,
    }
}

/// Apply one filter stage to a manifest, partitioning it into kept and
/// removed rows with per-category tallies. Row order is preserved.
pub fn filter_stage(
    manifest: &[EntityManifestRow],
    stage: FilterStage,
    params: &FilterParams,
) -> FilterReport {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut per_category: BTreeMap<Category, StageCount> = BTreeMap::new();
    for row in manifest {
        let slot = per_category.entry(row.category).or_default();
        if stage_keeps(row, stage, params) {
            slot.kept += 1;
            kept.push(row.clone());
        } else {
            slot.removed += 1;
            removed.push(row.clone());
        }
    }
    FilterReport {
        stage,
        kept,
        removed,
        per_category,
    }
}

/// Full pipeline run: the three stages in canonical order, each consuming
/// the previous stage's kept set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<FilterReport>,
    pub final_kept: Vec<EntityManifestRow>,
}

/// Run all three filter stages in the canonical order
/// wiki-validity → image-count → ambiguity.
///
/// The order is load-bearing: image counts are only meaningful for
/// entities whose wiki page exists, so reordering would change the
/// per-stage attribution of removals even though the final set is the
/// intersection either way.
pub fn run_pipeline(manifest: &[EntityManifestRow], params: &FilterParams) -> PipelineReport {
    let mut current: Vec<EntityManifestRow> = manifest.to_vec();
    let mut stages = Vec::with_capacity(FilterStage::CANONICAL_ORDER.len());
    for stage in FilterStage::CANONICAL_ORDER {
        let report = filter_stage(&current, stage, params);
        current = report.kept.clone();
        stages.push(report);
    }
    PipelineReport {
        stages,
        final_kept: current,
    }
}

/// Result of an anonymity check over a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AnonymityCheck {
    Pass,
    /// The question leaks the entity; `span` is the normalized leaked phrase.
    Fail {
        span: String,
    },
}

impl AnonymityCheck {
    pub fn is_pass(&self) -> bool {
        matches!(self, AnonymityCheck::Pass)
    }
}

/// A question must not name its entity. Fails when the entity name or any
/// alias appears in the question as a contiguous token subsequence
/// (case-insensitive, punctuation-stripped); the returned span is the
/// normalized form of the first leaking phrase (name checked before
/// aliases, aliases in list order).
pub fn check_anonymity(question: &str, entity_name: &str, aliases: &[String]) -> AnonymityCheck {
    if let Some(span) = find_phrase(question, entity_name) {
        return AnonymityCheck::Fail { span };
    }
    for alias in aliases {
        if let Some(span) = find_phrase(question, alias) {
            return AnonymityCheck::Fail { span };
        }
    }
    AnonymityCheck::Pass
}

/// A single QA-pair defect found by [`lint_qa`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum LintProblem {
    EmptyQuestion,
    EmptyAnswer,
    /// The answer does not contain the entity name — the dataset's
    /// defining property.
    AnswerMissingEntityName {
        entity_name: String,
    },
    /// The question leaks the entity name.
    AnonymityBreach {
        span: String,
    },
    /// The pair references an entity absent from the manifest.
    DanglingReference {
        entity_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    /// Zero-based position of the offending pair in the input list.
    pub pair_index: usize,
    pub entity_id: String,
    pub problem: LintProblem,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LintReport {
    pub findings: Vec<LintFinding>,
    pub pairs_checked: usize,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Validate QA pairs against the manifest. Collects every defect instead
/// of stopping at the first: empty fields, answers that fail to name
/// their entity, questions that leak it, and dangling entity references.
pub fn lint_qa(manifest: &[EntityManifestRow], pairs: &[QAPair]) -> LintReport {
    let names: BTreeMap<String, &str> = manifest
        .iter()
        .map(|row| (row.entity_id(), row.entity_name.as_str()))
        .collect();
    let mut findings = Vec::new();
    for (pair_index, pair) in pairs.iter().enumerate() {
        let mut push = |problem: LintProblem| {
            findings.push(LintFinding {
                pair_index,
                entity_id: pair.entity_id.clone(),
                problem,
            });
        };
        if pair.question.trim().is_empty() {
            push(LintProblem::EmptyQuestion);
        }
        if pair.answer.trim().is_empty() {
            push(LintProblem::EmptyAnswer);
        }
        match names.get(&pair.entity_id) {
            None => push(LintProblem::DanglingReference {
                entity_id: pair.entity_id.clone(),
            }),
            Some(name) => {
                if find_phrase(&pair.answer, name).is_none() {
                    push(LintProblem::AnswerMissingEntityName {
                        entity_name: (*name).to_string(),
                    });
                }
                if let AnonymityCheck::Fail { span } = check_anonymity(&pair.question, name, &[]) {
                    push(LintProblem::AnonymityBreach { span });
                }
            }
        }
    }
    LintReport {
        findings,
        pairs_checked: pairs.len(),
    }
}

/// Per-category slice of the dataset summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub entities: usize,
    pub images: usize,
    pub qa_pairs: usize,
}

/// Whole-dataset summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_categories: usize,
    pub n_entities: usize,
    pub n_qa: usize,
    pub n_images: usize,
    /// Mean whitespace-token answer length; 0.0 for an empty QA set.
    pub avg_answer_tokens: f64,
    pub per_category: BTreeMap<Category, CategoryStats>,
}

/// Summarize a manifest plus its QA pairs. Every pair must reference a
/// manifest entity; the first dangling reference aborts with an error
/// because downstream counts would silently misattribute otherwise.
pub fn dataset_stats(
    manifest: &[EntityManifestRow],
    pairs: &[QAPair],
) -> Result<StatsReport, DatasetError> {
    let mut by_id: BTreeMap<String, Category> = BTreeMap::new();
    let mut per_category: BTreeMap<Category, CategoryStats> = BTreeMap::new();
    let mut n_images = 0usize;
    for row in manifest {
        by_id.insert(row.entity_id(), row.category);
        let slot = per_category.entry(row.category).or_default();
        slot.entities += 1;
        slot.images += row.image_records.len();
        n_images += row.image_records.len();
    }
    let mut token_total = 0usize;
    for pair in pairs {
        let category = by_id
            .get(&pair.entity_id)
            .copied()
            .ok_or_else(|| DatasetError::DanglingReference(pair.entity_id.clone()))?;
        per_category.entry(category).or_default().qa_pairs += 1;
        token_total += whitespace_token_count(&pair.answer);
    }
    let avg_answer_tokens = if pairs.is_empty() {
        0.0
    } else {
        token_total as f64 / pairs.len() as f64
    };
    Ok(StatsReport {
        n_categories: per_category.len(),
        n_entities: manifest.len(),
        n_qa: pairs.len(),
        n_images,
        avg_answer_tokens,
        per_category,
    })
}

/// Pinned CSV column set: one row per image record, rows grouped by
/// entity. An entity with no images is written as a single row with
/// empty image columns (and read back the same way).
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    entity_name: String,
    category: Category,
    wiki_url: String,
    image_url: String,
    source_page_url: String,
    renamed_image_name: String,
}

/// Write a manifest as CSV. The quality flags are not representable in
/// the pinned column set; use the JSONL form when they matter.
pub fn write_manifest_csv<P: AsRef<Path>>(
    path: P,
    manifest: &[EntityManifestRow],
) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in manifest {
        row.validate()?;
        if row.image_records.is_empty() {
            writer.serialize(CsvRow {
                entity_name: row.entity_name.clone(),
                category: row.category,
                wiki_url: row.wiki_url.clone(),
                image_url: String::new(),
                source_page_url: String::new(),
                renamed_image_name: String::new(),
            })?;
        }
        for image in &row.image_records {
            writer.serialize(CsvRow {
                entity_name: row.entity_name.clone(),
                category: row.category,
                wiki_url: row.wiki_url.clone(),
                image_url: image.image_url.clone(),
                source_page_url: image.source_page_url.clone(),
                renamed_image_name: image.renamed_image_name.clone(),
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Load a manifest from CSV, grouping rows by entity name in first-seen
/// order. Rows for one entity must agree on category and wiki URL.
pub fn load_manifest_csv<P: AsRef<Path>>(path: P) -> Result<Vec<EntityManifestRow>, DatasetError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, EntityManifestRow> = BTreeMap::new();
    for (line, record) in reader.deserialize::<CsvRow>().enumerate() {
        let record = record?;
        if record.entity_name.trim().is_empty() {
            return Err(DatasetError::SchemaViolation(format!(
                "CSV data row {}: entity_name must be non-empty",
                line + 1
            )));
        }
        let entry = grouped
            .entry(record.entity_name.clone())
            .or_insert_with(|| {
                order.push(record.entity_name.clone());
                EntityManifestRow {
                    entity_name: record.entity_name.clone(),
                    category: record.category,
                    wiki_url: record.wiki_url.clone(),
                    wiki_404: false,
                    ambiguous_flag: false,
                    image_records: Vec::new(),
                }
            });
        if entry.category != record.category {
            return Err(DatasetError::SchemaViolation(format!(
                "CSV data row {}: entity {:?} listed with conflicting categories {} and {}",
                line + 1,
                record.entity_name,
                entry.category,
                record.category
            )));
        }
        if entry.wiki_url != record.wiki_url {
            return Err(DatasetError::SchemaViolation(format!(
                "CSV data row {}: entity {:?} listed with conflicting wiki URLs",
                line + 1,
                record.entity_name
            )));
        }
        let has_image = !record.image_url.is_empty()
            || !record.source_page_url.is_empty()
            || !record.renamed_image_name.is_empty();
        if has_image {
            entry.image_records.push(ImageRecord {
                image_url: record.image_url,
                source_page_url: record.source_page_url,
                renamed_image_name: record.renamed_image_name,
            });
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            grouped
                .remove(&name)
                .expect("grouped entry exists for ordered name")
        })
        .collect())
}

/// Write a manifest as JSONL (one row object per line; lossless,
/// including the quality flags).
pub fn write_manifest_jsonl<P: AsRef<Path>>(
    path: P,
    manifest: &[EntityManifestRow],
) -> Result<(), DatasetError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for row in manifest {
        row.validate()?;
        let line =
            serde_json::to_string(row).map_err(|e| DatasetError::SchemaViolation(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

/// Load a manifest from JSONL.
pub fn load_manifest_jsonl<P: AsRef<Path>>(
    path: P,
) -> Result<Vec<EntityManifestRow>, DatasetError> {
    let file = BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut rows = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EntityManifestRow = serde_json::from_str(&line).map_err(|e| {
            DatasetError::SchemaViolation(format!("manifest line {}: {e}", idx + 1))
        })?;
        row.validate().map_err(|e| {
            DatasetError::SchemaViolation(format!("manifest line {}: {e}", idx + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Write QA pairs as JSONL.
pub fn write_qa_jsonl<P: AsRef<Path>>(path: P, pairs: &[QAPair]) -> Result<(), DatasetError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for pair in pairs {
        let line = serde_json::to_string(pair)
            .map_err(|e| DatasetError::SchemaViolation(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

/// Load QA pairs from JSONL.
pub fn load_qa_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<QAPair>, DatasetError> {
    let file = BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut pairs = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair = serde_json::from_str(&line)
            .map_err(|e| DatasetError::SchemaViolation(format!("QA line {}: {e}", idx + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Collect the distinct entity ids of a manifest.
pub fn manifest_entity_ids(manifest: &[EntityManifestRow]) -> BTreeSet<String> {
    manifest.iter().map(|r| r.entity_id()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(name: &str, category: Category, wiki: &str, n_images: usize) -> EntityManifestRow {
        EntityManifestRow {
            entity_name: name.to_string(),
            category,
            wiki_url: wiki.to_string(),
            wiki_404: false,
            ambiguous_flag: false,
            image_records: (0..n_images)
                .map(|i| ImageRecord {
                    image_url: format!("https://img.example/{name}/{i}.jpg"),
                    source_page_url: format!("https://pages.example/{name}"),
                    renamed_image_name: format!("{}_{i}.jpg", slug(name)),
                })
                .collect(),
        }
    }

    #[test]
    fn category_set_is_closed_and_round_trips() {
        assert_eq!(Category::ALL.len(), 22);
        for c in Category::ALL {
            assert_eq!(c.label().parse::<Category>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.label()));
            assert_eq!(serde_json::from_str::<Category>(&json).unwrap(), c);
        }
        assert!("spaceship".parse::<Category>().is_err());
    }

    #[test]
    fn question_type_set_is_closed() {
        assert_eq!(QuestionType::ALL.len(), 5);
        for q in QuestionType::ALL {
            assert_eq!(q.label().parse::<QuestionType>().unwrap(), q);
        }
        assert!("rhetorical".parse::<QuestionType>().is_err());
    }

    #[test]
    fn wiki_validity_drops_planted_rows() {
        // 5 rows, 2 lacking a usable wiki URL.
        let manifest = vec![
            row(
                "Eiffel Tower",
                Category::Landmark,
                "https://w.example/eiffel",
                10,
            ),
            row("Mona Lisa", Category::Painting, "", 10),
            row("Blue Jay", Category::Bird, "https://w.example/jay", 10),
            {
                let mut r = row("Lost Page", Category::Book, "https://w.example/gone", 10);
                r.wiki_404 = true;
                r
            },
            row(
                "Sourdough",
                Category::Food,
                "https://w.example/sourdough",
                10,
            ),
        ];
        let report = filter_stage(
            &manifest,
            FilterStage::WikiValidity,
            &FilterParams::default(),
        );
        assert_eq!(report.kept_count(), 3);
        assert_eq!(report.removed_count(), 2);
        assert_eq!(report.per_category[&Category::Painting].removed, 1);
        assert_eq!(report.per_category[&Category::Book].removed, 1);
        assert_eq!(report.per_category[&Category::Landmark].kept, 1);
        let removed: Vec<&str> = report
            .removed
            .iter()
            .map(|r| r.entity_name.as_str())
            .collect();
        assert_eq!(removed, vec!["Mona Lisa", "Lost Page"]);
    }

    #[test]
    fn image_count_boundary_keeps_exactly_min() {
        let manifest = vec![
            row("A", Category::Landmark, "https://w.example/a", 10),
            row("B", Category::Landmark, "https://w.example/b", 10),
        ];
        let report = filter_stage(&manifest, FilterStage::ImageCount, &FilterParams::default());
        assert_eq!(report.removed_count(), 0);

        let manifest = vec![row("C", Category::Landmark, "https://w.example/c", 9)];
        let report = filter_stage(&manifest, FilterStage::ImageCount, &FilterParams::default());
        assert_eq!(report.kept_count(), 0);
        assert_eq!(report.removed_count(), 1);
    }

    #[test]
    fn ambiguity_drops_flagged_rows() {
        let mut ambiguous = row("Mercury", Category::Celebrity, "https://w.example/m", 10);
        ambiguous.ambiguous_flag = true;
        let manifest = vec![
            row("Freddie", Category::Celebrity, "https://w.example/f", 10),
            ambiguous,
        ];
        let report = filter_stage(&manifest, FilterStage::Ambiguity, &FilterParams::default());
        assert_eq!(report.kept_count(), 1);
        assert_eq!(report.removed[0].entity_name, "Mercury");
    }

    #[test]
    fn pipeline_attributes_each_planted_defect_to_its_stage() {
        let mut manifest = vec![
            row("Keep One", Category::Landmark, "https://w.example/1", 12),
            row("Keep Two", Category::Bird, "https://w.example/2", 10),
            row("No Wiki", Category::Food, "", 15),
            row("Few Images", Category::Food, "https://w.example/4", 3),
            row("Keep Three", Category::Painting, "https://w.example/5", 11),
        ];
        let mut dead = row("Dead Wiki", Category::Car, "https://w.example/6", 10);
        dead.wiki_404 = true;
        manifest.push(dead);
        let mut vague = row("Vague", Category::Bird, "https://w.example/7", 10);
        vague.ambiguous_flag = true;
        manifest.push(vague);

        let report = run_pipeline(&manifest, &FilterParams::default());
        assert_eq!(report.stages.len(), 3);
        assert_eq!(report.stages[0].stage, FilterStage::WikiValidity);
        assert_eq!(report.stages[0].removed_count(), 2); // No Wiki, Dead Wiki
        assert_eq!(report.stages[1].stage, FilterStage::ImageCount);
        assert_eq!(report.stages[1].removed_count(), 1); // Few Images
        assert_eq!(report.stages[2].stage, FilterStage::Ambiguity);
        assert_eq!(report.stages[2].removed_count(), 1); // Vague
        let kept: Vec<&str> = report
            .final_kept
            .iter()
            .map(|r| r.entity_name.as_str())
            .collect();
        assert_eq!(kept, vec!["Keep One", "Keep Two", "Keep Three"]);
    }

    #[test]
    fn filtering_is_idempotent() {
        let manifest = vec![
            row("A", Category::Landmark, "https://w.example/a", 10),
            row("B", Category::Landmark, "", 10),
            row("C", Category::Bird, "https://w.example/c", 2),
        ];
        let params = FilterParams::default();
        for stage in FilterStage::CANONICAL_ORDER {
            let once = filter_stage(&manifest, stage, &params);
            let twice = filter_stage(&once.kept, stage, &params);
            assert_eq!(twice.kept, once.kept);
            assert_eq!(twice.removed_count(), 0);
        }
        let once = run_pipeline(&manifest, &params);
        let twice = run_pipeline(&once.final_kept, &params);
        assert_eq!(twice.final_kept, once.final_kept);
    }

    #[test]
    fn stage_parser_accepts_cli_spellings() {
        assert_eq!(
            "wiki-validity".parse::<FilterStage>().unwrap(),
            FilterStage::WikiValidity
        );
        assert_eq!(
            "wiki_validity".parse::<FilterStage>().unwrap(),
            FilterStage::WikiValidity
        );
        assert_eq!(
            "WikiValidity".parse::<FilterStage>().unwrap(),
            FilterStage::WikiValidity
        );
        assert_eq!(
            "image-count".parse::<FilterStage>().unwrap(),
            FilterStage::ImageCount
        );
        assert_eq!(
            "ambiguity".parse::<FilterStage>().unwrap(),
            FilterStage::Ambiguity
        );
        assert!(matches!(
            "frobnicate".parse::<FilterStage>(),
            Err(DatasetError::UnknownStage(s)) if s == "frobnicate"
        ));
    }

    #[test]
    fn anonymity_passes_generic_question() {
        let check = check_anonymity(
            "Where is the attraction located?",
            "Abel Tasman National Park",
            &[],
        );
        assert!(check.is_pass());
    }

    #[test]
    fn anonymity_fails_on_direct_inclusion_with_normalized_span() {
        let check = check_anonymity(
            "Where is Abel Tasman National Park?",
            "Abel Tasman National Park",
            &[],
        );
        assert_eq!(
            check,
            AnonymityCheck::Fail {
                span: "abel tasman national park".to_string()
            }
        );
    }

    #[test]
    fn anonymity_fails_on_alias_case_insensitively() {
        let check = check_anonymity(
            "When did the Acropolis museum open?",
            "Acropolis Museum",
            &["the Acropolis Museum".to_string()],
        );
        // The name itself already matches inside the alias's span.
        assert!(matches!(check, AnonymityCheck::Fail { .. }));

        // Alias-only leak: name absent, alias present.
        let check = check_anonymity(
            "How tall is Big Ben really?",
            "Elizabeth Tower",
            &["Big Ben".to_string()],
        );
        assert_eq!(
            check,
            AnonymityCheck::Fail {
                span: "big ben".to_string()
            }
        );
    }

    #[test]
    fn lint_flags_each_defect_kind() {
        let manifest = vec![row(
            "Eiffel Tower",
            Category::Landmark,
            "https://w.example/e",
            10,
        )];
        let pairs = vec![
            QAPair {
                entity_id: "eiffel-tower".to_string(),
                question: "How tall is this landmark?".to_string(),
                answer: "The Eiffel Tower is 330 metres tall.".to_string(),
                qtype: QuestionType::Static,
                image_id: "img-1".to_string(),
            },
            QAPair {
                entity_id: "eiffel-tower".to_string(),
                question: "".to_string(),
                answer: "The Eiffel Tower opened in 1889.".to_string(),
                qtype: QuestionType::Static,
                image_id: "img-2".to_string(),
            },
            QAPair {
                entity_id: "eiffel-tower".to_string(),
                question: "Who designed it?".to_string(),
                answer: "Gustave Eiffel's company designed the tower.".to_string(),
                qtype: QuestionType::Narrative,
                image_id: "img-3".to_string(),
            },
            QAPair {
                entity_id: "eiffel-tower".to_string(),
                question: "How tall is the Eiffel Tower?".to_string(),
                answer: "The Eiffel Tower is 330 metres tall.".to_string(),
                qtype: QuestionType::Static,
                image_id: "img-4".to_string(),
            },
            QAPair {
                entity_id: "arc-de-triomphe".to_string(),
                question: "Where is this monument?".to_string(),
                answer: "The Arc de Triomphe is in Paris.".to_string(),
                qtype: QuestionType::Static,
                image_id: "img-5".to_string(),
            },
        ];
        let report = lint_qa(&manifest, &pairs);
        assert_eq!(report.pairs_checked, 5);
        assert_eq!(report.findings.len(), 4);
        assert_eq!(report.findings[0].pair_index, 1);
        assert_eq!(report.findings[0].problem, LintProblem::EmptyQuestion);
        assert_eq!(report.findings[1].pair_index, 2);
        assert!(matches!(
            report.findings[1].problem,
            LintProblem::AnswerMissingEntityName { .. }
        ));
        assert_eq!(report.findings[2].pair_index, 3);
        assert_eq!(
            report.findings[2].problem,
            LintProblem::AnonymityBreach {
                span: "eiffel tower".to_string()
            }
        );
        assert_eq!(report.findings[3].pair_index, 4);
        assert!(matches!(
            report.findings[3].problem,
            LintProblem::DanglingReference { .. }
        ));
        assert!(!report.is_clean());
        assert!(lint_qa(&manifest, &pairs[..1]).is_clean());
    }

    #[test]
    fn stats_hand_average_and_dangling() {
        let manifest = vec![
            row("Eiffel Tower", Category::Landmark, "https://w.example/e", 2),
            row("Mona Lisa", Category::Painting, "https://w.example/m", 3),
        ];
        let pairs = vec![
            QAPair {
                entity_id: "eiffel-tower".to_string(),
                question: "q".to_string(),
                answer: "one two three four".to_string(),
                qtype: QuestionType::Static,
                image_id: "i1".to_string(),
            },
            QAPair {
                entity_id: "mona-lisa".to_string(),
                question: "q".to_string(),
                answer: "one two three four five six".to_string(),
                qtype: QuestionType::Static,
                image_id: "i2".to_string(),
            },
        ];
        let stats = dataset_stats(&manifest, &pairs).unwrap();
        assert_eq!(stats.n_categories, 2);
        assert_eq!(stats.n_entities, 2);
        assert_eq!(stats.n_qa, 2);
        assert_eq!(stats.n_images, 5);
        assert_eq!(stats.avg_answer_tokens, 5.0);
        assert_eq!(stats.per_category[&Category::Landmark].qa_pairs, 1);
        assert_eq!(stats.per_category[&Category::Painting].images, 3);

        let empty = dataset_stats(&[], &[]).unwrap();
        assert_eq!(empty.n_categories, 0);
        assert_eq!(empty.avg_answer_tokens, 0.0);

        let mut dangling = pairs;
        dangling[1].entity_id = "nobody".to_string();
        assert!(matches!(
            dataset_stats(&manifest, &dangling),
            Err(DatasetError::DanglingReference(id)) if id == "nobody"
        ));
    }

    #[test]
    fn csv_round_trip_groups_rows_per_entity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let manifest = vec![
            row("Eiffel Tower", Category::Landmark, "https://w.example/e", 2),
            row("Mona Lisa", Category::Painting, "https://w.example/m", 1),
            row("Imageless", Category::Book, "https://w.example/b", 0),
        ];
        write_manifest_csv(&path, &manifest).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "entity_name,category,wiki_url,image_url,source_page_url,renamed_image_name"
        );
        assert_eq!(text.lines().count(), 5); // header + 2 + 1 + 1 empty-image row

        let loaded = load_manifest_csv(&path).unwrap();
        // Flags are not representable in CSV, everything else round-trips.
        assert_eq!(loaded, manifest);
    }

    #[test]
    fn csv_load_rejects_conflicting_entity_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "entity_name,category,wiki_url,image_url,source_page_url,renamed_image_name\n\
             Eiffel Tower,landmark,https://w.example/e,u1,p1,n1\n\
             Eiffel Tower,painting,https://w.example/e,u2,p2,n2\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest_csv(&path),
            Err(DatasetError::SchemaViolation(msg)) if msg.contains("conflicting categories")
        ));

        std::fs::write(
            &path,
            "entity_name,category,wiki_url,image_url,source_page_url,renamed_image_name\n\
             Eiffel Tower,landmark,https://w.example/e,u1,p1,n1\n\
             Eiffel Tower,landmark,https://w.example/other,u2,p2,n2\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest_csv(&path),
            Err(DatasetError::SchemaViolation(msg)) if msg.contains("conflicting wiki URLs")
        ));
    }

    #[test]
    fn csv_load_rejects_unknown_category() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad-cat.csv");
        std::fs::write(
            &path,
            "entity_name,category,wiki_url,image_url,source_page_url,renamed_image_name\n\
             Rocket,spaceship,https://w.example/r,u,p,n\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest_csv(&path),
            Err(DatasetError::CsvFailure(_))
        ));
    }

    #[test]
    fn jsonl_round_trip_preserves_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut manifest = vec![
            row("Eiffel Tower", Category::Landmark, "https://w.example/e", 1),
            row("Mercury", Category::Celebrity, "https://w.example/m", 1),
        ];
        manifest[1].ambiguous_flag = true;
        manifest[1].wiki_404 = true;
        write_manifest_jsonl(&path, &manifest).unwrap();
        let loaded = load_manifest_jsonl(&path).unwrap();
        assert_eq!(loaded, manifest);
        assert!(loaded[1].ambiguous_flag);
        assert!(loaded[1].wiki_404);
    }

    #[test]
    fn jsonl_flags_default_to_false_when_absent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("minimal.jsonl");
        std::fs::write(
            &path,
            "{\"entity_name\":\"Eiffel Tower\",\"category\":\"landmark\"}\n",
        )
        .unwrap();
        let loaded = load_manifest_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(!loaded[0].wiki_404);
        assert!(!loaded[0].ambiguous_flag);
        assert!(loaded[0].image_records.is_empty());
        assert_eq!(loaded[0].entity_id(), "eiffel-tower");
    }

    #[test]
    fn qa_jsonl_round_trip_and_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qa.jsonl");
        let pairs = vec![QAPair {
            entity_id: "eiffel-tower".to_string(),
            question: "How tall is this landmark?".to_string(),
            answer: "The Eiffel Tower is 330 metres tall.".to_string(),
            qtype: QuestionType::Static,
            image_id: "img-1".to_string(),
        }];
        write_qa_jsonl(&path, &pairs).unwrap();
        assert_eq!(load_qa_jsonl(&path).unwrap(), pairs);

        std::fs::write(&path, "{\"entity_id\":\"x\"}\n").unwrap();
        assert!(matches!(
            load_qa_jsonl(&path),
            Err(DatasetError::SchemaViolation(msg)) if msg.contains("QA line 1")
        ));
    }

    proptest! {
        /// Each stage partitions its input: kept ⊆ input, kept ∪ removed
        /// = input (order preserved), and re-filtering the kept set
        /// removes nothing.
        #[test]
        fn stages_partition_and_are_idempotent(
            spec in proptest::collection::vec(
                (0usize..4, any::<bool>(), any::<bool>(), any::<bool>(), 0usize..13),
                0..12,
            ),
            min_images in 0usize..12,
        ) {
            let manifest: Vec<EntityManifestRow> = spec
                .iter()
                .enumerate()
                .map(|(i, &(cat, has_wiki, dead, ambiguous, n_images))| {
                    let mut r = row(
                        &format!("Entity {i}"),
                        [Category::Landmark, Category::Bird, Category::Food, Category::Car][cat],
                        if has_wiki { "https://w.example/x" } else { "" },
                        n_images,
                    );
                    r.wiki_404 = dead;
                    r.ambiguous_flag = ambiguous;
                    r
                })
                .collect();
            let params = FilterParams { min_images };
            for stage in FilterStage::CANONICAL_ORDER {
                let report = filter_stage(&manifest, stage, &params);
                prop_assert_eq!(report.kept_count() + report.removed_count(), manifest.len());
                // Interleave check: kept+removed, re-merged by identity, is the input.
                let mut kept_iter = report.kept.iter().peekable();
                let mut removed_iter = report.removed.iter().peekable();
                for original in &manifest {
                    if kept_iter.peek() == Some(&original) {
                        kept_iter.next();
                    } else {
                        prop_assert_eq!(removed_iter.next(), Some(original));
                    }
                }
                let again = filter_stage(&report.kept, stage, &params);
                prop_assert_eq!(again.removed_count(), 0);
                prop_assert_eq!(&again.kept, &report.kept);
                // Tallies agree with the row partition.
                let kept_sum: usize = report.per_category.values().map(|c| c.kept).sum();
                prop_assert_eq!(kept_sum, report.kept_count());
            }
        }
    }
}
