//! Popularity bucketing: fetch 60-day pageview series per entity, then
//! split every category into head/torso/tail tertiles by mean views.
//!
//! Tertiles are deterministic and scale-free: within a category, entities
//! sort by mean views descending (ties broken by name ascending) and the
//! sorted list splits into three near-equal groups, any remainder going
//! to the more popular buckets first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Category, DatasetError, EntityManifestRow};

/// A pageview series must cover exactly this many days.
pub const REQUIRED_PAGEVIEW_DAYS: usize = 60;

/// Popularity bucket of an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Torso,
    Tail,
    /// No pageview stats were available for the entity.
    Unassigned,
}

impl Bucket {
    pub fn label(&self) -> &'static str {
        match self {
            Bucket::Head => "head",
            Bucket::Torso => "torso",
            Bucket::Tail => "tail",
            Bucket::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Bucket {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "head" => Ok(Bucket::Head),
            "torso" => Ok(Bucket::Torso),
            "tail" => Ok(Bucket::Tail),
            "unassigned" => Ok(Bucket::Unassigned),
            other => Err(DatasetError::SchemaViolation(format!(
                "unknown bucket {other:?}"
            ))),
        }
    }
}

/// A 60-day pageview series with its locally computed mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageviewStats {
    pub entity_id: String,
    pub daily_views: Vec<u64>,
    pub mean_views: f64,
}

impl PageviewStats {
    /// Build stats from a raw series, enforcing the 60-day arity and
    /// computing the mean locally (never trusting an upstream mean).
    pub fn new(entity_id: impl Into<String>, daily_views: Vec<u64>) -> Result<Self, DatasetError> {
        if daily_views.len() != REQUIRED_PAGEVIEW_DAYS {
            return Err(DatasetError::MalformedResponse(format!(
                "expected {REQUIRED_PAGEVIEW_DAYS} daily values, got {}",
                daily_views.len()
            )));
        }
        let sum: u64 = daily_views.iter().sum();
        let mean_views = sum as f64 / REQUIRED_PAGEVIEW_DAYS as f64;
        Ok(PageviewStats {
            entity_id: entity_id.into(),
            daily_views,
            mean_views,
        })
    }
}

/// Source of raw daily pageview series.
pub trait PageviewClient: Send + Sync {
    fn daily_views(&self, entity_id: &str) -> Result<Vec<u64>, DatasetError>;
}

/// In-memory client for tests and offline runs.
#[derive(Debug, Default, Clone)]
pub struct FixturePageviews {
    series: BTreeMap<String, Vec<u64>>,
}

impl FixturePageviews {
    pub fn new(series: BTreeMap<String, Vec<u64>>) -> Self {
        FixturePageviews { series }
    }

    pub fn insert(&mut self, entity_id: impl Into<String>, daily: Vec<u64>) {
        self.series.insert(entity_id.into(), daily);
    }

    /// Load from JSONL rows of `{"entity_id": …, "daily": [u64…]}`.
    pub fn from_jsonl<P: AsRef<std::path::Path>>(path: P) -> Result<Self, DatasetError> {
        #[derive(Deserialize)]
        struct Row {
            entity_id: String,
            daily: Vec<u64>,
        }
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut series = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line).map_err(|e| {
                DatasetError::SchemaViolation(format!("pageview fixture line {}: {e}", idx + 1))
            })?;
            series.insert(row.entity_id, row.daily);
        }
        Ok(FixturePageviews { series })
    }
}

impl PageviewClient for FixturePageviews {
    fn daily_views(&self, entity_id: &str) -> Result<Vec<u64>, DatasetError> {
        self.series
            .get(entity_id)
            .cloned()
            .ok_or_else(|| DatasetError::ClientUnavailable(format!("no fixture for {entity_id}")))
    }
}

/// HTTP client: GET `{base}/pageviews/{entity_id}` returning
/// `{"daily": [integers]}`.
pub struct HttpPageviews {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpPageviews {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpPageviews {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl PageviewClient for HttpPageviews {
    fn daily_views(&self, entity_id: &str) -> Result<Vec<u64>, DatasetError> {
        #[derive(Deserialize)]
        struct Payload {
            daily: Vec<u64>,
        }
        let url = format!("{}/pageviews/{entity_id}", self.base_url);
        let response = self
            .client
            .get(&url)
            .send()
            .map_err(|e| DatasetError::ClientUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(DatasetError::ClientUnavailable(format!(
                "{url} returned {}",
                response.status()
            )));
        }
        let payload: Payload = response
            .json()
            .map_err(|e| DatasetError::MalformedResponse(e.to_string()))?;
        Ok(payload.daily)
    }
}

/// Fetch and validate one entity's pageview series.
pub fn fetch_pageviews(
    entity_id: &str,
    client: &dyn PageviewClient,
) -> Result<PageviewStats, DatasetError> {
    let daily = client.daily_views(entity_id)?;
    PageviewStats::new(entity_id, daily)
}

/// Bucketing scheme. Only per-category tertiles are implemented; the enum
/// keeps the scheme an explicit argument so alternatives can slot in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketScheme {
    #[default]
    PerCategoryTertiles,
}

/// Assign every manifest entity to a popularity bucket.
///
/// Within each category, entities sort by mean views descending (ties by
/// entity name ascending) and split head/torso/tail; when the count is
/// not divisible by three the remainder goes to the more popular buckets
/// first (sizes differ by at most one). Errors: a category with fewer
/// than three entities, a manifest entity without stats, or duplicate
/// stats for one entity.
pub fn bucket_popularity(
    manifest: &[EntityManifestRow],
    stats: &[PageviewStats],
    scheme: BucketScheme,
) -> Result<BTreeMap<String, Bucket>, DatasetError> {
    let BucketScheme::PerCategoryTertiles = scheme;
    let mut means: BTreeMap<&str, f64> = BTreeMap::new();
    for s in stats {
        if means.insert(s.entity_id.as_str(), s.mean_views).is_some() {
            return Err(DatasetError::SchemaViolation(format!(
                "duplicate pageview stats for entity {}",
                s.entity_id
            )));
        }
    }

    let mut per_category: BTreeMap<Category, Vec<(String, String, f64)>> = BTreeMap::new();
    for row in manifest {
        let id = row.entity_id();
        let mean = *means
            .get(id.as_str())
            .ok_or_else(|| DatasetError::MissingStats(id.clone()))?;
        per_category
            .entry(row.category)
            .or_default()
            .push((id, row.entity_name.clone(), mean));
    }

    let mut assignment = BTreeMap::new();
    for (category, mut entities) in per_category {
        if entities.len() < 3 {
            return Err(DatasetError::TooFewEntities(category.to_string()));
        }
        entities.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("mean views are finite")
                .then_with(|| a.1.cmp(&b.1))
        });
        let n = entities.len();
        let base = n / 3;
        let remainder = n % 3;
        let head_len = base + usize::from(remainder >= 1);
        let torso_len = base + usize::from(remainder >= 2);
        for (rank, (id, _, _)) in entities.into_iter().enumerate() {
            let bucket = if rank < head_len {
                Bucket::Head
            } else if rank < head_len + torso_len {
                Bucket::Torso
            } else {
                Bucket::Tail
            };
            assignment.insert(id, bucket);
        }
    }
    Ok(assignment)
}

/// Deterministically sample a fraction of each category's entities
/// (at least one per non-empty category). Candidates are considered in
/// name order and the draw is driven by the supplied seed, so one seed
/// always yields one subset. Returns entity ids in category/name order.
pub fn sample_entities(
    manifest: &[EntityManifestRow],
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>, DatasetError> {
    if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(DatasetError::InvalidParameter(format!(
            "sampling fraction must be within (0, 1], got {fraction}"
        )));
    }
    let mut per_category: BTreeMap<Category, Vec<(String, String)>> = BTreeMap::new();
    for row in manifest {
        per_category
            .entry(row.category)
            .or_default()
            .push((row.entity_name.clone(), row.entity_id()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = Vec::new();
    for (_, mut entities) in per_category {
        entities.sort();
        let n = entities.len();
        let k = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        picks.sort_unstable();
        for i in picks {
            sampled.push(entities[i].1.clone());
        }
    }
    Ok(sampled)
}
