//! Entity resolution: turn a retrieval set into one entity hypothesis (or
//! an honest `Unknown`) by similarity-weighted voting over the entities
//! behind the retrieved captions.
//!
//! Hits below a score floor are discarded; surviving hits vote for their
//! entity with their cosine similarity as the weight. The winner must beat
//! the runner-up by a relative margin, otherwise the result is `Unknown` —
//! a first-class value, not an error, because refusing to guess is the
//! correct behaviour for an entity-centric answerer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::RetrievalSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("invalid resolution config: {0}")]
    InvalidConfig(String),
}

/// Voting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    /// Hits scoring below this are ignored (score floor in [0, 1]).
    pub min_score: f64,
    /// Required relative winner margin in [0, 1]: the winner's total must
    /// exceed the runner-up's by at least `min_margin × winner_total`.
    pub min_margin: f64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            min_score: 0.5,
            min_margin: 0.05,
        }
    }
}

impl ResolutionConfig {
    pub fn validate(&self) -> Result<(), ResolveError> {
        for (name, v) in [
            ("min_score", self.min_score),
            ("min_margin", self.min_margin),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ResolveError::InvalidConfig(format!(
                    "{name} must be within [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The winning entity with its vote totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityHypothesis {
    pub entity_id: String,
    /// Sum of surviving hit similarities for this entity.
    pub score: f64,
    /// Number of surviving hits that voted for this entity.
    pub support_count: usize,
    /// Vote total of the second-best entity (0 when there is none).
    pub runner_up_score: f64,
}

/// Resolution outcome: a hypothesis, or a deliberate refusal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Entity(EntityHypothesis),
    Unknown,
}

impl Resolution {
    pub fn entity(&self) -> Option<&EntityHypothesis> {
        match self {
            Resolution::Entity(h) => Some(h),
            Resolution::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Resolution::Unknown)
    }
}

/// Resolve one retrieval set.
///
/// Votes accumulate in hit order (the set's canonical order), grouped by
/// `entity_id`. The winner is the group with the highest total; ties fall
/// to the higher best single hit, then to the lexicographically smaller
/// entity id. `Unknown` when no hit survives the floor or the margin rule
/// fails.
pub fn resolve(set: &RetrievalSet, cfg: &ResolutionConfig) -> Resolution {
    struct Group {
        entity_id: String,
        total: f64,
        best: f32,
        support: usize,
    }

    let mut groups: Vec<Group> = Vec::new();
    for hit in set.hits() {
        if f64::from(hit.score) < cfg.min_score {
            continue;
        }
        match groups.iter_mut().find(|g| g.entity_id == hit.entity_id) {
            Some(g) => {
                g.total += f64::from(hit.score);
                g.best = g.best.max(hit.score);
                g.support += 1;
            }
            None => groups.push(Group {
                entity_id: hit.entity_id.clone(),
                total: f64::from(hit.score),
                best: hit.score,
                support: 1,
            }),
        }
    }
    if groups.is_empty() {
        return Resolution::Unknown;
    }

    groups.sort_by(|a, b| {
        b.total
            .partial_cmp(&a.total)
            .expect("vote totals are finite")
            .then(b.best.partial_cmp(&a.best).expect("scores are finite"))
            .then(a.entity_id.cmp(&b.entity_id))
    });
    let runner_up_score = groups.get(1).map_or(0.0, |g| g.total);
    let winner = &groups[0];

    if winner.total - runner_up_score < cfg.min_margin * winner.total {
        return Resolution::Unknown;
    }
    Resolution::Entity(EntityHypothesis {
        entity_id: winner.entity_id.clone(),
        score: winner.total,
        support_count: winner.support,
        runner_up_score,
    })
}

/// Resolve many retrieval sets with one config.
pub fn resolve_batch(sets: &[RetrievalSet], cfg: &ResolutionConfig) -> Vec<Resolution> {
    sets.iter().map(|s| resolve(s, cfg)).collect()
}
