//! Deterministic correctness judge.
//!
//! A prediction is judged `Correct` when it (a) names the expected entity —
//! the entity name or any alias occurs in the prediction as a contiguous
//! token subsequence after normalization — and (b) overlaps the gold answer
//! with token F1 at or above a threshold. Everything else counts as a
//! hallucination for reporting purposes. The rule is intentionally strict,
//! reproducible, and cheap; a learned judge can be plugged in upstream by
//! replacing predictions' judgements wholesale.

use serde::Serialize;

use crate::eval::metrics::token_f1;
use crate::text::find_phrase;

/// Default token-F1 threshold a prediction must clear against the gold
/// answer once the entity name is present.
pub const DEFAULT_JUDGE_F1_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Judgement {
    Correct,
    Incorrect,
}

impl Judgement {
    pub fn is_correct(self) -> bool {
        matches!(self, Judgement::Correct)
    }
}

/// Judge one prediction against the gold answer and the entity's names.
///
/// `Correct` iff the normalized prediction contains `entity_name` or any
/// of `aliases` as a contiguous token subsequence AND
/// `token_f1(prediction, gold_answer) >= f1_threshold`.
pub fn judge_answer(
    prediction: &str,
    gold_answer: &str,
    entity_name: &str,
    aliases: &[String],
    f1_threshold: f64,
) -> Judgement {
    let names_entity = find_phrase(prediction, entity_name).is_some()
        || aliases.iter().any(|a| find_phrase(prediction, a).is_some());
    if names_entity && token_f1(prediction, gold_answer) >= f1_threshold {
        Judgement::Correct
    } else {
        Judgement::Incorrect
    }
}
