//! Evaluation harness: text metrics, a deterministic correctness judge,
//! rank correlation, rater agreement, and corpus-level reporting with
//! popularity-bucket and category breakdowns.

pub mod agreement;
pub mod judge;
pub mod metrics;
pub mod rank;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Bucket;

pub use agreement::{fleiss_kappa, AgreementError, RatingMatrix};
pub use judge::{judge_answer, Judgement, DEFAULT_JUDGE_F1_THRESHOLD};
pub use metrics::{
    bleu, meteor_simplified, rouge_l_f1, token_f1, BleuAccumulator, DEFAULT_BLEU_MAX_N,
};
pub use rank::{kendall_tau_b, PValueMethod, RankError, RankingPair, TauResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

fn default_bucket() -> Bucket {
    Bucket::Unassigned
}

/// One scored row of an evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    #[serde(default)]
    pub question: String,
    pub gold_answer: String,
    pub entity_name: String,
    #[serde(default)]
    pub entity_aliases: Vec<String>,
    /// May be empty — an empty prediction is a valid (hallucinated) row.
    #[serde(default)]
    pub prediction: String,
    #[serde(default)]
    pub category: String,
    #[serde(default = "default_bucket")]
    pub bucket: Bucket,
}

/// Evaluation tunables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bleu_max_n: usize,
    pub judge_f1_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bleu_max_n: DEFAULT_BLEU_MAX_N,
            judge_f1_threshold: DEFAULT_JUDGE_F1_THRESHOLD,
        }
    }
}

/// Corpus metrics for one slice of examples. Text metrics are stored in
/// [0, 1] and scaled ×100 only at formatting time; accuracy and
/// hallucination are percentages and complement each other exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub n_examples: usize,
    /// Mean sentence-level ROUGE-L F1.
    pub rouge_l: f64,
    /// Corpus-level BLEU over the slice.
    pub bleu: f64,
    /// Mean sentence-level simplified METEOR.
    pub meteor: f64,
    /// Learned-metric slot: absent (never zero-filled) because no
    /// learned scorer ships here.
    pub bleurt: Option<f64>,
    pub accuracy: f64,
    pub hallucination: f64,
}

/// Full evaluation report: overall plus per-bucket and per-category
/// breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: MetricBlock,
    pub per_bucket: BTreeMap<Bucket, MetricBlock>,
    pub per_category: BTreeMap<String, MetricBlock>,
}

/// Sum in a canonical order so the result is bit-identical under any
/// permutation of the inputs.
fn stable_mean(mut scores: Vec<f64>) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let n = scores.len() as f64;
    scores.sort_by(f64::total_cmp);
    scores.iter().sum::<f64>() / n
}

fn score_block(examples: &[&EvalExample], config: &EvalConfig) -> MetricBlock {
    let mut rouge_scores = Vec::with_capacity(examples.len());
    let mut meteor_scores = Vec::with_capacity(examples.len());
    let mut bleu_acc = BleuAccumulator::new(config.bleu_max_n);
    let mut correct = 0usize;
    for ex in examples {
        rouge_scores.push(rouge_l_f1(&ex.prediction, &ex.gold_answer));
        meteor_scores.push(meteor_simplified(&ex.prediction, &ex.gold_answer));
        bleu_acc.add(&ex.prediction, &[ex.gold_answer.as_str()]);
        let judgement = judge_answer(
            &ex.prediction,
            &ex.gold_answer,
            &ex.entity_name,
            &ex.entity_aliases,
            config.judge_f1_threshold,
        );
        if judgement.is_correct() {
            correct += 1;
        }
    }
    let n = examples.len();
    let accuracy = 100.0 * correct as f64 / n as f64;
    MetricBlock {
        n_examples: n,
        rouge_l: stable_mean(rouge_scores),
        bleu: bleu_acc.score(),
        meteor: stable_mean(meteor_scores),
        bleurt: None,
        accuracy,
        hallucination: 100.0 - accuracy,
    }
}

/// Score an evaluation run. Sentence metrics (ROUGE-L, METEOR) are
/// averaged; BLEU is corpus-level per slice; accuracy is the judged
/// correct rate and hallucination its exact complement. The result is
/// independent of example order.
pub fn evaluate(examples: &[EvalExample], config: &EvalConfig) -> Result<MetricReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let all: Vec<&EvalExample> = examples.iter().collect();
    let overall = score_block(&all, config);

    let mut bucket_groups: BTreeMap<Bucket, Vec<&EvalExample>> = BTreeMap::new();
    let mut category_groups: BTreeMap<String, Vec<&EvalExample>> = BTreeMap::new();
    for ex in examples {
        bucket_groups.entry(ex.bucket).or_default().push(ex);
        category_groups
            .entry(ex.category.clone())
            .or_default()
            .push(ex);
    }
    let per_bucket = bucket_groups
        .into_iter()
        .map(|(bucket, group)| (bucket, score_block(&group, config)))
        .collect();
    let per_category = category_groups
        .into_iter()
        .map(|(category, group)| (category, score_block(&group, config)))
        .collect();
    Ok(MetricReport {
        overall,
        per_bucket,
        per_category,
    })
}

/// A signed relative change between two percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    /// 100·(with − without)/without, unrounded.
    pub raw: f64,
    /// The same, rounded half-away-from-zero to one decimal (the form
    /// reports print).
    pub rounded: f64,
}

/// Relative percentage change from `without` to `with_`. `None` when the
/// baseline is zero (the delta is undefined, not infinite).
pub fn ablation_delta(without: f64, with_: f64) -> Option<AblationDelta> {
    if without == 0.0 {
        return None;
    }
    let raw = 100.0 * (with_ - without) / without;
    Some(AblationDelta {
        raw,
        rounded: (raw * 10.0).round() / 10.0,
    })
}

/// One scope row of a two-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scope: String,
    pub accuracy_without: f64,
    pub accuracy_with: f64,
    pub accuracy_delta: Option<AblationDelta>,
    pub hallucination_without: f64,
    pub hallucination_with: f64,
    pub hallucination_delta: Option<AblationDelta>,
}

/// Ablation comparison of two runs over their shared scopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

fn comparison_row(scope: String, without: &MetricBlock, with_: &MetricBlock) -> ComparisonRow {
    ComparisonRow {
        scope,
        accuracy_without: without.accuracy,
        accuracy_with: with_.accuracy,
        accuracy_delta: ablation_delta(without.accuracy, with_.accuracy),
        hallucination_without: without.hallucination,
        hallucination_with: with_.hallucination,
        hallucination_delta: ablation_delta(without.hallucination, with_.hallucination),
    }
}

/// Compare a baseline run (`without`) against a treatment run (`with_`)
/// scope by scope: overall, then buckets, then categories present in
/// both reports.
pub fn compare_reports(without: &MetricReport, with_: &MetricReport) -> ComparisonReport {
    let mut rows = vec![comparison_row(
        "overall".to_string(),
        &without.overall,
        &with_.overall,
    )];
    for (bucket, base) in &without.per_bucket {
        if let Some(treat) = with_.per_bucket.get(bucket) {
            rows.push(comparison_row(bucket.to_string(), base, treat));
        }
    }
    for (category, base) in &without.per_category {
        if let Some(treat) = with_.per_category.get(category) {
            rows.push(comparison_row(category.clone(), base, treat));
        }
    }
    ComparisonReport { rows }
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "-".to_string(),
    }
}

/// Render the report as an aligned plain-text table. Text metrics print
/// ×100; the BLEURT column prints "-" because no learned metric runs.
pub fn format_metric_table(report: &MetricReport) -> String {
    let mut rows: Vec<(String, &MetricBlock)> = vec![("overall".to_string(), &report.overall)];
    for (bucket, block) in &report.per_bucket {
        rows.push((format!("bucket:{bucket}"), block));
    }
    for (category, block) in &report.per_category {
        let label = if category.is_empty() {
            "(none)".to_string()
        } else {
            category.clone()
        };
        rows.push((format!("category:{label}"), block));
    }
    let width = rows
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:width$}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "scope", "n", "rouge-l", "bleu", "meteor", "bleurt", "acc", "halluc",
    );
    for (label, block) in rows {
        let _ = writeln!(
            out,
            "{:width$}  {:>6}  {:>8.1}  {:>8.1}  {:>8.1}  {:>8}  {:>8.1}  {:>8.1}",
            label,
            block.n_examples,
            block.rouge_l * 100.0,
            block.bleu * 100.0,
            block.meteor * 100.0,
            fmt_opt(block.bleurt),
            block.accuracy,
            block.hallucination,
        );
    }
    out
}

fn fmt_delta(delta: &Option<AblationDelta>) -> String {
    match delta {
        Some(d) => format!("{:+.1}", d.rounded),
        None => "undef".to_string(),
    }
}

/// Render a two-run comparison as an aligned plain-text table.
pub fn format_comparison_table(report: &ComparisonReport) -> String {
    let width = report
        .rows
        .iter()
        .map(|r| r.scope.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:width$}  {:>9}  {:>9}  {:>8}  {:>9}  {:>9}  {:>8}",
        "scope", "acc w/o", "acc w/", "acc Δ%", "hall w/o", "hall w/", "hall Δ%",
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:width$}  {:>9.1}  {:>9.1}  {:>8}  {:>9.1}  {:>9.1}  {:>8}",
            row.scope,
            row.accuracy_without,
            row.accuracy_with,
            fmt_delta(&row.accuracy_delta),
            row.hallucination_without,
            row.hallucination_with,
            fmt_delta(&row.hallucination_delta),
        );
    }
    out
}

/// Human pairwise preference verdicts, ingested precomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseVerdict {
    Win,
    Tie,
    Lose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseTally {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl PairwiseTally {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }

    pub fn rates(&self) -> Option<(f64, f64, f64)> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let pct = |n: usize| 100.0 * n as f64 / total as f64;
        Some((pct(self.wins), pct(self.ties), pct(self.losses)))
    }
}

/// Tally precomputed pairwise verdicts. This harness never produces
/// verdicts itself — it only counts a supplied file.
pub fn tabulate_pairwise(verdicts: &[PairwiseVerdict]) -> PairwiseTally {
    let mut tally = PairwiseTally::default();
    for v in verdicts {
        match v {
            PairwiseVerdict::Win => tally.wins += 1,
            PairwiseVerdict::Tie => tally.ties += 1,
            PairwiseVerdict::Lose => tally.losses += 1,
        }
    }
    tally
}

/// Load evaluation rows from JSONL of [`EvalExample`].
pub fn load_examples_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<EvalExample>, EvalError> {
    let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut examples = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: EvalExample = serde_json::from_str(&line)
            .map_err(|e| EvalError::SchemaViolation(format!("eval line {}: {e}", idx + 1)))?;
        examples.push(ex);
    }
    Ok(examples)
}

/// A gold row awaiting its prediction (JSONL input to `eval run`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRow {
    pub id: String,
    #[serde(default)]
    pub question: String,
    pub gold_answer: String,
    pub entity_name: String,
    #[serde(default)]
    pub entity_aliases: Vec<String>,
    #[serde(default)]
    pub category: String,
    #[serde(default = "default_bucket")]
    pub bucket: Bucket,
}

/// A model output row (JSONL input to `eval run`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredRow {
    pub id: String,
    pub prediction: String,
}

fn load_rows<T: serde::de::DeserializeOwned, P: AsRef<Path>>(
    path: P,
    what: &str,
) -> Result<Vec<T>, EvalError> {
    let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut rows = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line)
            .map_err(|e| EvalError::SchemaViolation(format!("{what} line {}: {e}", idx + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_gold_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<GoldRow>, EvalError> {
    load_rows(path, "gold")
}

pub fn load_predictions_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<PredRow>, EvalError> {
    load_rows(path, "predictions")
}

/// Load pairwise verdicts from JSONL rows of `{"verdict": "win"|"tie"|"lose"}`.
pub fn load_pairwise_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<PairwiseVerdict>, EvalError> {
    #[derive(Deserialize)]
    struct Row {
        verdict: PairwiseVerdict,
    }
    let rows: Vec<Row> = load_rows(path, "pairwise")?;
    Ok(rows.into_iter().map(|r| r.verdict).collect())
}

/// Join gold rows with predictions by id. Every gold row must have
/// exactly one prediction; extra prediction ids are ignored so one
/// prediction file can serve filtered gold subsets.
pub fn join_gold_predictions(
    gold: &[GoldRow],
    predictions: &[PredRow],
) -> Result<Vec<EvalExample>, EvalError> {
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p.prediction.as_str()).is_some() {
            return Err(EvalError::SchemaViolation(format!(
                "duplicate prediction for id {:?}",
                p.id
            )));
        }
    }
    gold.iter()
        .map(|g| {
            let prediction = by_id.get(g.id.as_str()).copied().ok_or_else(|| {
                EvalError::SchemaViolation(format!("no prediction for id {:?}", g.id))
            })?;
            Ok(EvalExample {
                question: g.question.clone(),
                gold_answer: g.gold_answer.clone(),
                entity_name: g.entity_name.clone(),
                entity_aliases: g.entity_aliases.clone(),
                prediction: prediction.to_string(),
                category: g.category.clone(),
                bucket: g.bucket,
            })
        })
        .collect()
}
