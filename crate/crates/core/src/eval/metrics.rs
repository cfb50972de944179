//! Reference-based text metrics: ROUGE-L F1, BLEU with add-one smoothing,
//! a simplified exact-match METEOR, and token-level F1.
//!
//! All metrics share the crate tokenizer (lowercase, split on
//! non-alphanumerics) and are total functions into `[0, 1]`: degenerate
//! input (empty candidate, empty reference, no overlap) scores 0 rather
//! than erroring, so evaluation never aborts mid-corpus.

use std::collections::HashMap;

use crate::text::tokenize;

/// Default maximum n-gram order for BLEU.
pub const DEFAULT_BLEU_MAX_N: usize = 4;

/// ROUGE-L F1: longest common subsequence of candidate and reference
/// tokens, turned into precision `LCS/|cand|`, recall `LCS/|ref|`, and
/// their harmonic mean. 0 when either side is empty or nothing aligns.
pub fn rouge_l_f1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &refr);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / refr.len() as f64;
    2.0 * p * r / (p + r)
}

/// Longest common subsequence length via the classic O(m·n) table.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Running clipped n-gram counts for corpus-level BLEU.
///
/// Sentence BLEU is the single-pair corpus case, so one code path serves
/// both: [`bleu`] feeds one pair through an accumulator, the evaluation
/// harness feeds the whole corpus.
#[derive(Debug, Clone)]
pub struct BleuAccumulator {
    max_n: usize,
    matches: Vec<u64>,
    totals: Vec<u64>,
    candidate_len: u64,
    reference_len: u64,
}

impl BleuAccumulator {
    /// New accumulator scoring n-gram orders `1..=max_n`.
    pub fn new(max_n: usize) -> Self {
        BleuAccumulator {
            max_n,
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    /// Accumulate one candidate/reference-set pair. A pair with no
    /// references is skipped (callers should supply at least one).
    pub fn add<S: AsRef<str>>(&mut self, candidate: &str, references: &[S]) {
        if references.is_empty() {
            return;
        }
        let cand = tokenize(candidate);
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();

        self.candidate_len += cand.len() as u64;
        // Closest reference length; ties prefer the shorter reference.
        self.reference_len += refs
            .iter()
            .map(|r| r.len() as u64)
            .min_by_key(|&r| (r.abs_diff(cand.len() as u64), r))
            .unwrap_or(0);

        for n in 1..=self.max_n {
            if cand.len() < n {
                break;
            }
            let cand_grams = ngram_counts(&cand, n);
            let ref_grams: Vec<HashMap<&[String], u64>> =
                refs.iter().map(|r| ngram_counts(r, n)).collect();
            let mut clipped = 0u64;
            for (gram, &count) in &cand_grams {
                let best_ref = ref_grams
                    .iter()
                    .map(|rg| rg.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                clipped += count.min(best_ref);
            }
            self.matches[n - 1] += clipped;
            self.totals[n - 1] += (cand.len() - n + 1) as u64;
        }
    }

    /// Geometric mean of per-order precisions times the brevity penalty.
    ///
    /// Orders with no candidate n-grams anywhere are skipped, so a
    /// two-token candidate is scored on orders 1..2 only. Zero matches at
    /// order 1 yield 0; zero matches at higher orders get add-one
    /// smoothing `(m+1)/(t+1)`. Brevity penalty is
    /// `exp(min(0, 1 - r/c))` over summed lengths.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0u32;
        for n in 1..=self.max_n {
            let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
            if t == 0 {
                continue;
            }
            orders += 1;
            let p = if m > 0 {
                m as f64 / t as f64
            } else if n >= 2 {
                1.0 / (t as f64 + 1.0)
            } else {
                return 0.0;
            };
            log_sum += p.ln();
        }
        if orders == 0 {
            return 0.0;
        }
        let geo = (log_sum / f64::from(orders)).exp();
        let ratio = 1.0 - self.reference_len as f64 / self.candidate_len as f64;
        geo * ratio.min(0.0).exp()
    }
}

/// Sentence BLEU of one candidate against its references, orders
/// `1..=max_n` capped by the candidate length. `max_n` of 0, an empty
/// candidate, or an empty reference list all score 0.
pub fn bleu<S: AsRef<str>>(candidate: &str, references: &[S], max_n: usize) -> f64 {
    let mut acc = BleuAccumulator::new(max_n);
    acc.add(candidate, references);
    acc.score()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Simplified METEOR: exact-match unigram alignment only (no stemming or
/// synonymy), scored as `F_mean · (1 - penalty)` with
/// `F_mean = 10PR / (R + 9P)` and `penalty = 0.5 · (chunks/matches)^3`.
///
/// The alignment maximizes the number of matched tokens and then keeps the
/// chunk count low by greedily matching the longest common contiguous
/// block first (ties: earliest candidate position, then earliest reference
/// position). Greedy longest-block matching provably attains the maximum
/// match count; chunk minimization is greedy because exact minimization
/// over crossing alignments is a quadratic assignment problem.
pub fn meteor_simplified(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let (matches, chunks) = align_blocks(&cand, &refr);
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / refr.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Greedily select the longest common block of still-unmatched positions
/// until none remains. Returns (matched tokens, blocks selected).
fn align_blocks(cand: &[String], refr: &[String]) -> (usize, usize) {
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; refr.len()];
    let (mut matches, mut chunks) = (0usize, 0usize);
    loop {
        let mut best = (0usize, 0usize, 0usize); // (len, cand start, ref start)
        for ci in 0..cand.len() {
            for rj in 0..refr.len() {
                let mut len = 0;
                while ci + len < cand.len()
                    && rj + len < refr.len()
                    && !cand_used[ci + len]
                    && !ref_used[rj + len]
                    && cand[ci + len] == refr[rj + len]
                {
                    len += 1;
                }
                if len > best.0 {
                    best = (len, ci, rj);
                }
            }
        }
        if best.0 == 0 {
            return (matches, chunks);
        }
        for off in 0..best.0 {
            cand_used[best.1 + off] = true;
            ref_used[best.2 + off] = true;
        }
        matches += best.0;
        chunks += 1;
    }
}

/// Token-level F1 over multisets: overlap is `Σ_t min(count_pred(t),
/// count_gold(t))`. Used by the correctness judge. 0 when either side is
/// empty or nothing overlaps.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = tokenize(prediction);
    let gld = tokenize(gold);
    if pred.is_empty() || gld.is_empty() {
        return 0.0;
    }
    let mut gold_counts: HashMap<&str, u64> = HashMap::new();
    for t in &gld {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0u64;
    for t in &pred {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gld.len() as f64;
    2.0 * p * r / (p + r)
}
