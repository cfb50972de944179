//! Kendall rank correlation (τ-b) with tie correction, plus a two-sided
//! p-value: exact permutation enumeration for small tie-free inputs,
//! a tie-corrected normal approximation otherwise.
//!
//! Used to check how well automatic metrics track human rankings of
//! systems. Rankings are integer ranks aligned by item; ties are allowed.

use serde::Serialize;
use thiserror::Error;

/// Largest n for which the exact permutation p-value is enumerated
/// (n! ≤ 40320 evaluations). Ties always fall back to the normal
/// approximation — the exact null distribution is ill-defined under ties.
const EXACT_P_MAX_N: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankError {
    #[error("rankings must be the same length (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 ranked items, got {0}")]
    TooShort(usize),
    #[error("degenerate ranking: every item tied on one side")]
    DegenerateRanking,
}

/// Two rankings of the same item set, aligned by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingPair {
    a: Vec<i64>,
    b: Vec<i64>,
}

impl RankingPair {
    /// Validates equal length and at least two items.
    pub fn new(a: Vec<i64>, b: Vec<i64>) -> Result<Self, RankError> {
        if a.len() != b.len() {
            return Err(RankError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(RankError::TooShort(a.len()));
        }
        Ok(RankingPair { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        false // new() rejects fewer than two items
    }
}

/// How the p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PValueMethod {
    ExactEnumeration,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TauResult {
    /// Tie-corrected correlation in [-1, 1].
    pub tau: f64,
    /// Two-sided p-value in [0, 1].
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Kendall τ-b: `S / sqrt((n0 - n1)(n0 - n2))` where `S` is the
/// concordant-minus-discordant pair count, `n0 = n(n-1)/2`, and `n1`/`n2`
/// correct for ties within each ranking. Errors with
/// [`RankError::DegenerateRanking`] when either side is entirely tied.
pub fn kendall_tau_b(pair: &RankingPair) -> Result<TauResult, RankError> {
    let n = pair.len();
    let s = s_statistic(&pair.a, &pair.b);
    let n0 = (n as i128) * (n as i128 - 1) / 2;
    let ties_a = tie_group_sizes(&pair.a);
    let ties_b = tie_group_sizes(&pair.b);
    let n1: i128 = ties_a.iter().map(|&t| t * (t - 1) / 2).sum();
    let n2: i128 = ties_b.iter().map(|&t| t * (t - 1) / 2).sum();
    if n0 == n1 || n0 == n2 {
        return Err(RankError::DegenerateRanking);
    }
    let tau = s as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();

    let (p_value, method) = if n <= EXACT_P_MAX_N && n1 == 0 && n2 == 0 {
        (
            exact_p(&pair.a, &pair.b, s.unsigned_abs()),
            PValueMethod::ExactEnumeration,
        )
    } else {
        (
            normal_p(n, s, &ties_a, &ties_b),
            PValueMethod::NormalApproximation,
        )
    };
    Ok(TauResult {
        tau,
        p_value: p_value.clamp(0.0, 1.0),
        method,
    })
}

/// Concordant-minus-discordant count over all item pairs.
fn s_statistic(a: &[i64], b: &[i64]) -> i128 {
    let mut s: i128 = 0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let da = (a[i] - a[j]).signum();
            let db = (b[i] - b[j]).signum();
            s += i128::from(da * db);
        }
    }
    s
}

/// Sizes of the tie groups (each distinct value's multiplicity).
fn tie_group_sizes(v: &[i64]) -> Vec<i128> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable();
    let mut sizes = Vec::new();
    let mut run = 1i128;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            sizes.push(run);
            run = 1;
        }
    }
    sizes.push(run);
    sizes
}

/// Exact two-sided p-value for tie-free data: the fraction of the n!
/// permutations of one ranking whose |S| is at least the observed |S|.
fn exact_p(a: &[i64], b: &[i64], s_abs: u128) -> f64 {
    let mut perm = b.to_vec();
    let n = perm.len();
    let mut extreme: u64 = 0;
    let mut total: u64 = 0;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut tally = |p: &[i64]| {
        total += 1;
        if s_statistic(a, p).unsigned_abs() >= s_abs {
            extreme += 1;
        }
    };
    tally(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            tally(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Tie-corrected normal approximation: S is asymptotically normal under
/// the null with variance
/// `(v0 - vt - vu)/18 + v1 + v2` (the standard tie-corrected form), and
/// the two-sided p-value is `erfc(|z| / √2)`.
fn normal_p(n: usize, s: i128, ties_a: &[i128], ties_b: &[i128]) -> f64 {
    let n = n as i128;
    let v0 = n * (n - 1) * (2 * n + 5);
    let vt: i128 = ties_a.iter().map(|&t| t * (t - 1) * (2 * t + 5)).sum();
    let vu: i128 = ties_b.iter().map(|&u| u * (u - 1) * (2 * u + 5)).sum();
    let t1: i128 = ties_a.iter().map(|&t| t * (t - 1)).sum();
    let u1: i128 = ties_b.iter().map(|&u| u * (u - 1)).sum();
    let t2: i128 = ties_a.iter().map(|&t| t * (t - 1) * (t - 2)).sum();
    let u2: i128 = ties_b.iter().map(|&u| u * (u - 1) * (u - 2)).sum();

    let mut var =
        (v0 - vt - vu) as f64 / 18.0 + (t1 as f64 * u1 as f64) / (2.0 * (n * (n - 1)) as f64);
    if n > 2 {
        var += (t2 as f64 * u2 as f64) / (9.0 * (n * (n - 1) * (n - 2)) as f64);
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = s as f64 / var.sqrt();
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}
