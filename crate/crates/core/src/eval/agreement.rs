//! Inter-rater agreement: Fleiss' kappa over an items × categories count
//! matrix where every item was rated by the same number of raters.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("rating matrix has no items")]
    EmptyInput,
    #[error("rating matrix has no categories")]
    NoCategories,
    #[error("item {item} has a different category count than item 0")]
    RaggedRow { item: usize },
    #[error("item {item} was rated by {got} raters, expected {expected}")]
    UnevenRaters {
        item: usize,
        expected: u64,
        got: u64,
    },
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(u64),
    #[error("expected agreement is 1 (all ratings in one category); kappa undefined")]
    PerfectExpectedAgreement,
}

/// Items × categories counts: `counts[i][j]` raters assigned item `i` to
/// category `j`. Row sums must all equal the rater count (≥ 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<Vec<u64>>,
    raters: u64,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        let first = counts.first().ok_or(AgreementError::EmptyInput)?;
        if first.is_empty() {
            return Err(AgreementError::NoCategories);
        }
        let n_cats = first.len();
        let raters: u64 = first.iter().sum();
        if raters < 2 {
            return Err(AgreementError::TooFewRaters(raters));
        }
        for (item, row) in counts.iter().enumerate().skip(1) {
            if row.len() != n_cats {
                return Err(AgreementError::RaggedRow { item });
            }
            let got: u64 = row.iter().sum();
            if got != raters {
                return Err(AgreementError::UnevenRaters {
                    item,
                    expected: raters,
                    got,
                });
            }
        }
        Ok(RatingMatrix { counts, raters })
    }

    pub fn n_items(&self) -> usize {
        self.counts.len()
    }

    pub fn n_categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters(&self) -> u64 {
        self.raters
    }
}

/// Fleiss' kappa: `(P̄ - P̄_e) / (1 - P̄_e)` with per-item agreement
/// `P_i = (Σ_j n_ij² - n) / (n(n-1))` and chance agreement
/// `P̄_e = Σ_j p_j²` over category shares `p_j`.
///
/// Errors with [`AgreementError::PerfectExpectedAgreement`] when every
/// rating lands in a single category (the denominator vanishes).
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64, AgreementError> {
    let n = m.raters as f64;
    let n_items = m.n_items() as f64;

    let mut p_bar = 0.0;
    for row in &m.counts {
        let sq_sum: u64 = row.iter().map(|&c| c * c).sum();
        p_bar += (sq_sum as f64 - n) / (n * (n - 1.0));
    }
    p_bar /= n_items;

    let total = n * n_items;
    let mut p_e = 0.0;
    for j in 0..m.n_categories() {
        let col: u64 = m.counts.iter().map(|row| row[j]).sum();
        let share = col as f64 / total;
        p_e += share * share;
    }

    if 1.0 - p_e == 0.0 {
        return Err(AgreementError::PerfectExpectedAgreement);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_hand_value_negative_fifth() {
        // [[3,0],[2,1]]: P̄ = 2/3, P̄_e = 13/18, κ = -1/5.
        let m = RatingMatrix::new(vec![vec![3, 0], vec![2, 1]]).unwrap();
        assert!((fleiss_kappa(&m).unwrap() - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn kappa_perfect_agreement_across_categories_is_one() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![0, 3]]).unwrap();
        assert!((fleiss_kappa(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_chance_level_fixture_is_zero() {
        // P̄ = mean(1,1,0,0) = 0.5 and P̄_e = 0.5, so κ = 0 exactly.
        let m = RatingMatrix::new(vec![vec![2, 0], vec![0, 2], vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 0.0);
    }

    #[test]
    fn kappa_undefined_when_one_category_absorbs_everything() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        assert_eq!(
            fleiss_kappa(&m).unwrap_err(),
            AgreementError::PerfectExpectedAgreement
        );
    }

    #[test]
    fn constructor_rejects_malformed_matrices() {
        assert_eq!(
            RatingMatrix::new(vec![]).unwrap_err(),
            AgreementError::EmptyInput
        );
        assert_eq!(
            RatingMatrix::new(vec![vec![]]).unwrap_err(),
            AgreementError::NoCategories
        );
        assert_eq!(
            RatingMatrix::new(vec![vec![2, 1], vec![2]]).unwrap_err(),
            AgreementError::RaggedRow { item: 1 }
        );
        assert_eq!(
            RatingMatrix::new(vec![vec![2, 1], vec![2, 2]]).unwrap_err(),
            AgreementError::UnevenRaters {
                item: 1,
                expected: 3,
                got: 4
            }
        );
        assert_eq!(
            RatingMatrix::new(vec![vec![1, 0]]).unwrap_err(),
            AgreementError::TooFewRaters(1)
        );
    }

    /// Independent reimplementation counting agreeing rater pairs
    /// combinatorially instead of via the squared-sum identity.
    fn kappa_brute(counts: &[Vec<u64>], raters: u64) -> Option<f64> {
        let pairs_per_item = raters * (raters - 1) / 2;
        let mut p_bar = 0.0;
        for row in counts {
            let agreeing: u64 = row.iter().map(|&c| c * (c.saturating_sub(1)) / 2).sum();
            p_bar += agreeing as f64 / pairs_per_item as f64;
        }
        p_bar /= counts.len() as f64;

        let total: u64 = raters * counts.len() as u64;
        let mut p_e = 0.0;
        for j in 0..counts[0].len() {
            let col: u64 = counts.iter().map(|r| r[j]).sum();
            p_e += (col as f64 / total as f64).powi(2);
        }
        if 1.0 - p_e == 0.0 {
            None
        } else {
            Some((p_bar - p_e) / (1.0 - p_e))
        }
    }

    proptest! {
        #[test]
        fn kappa_matches_pair_counting_oracle(
            rows in proptest::collection::vec(
                proptest::collection::vec(0u64..4, 3),
                1..6,
            ),
            raters in 2u64..6,
        ) {
            // Renormalize each random row so it sums to `raters`.
            let counts: Vec<Vec<u64>> = rows
                .iter()
                .map(|row| {
                    let mut out = vec![0u64; row.len()];
                    let mut left = raters;
                    // Deterministic spread: weight by row values, remainder
                    // into the first column.
                    let total: u64 = row.iter().sum::<u64>().max(1);
                    for (j, &v) in row.iter().enumerate() {
                        let share = raters * v / total;
                        let share = share.min(left);
                        out[j] = share;
                        left -= share;
                    }
                    out[0] += left;
                    out
                })
                .collect();
            let m = RatingMatrix::new(counts.clone()).unwrap();
            match (fleiss_kappa(&m), kappa_brute(&counts, raters)) {
                (Ok(k), Some(b)) => {
                    prop_assert!((k - b).abs() < 1e-12, "{} vs {}", k, b);
                    prop_assert!(k <= 1.0 + 1e-12);
                }
                (Err(AgreementError::PerfectExpectedAgreement), None) => {}
                (k, b) => prop_assert!(false, "mismatch: {:?} vs {:?}", k, b),
            }
        }
    }
}
