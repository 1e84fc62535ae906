//! Representative code-pair selection.
//!
//! From a pool of student submissions we pick one fully-correct submission
//! (seeded uniform sample) and three buggy ones:
//!
//! 1. the buggy submission nearest the median of all pool scores,
//! 2. the highest-scoring submission that is not perfect,
//! 3. the submission nearest the median of the scores lying between the
//!    first two.
//!
//! Nearest-score ties go to the lower score, then to a submission not yet
//! picked, then to the lexicographically smaller student id.

use std::cmp::Ordering;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Submission;

/// Scores within this distance count as equal when comparing distances.
const SCORE_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodePair {
    pub buggy: Submission,
    pub correct: Submission,
    /// Number of generated tests the buggy code should pass (P).
    pub target_pass_count: u32,
    /// Number of tests requested from the model (Q).
    pub suite_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub pairs: Vec<CodePair>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("no fully-correct submission in the pool")]
    NoCorrect,
    #[error("no buggy submission in the pool")]
    NoBuggy,
    #[error("median of an empty score list")]
    EmptyScores,
    #[error("suite size must be at least 1")]
    ZeroSuiteSize,
}

/// Lower median: the middle element for odd lengths, the lower of the two
/// middle elements for even lengths.
pub fn median_score(scores: &[f64]) -> Result<f64, SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::EmptyScores);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// `round_half_up(q * s)`, clamped to `[0, q]`.
pub fn target_pass_count(suite_size: u32, score: f64) -> u32 {
    // The epsilon absorbs products like 10 * 0.35 = 3.4999999999999996.
    let raw = (f64::from(suite_size) * score + 0.5 + 1e-9).floor();
    raw.clamp(0.0, f64::from(suite_size)) as u32
}

fn is_perfect(s: &Submission) -> bool {
    s.score >= 1.0
}

/// Picks the candidate nearest `target`.
fn nearest<'a>(candidates: &[&'a Submission], target: f64, picked: &[&Submission]) -> &'a Submission {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            let da = (a.score - target).abs();
            let db = (b.score - target).abs();
            if (da - db).abs() > SCORE_TIE_EPS {
                return da.total_cmp(&db);
            }
            a.score
                .total_cmp(&b.score)
                .then_with(|| already_picked(a, picked).cmp(&already_picked(b, picked)))
                .then_with(|| tiebreak_ids(a, b))
        })
        .expect("candidates are nonempty")
}

fn already_picked(s: &Submission, picked: &[&Submission]) -> bool {
    picked.iter().any(|p| std::ptr::eq(*p, s))
}

fn tiebreak_ids(a: &Submission, b: &Submission) -> Ordering {
    a.student_id
        .cmp(&b.student_id)
        .then_with(|| a.attempt_index.cmp(&b.attempt_index))
}

/// Selects three buggy/correct pairs from `pool`.
pub fn select_pairs(pool: &[Submission], suite_size: u32, seed: u64) -> Result<SelectionOutcome, SelectionError> {
    if suite_size == 0 {
        return Err(SelectionError::ZeroSuiteSize);
    }
    let mut correct: Vec<&Submission> = pool.iter().filter(|s| is_perfect(s)).collect();
    let buggy: Vec<&Submission> = pool.iter().filter(|s| !is_perfect(s)).collect();
    if correct.is_empty() {
        return Err(SelectionError::NoCorrect);
    }
    if buggy.is_empty() {
        return Err(SelectionError::NoBuggy);
    }

    let all_scores: Vec<f64> = pool.iter().map(|s| s.score).collect();
    let mut median = median_score(&all_scores)?;
    if median >= 1.0 {
        let buggy_scores: Vec<f64> = buggy.iter().map(|s| s.score).collect();
        median = median_score(&buggy_scores)?;
    }
    let first = nearest(&buggy, median, &[]);

    let second = buggy
        .iter()
        .copied()
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| std::ptr::eq(*a, first).cmp(&std::ptr::eq(*b, first)))
                .then_with(|| tiebreak_ids(a, b))
        })
        .expect("buggy is nonempty");

    let (lo, hi) = if first.score <= second.score {
        (first.score, second.score)
    } else {
        (second.score, first.score)
    };
    let between: Vec<&Submission> = buggy
        .iter()
        .copied()
        .filter(|s| s.score >= lo && s.score <= hi)
        .collect();
    let between_scores: Vec<f64> = between.iter().map(|s| s.score).collect();
    let between_median = median_score(&between_scores)?;
    let third = nearest(&between, between_median, &[first, second]);

    // Sort the correct pool so the sample does not depend on input order.
    correct.sort_by(|a, b| tiebreak_ids(a, b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = correct[rng.random_range(0..correct.len())];

    let pairs = [first, second, third]
        .into_iter()
        .map(|b| CodePair {
            buggy: b.clone(),
            correct: reference.clone(),
            target_pass_count: target_pass_count(suite_size, b.score),
            suite_size,
        })
        .collect();
    Ok(SelectionOutcome { pairs, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(scores: &[f64]) -> Vec<Submission> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Submission {
                student_id: format!("s{i:02}"),
                problem_id: "p".into(),
                attempt_index: 0,
                source: format!("// {i}"),
                score,
            })
            .collect()
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_score(&[0.2, 0.5, 0.8]).unwrap(), 0.5);
        assert_eq!(median_score(&[0.8, 0.2, 0.6, 0.4]).unwrap(), 0.4);
        assert_eq!(median_score(&[0.7]).unwrap(), 0.7);
        assert_eq!(median_score(&[]), Err(SelectionError::EmptyScores));
    }

    #[test]
    fn six_score_pool() {
        let out = select_pairs(&pool(&[0.0, 0.25, 0.5, 0.7, 0.9, 1.0]), 10, 7).unwrap();
        let scores: Vec<f64> = out.pairs.iter().map(|p| p.buggy.score).collect();
        assert_eq!(scores, vec![0.5, 0.9, 0.7]);
        let targets: Vec<u32> = out.pairs.iter().map(|p| p.target_pass_count).collect();
        assert_eq!(targets, vec![5, 9, 7]);
        assert!(out.pairs.iter().all(|p| p.correct.score == 1.0));
    }

    #[test]
    fn degenerate_pool_repeats_the_only_buggy_code() {
        let out = select_pairs(&pool(&[0.5, 1.0]), 10, 0).unwrap();
        assert_eq!(out.pairs.len(), 3);
        for pair in &out.pairs {
            assert_eq!(pair.buggy.student_id, "s00");
            assert_eq!(pair.target_pass_count, 5);
        }
    }

    #[test]
    fn missing_correct_or_buggy() {
        assert_eq!(select_pairs(&pool(&[0.1, 0.5]), 10, 0), Err(SelectionError::NoCorrect));
        assert_eq!(select_pairs(&pool(&[1.0, 1.0]), 10, 0), Err(SelectionError::NoBuggy));
    }

    #[test]
    fn median_of_one_falls_back_to_buggy_scores() {
        // Lower median of {0.2, 0.6, 1, 1, 1} is 1.0; buggy median is 0.2.
        let out = select_pairs(&pool(&[1.0, 0.2, 1.0, 0.6, 1.0]), 5, 3).unwrap();
        assert_eq!(out.pairs[0].buggy.score, 0.2);
        assert_eq!(out.pairs[1].buggy.score, 0.6);
    }

    #[test]
    fn equal_scores_prefer_distinct_submissions() {
        let out = select_pairs(&pool(&[0.5, 0.5, 0.5, 1.0]), 4, 1).unwrap();
        let ids: Vec<&str> = out.pairs.iter().map(|p| p.buggy.student_id.as_str()).collect();
        assert_eq!(ids, vec!["s00", "s01", "s02"]);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(target_pass_count(10, 0.35), 4);
        assert_eq!(target_pass_count(4, 0.5), 2);
        assert_eq!(target_pass_count(3, 0.5), 2);
        assert_eq!(target_pass_count(7, 0.0), 0);
        assert_eq!(target_pass_count(7, 1.0), 7);
    }

    #[test]
    fn correct_sample_is_seeded() {
        let p = pool(&[0.3, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let a = select_pairs(&p, 5, 11).unwrap();
        let b = select_pairs(&p, 5, 11).unwrap();
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<String> = (0..40)
            .map(|seed| select_pairs(&p, 5, seed).unwrap().pairs[0].correct.student_id.clone())
            .collect();
        assert!(distinct.len() > 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pool() -> impl Strategy<Value = Vec<Submission>> {
            (1u32..=20).prop_flat_map(|q| {
                proptest::collection::vec(0..=q, 2..60).prop_map(move |nums| {
                    let mut scores: Vec<f64> = nums.iter().map(|&p| f64::from(p) / f64::from(q)).collect();
                    scores[0] = 1.0;
                    if scores[1] >= 1.0 {
                        scores[1] = 0.0;
                    }
                    pool(&scores)
                })
            })
        }

        proptest! {
            #[test]
            fn selection_invariants(p in arb_pool(), suite in 1u32..30, seed in any::<u64>()) {
                let out = select_pairs(&p, suite, seed).unwrap();
                prop_assert_eq!(&out, &select_pairs(&p, suite, seed).unwrap());
                let (a, b, c) = (&out.pairs[0].buggy, &out.pairs[1].buggy, &out.pairs[2].buggy);
                prop_assert!(!p.iter().any(|s| s.score > b.score && s.score < 1.0));
                prop_assert!(c.score >= a.score.min(b.score) && c.score <= a.score.max(b.score));
                for pair in &out.pairs {
                    let ratio = f64::from(pair.target_pass_count) / f64::from(suite);
                    prop_assert!((ratio - pair.buggy.score).abs() <= 0.5 / f64::from(suite) + 1e-9);
                    prop_assert!(pair.buggy.score < 1.0);
                    prop_assert_eq!(pair.correct.score, 1.0);
                }
            }
        }
    }
}
