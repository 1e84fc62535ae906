//! Synthetic inputs for the benchmarks. All generators are seeded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcgen_core::metrics::ScoreReport;
use tcgen_core::prompts::Origin;
use tcgen_core::{Submission, TestCase, TypedValue};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` submissions with scores on a 1/q grid, at least one perfect and one not.
pub fn submission_pool(n: usize, q: u32, seed: u64) -> Vec<Submission> {
    assert!(n >= 2 && q >= 1);
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let p = match i {
                0 => q,
                1 => 0,
                _ => rng.random_range(0..=q),
            };
            Submission {
                student_id: format!("s{i:04}"),
                problem_id: "p".into(),
                attempt_index: 0,
                source: String::new(),
                score: f64::from(p) / f64::from(q),
            }
        })
        .collect()
}

/// Scores p/q rendered to 6 decimals, as they appear in a corpus.
pub fn grid_scores(n: usize, q: u32, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            format!("{:.6}", f64::from(rng.random_range(0..=q)) / f64::from(q))
                .parse()
                .unwrap()
        })
        .collect();
    out.push(1.0 / f64::from(q));
    out
}

/// `n` int[] test cases; roughly a third repeat an earlier input.
pub fn test_cases(n: usize, seed: u64) -> Vec<TestCase> {
    let mut rng = rng(seed);
    let mut out: Vec<TestCase> = Vec::with_capacity(n);
    for i in 0..n {
        let inputs = if i > 0 && rng.random_ratio(1, 3) {
            out[rng.random_range(0..i)].inputs.clone()
        } else {
            let len = rng.random_range(0..12);
            vec![TypedValue::IntArray(
                (0..len).map(|_| rng.random_range(-20..20)).collect(),
            )]
        };
        out.push(TestCase {
            case_id: format!("t{}", i + 1),
            inputs,
            expected: TypedValue::Int(rng.random_range(-100..100)),
            rationale: "generated".into(),
            origin: Origin {
                pair_index: 1 + (i % 3) as u32,
                iteration: 0,
            },
        });
    }
    out
}

/// A fenced JSON response holding `n` sum67-shaped records.
pub fn model_response(n: usize, seed: u64) -> String {
    let mut rng = rng(seed);
    let mut body = String::from("Here are the tests.\n```json\n[\n");
    for i in 0..n {
        let len = rng.random_range(0..10);
        let nums: Vec<String> = (0..len).map(|_| rng.random_range(0..10).to_string()).collect();
        let sep = if i + 1 == n { "" } else { "," };
        body.push_str(&format!(
            "  {{\"id\": \"t{}\", \"inputs\": [[{}]], \"expected\": {}, \"explanation\": \"case {i}\"}}{sep}\n",
            i + 1,
            nums.join(", "),
            rng.random_range(0..50)
        ));
    }
    body.push_str("]\n```\n");
    body
}

/// `n` reports with uniform true scores and errors.
pub fn reports(n: usize, seed: u64) -> Vec<ScoreReport> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let s: f64 = rng.random_range(0.0..=1.0);
            let est: f64 = rng.random_range(0.0..=1.0);
            ScoreReport {
                assignment_id: format!("a{}", i % 5),
                problem_id: format!("p{}", i % 40),
                student_id: format!("s{i}"),
                attempt_index: 0,
                true_score: s,
                estimated_score: est,
                error: (s - est).abs(),
                indicators: vec![1, 0],
            }
        })
        .collect()
}
