//! Score estimation against a generated suite, error against ground truth,
//! and aggregation per problem, per assignment and per true-score bin.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Problem, Submission};
use crate::harness::{Executor, HarnessError, SuiteRun};
use crate::refine::TestSuite;

pub const DEFAULT_BIN_COUNT: usize = 10;
pub const REPORT_FILE: &str = "report.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const BINS_FILE: &str = "bins.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.json";

const REPORT_HEADER: [&str; 10] = [
    "assignment_id",
    "problem_id",
    "student_id",
    "attempt_index",
    "true_score",
    "estimated_score",
    "error",
    "passed",
    "total",
    "indicators",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub assignment_id: String,
    pub problem_id: String,
    pub student_id: String,
    pub attempt_index: u32,
    pub true_score: f64,
    pub estimated_score: f64,
    pub error: f64,
    /// 1 where the test passed, 0 otherwise; one entry per suite test.
    pub indicators: Vec<u8>,
}

impl ScoreReport {
    pub fn passed(&self) -> usize {
        self.indicators.iter().filter(|&&i| i == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Problem,
    Assignment,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Grouping::Problem => "problem",
            Grouping::Assignment => "assignment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    /// Mean over all member reports (each submission weighs the same).
    pub mean_error: f64,
    /// Mean of the per-problem means (each problem weighs the same).
    pub problem_mean_error: f64,
    pub count: usize,
    pub problems: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_error: Option<f64>,
}

impl BinRow {
    pub fn center(&self) -> f64 {
        (self.lower + self.upper) / 2.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot score against an empty suite")]
    EmptySuite,
    #[error("true score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// ŝ = passes / T and e = |s − ŝ|.
pub fn score_submission(
    run: &SuiteRun,
    submission: &Submission,
    assignment_id: &str,
) -> Result<ScoreReport, MetricsError> {
    if run.results.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    let s = submission.score;
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(MetricsError::ScoreOutOfRange(s));
    }
    let indicators: Vec<u8> = run.results.iter().map(|r| u8::from(r.passed())).collect();
    let passed = indicators.iter().filter(|&&i| i == 1).count();
    let estimated = passed as f64 / indicators.len() as f64;
    Ok(ScoreReport {
        assignment_id: assignment_id.to_string(),
        problem_id: submission.problem_id.clone(),
        student_id: submission.student_id.clone(),
        attempt_index: submission.attempt_index,
        true_score: s,
        estimated_score: estimated,
        error: (s - estimated).abs(),
        indicators,
    })
}

/// Runs every submission of `problem` against `suite`.
pub fn score_problem(
    problem: &Problem,
    submissions: &[Submission],
    suite: &TestSuite,
    executor: &dyn Executor,
    cap: Duration,
) -> Result<Vec<ScoreReport>, HarnessError> {
    if suite.tests.is_empty() {
        return Err(HarnessError::EmptySuite);
    }
    let mut reports = Vec::with_capacity(submissions.len());
    for sub in submissions {
        let run = executor.evaluate_suite(&sub.label(), &sub.source, &problem.signature, &suite.tests, cap)?;
        match score_submission(&run, sub, &problem.assignment_id) {
            Ok(report) => reports.push(report),
            Err(e) => log::warn!("{}: {e}", sub.label()),
        }
    }
    Ok(reports)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Canonical report order: assignment, problem, student, attempt.
pub fn sort_reports(reports: &mut [ScoreReport]) {
    reports.sort_by(|a, b| {
        (&a.assignment_id, &a.problem_id, &a.student_id, a.attempt_index).cmp(&(
            &b.assignment_id,
            &b.problem_id,
            &b.student_id,
            b.attempt_index,
        ))
    });
}

/// Mean error per group, rows sorted by key.
pub fn aggregate(reports: &[ScoreReport], grouping: Grouping) -> Vec<AggregateRow> {
    // group key -> problem id -> member errors
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        let key = match grouping {
            Grouping::Problem => r.problem_id.as_str(),
            Grouping::Assignment => r.assignment_id.as_str(),
        };
        groups
            .entry(key)
            .or_default()
            .entry(r.problem_id.as_str())
            .or_default()
            .push(r.error);
    }
    groups
        .into_iter()
        .map(|(key, problems)| {
            let mut all: Vec<f64> = problems.values().flatten().copied().collect();
            // Summation order must not depend on input order.
            all.sort_by(f64::total_cmp);
            let per_problem: Vec<f64> = problems
                .values()
                .map(|errs| {
                    let mut e = errs.clone();
                    e.sort_by(f64::total_cmp);
                    mean(e).expect("groups are nonempty")
                })
                .collect();
            AggregateRow {
                key: key.to_string(),
                mean_error: mean(all.iter().copied()).expect("groups are nonempty"),
                problem_mean_error: mean(per_problem).expect("groups are nonempty"),
                count: all.len(),
                problems: problems.len(),
            }
        })
        .collect()
}

/// Bin index for a true score: `[k/n, (k+1)/n)`, the last bin closed at 1.
pub fn bin_index(score: f64, bin_count: usize) -> usize {
    let raw = (score * bin_count as f64 + 1e-9).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(bin_count - 1)
    }
}

/// Equal-width bins over [0, 1] with per-bin counts and mean errors.
pub fn bin_by_true_score(reports: &[ScoreReport], bin_count: usize) -> Result<Vec<BinRow>, MetricsError> {
    if bin_count == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bin_count];
    for r in reports {
        members[bin_index(r.true_score, bin_count)].push(r.error);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(index, mut errs)| {
            errs.sort_by(f64::total_cmp);
            BinRow {
                index,
                lower: index as f64 / bin_count as f64,
                upper: (index + 1) as f64 / bin_count as f64,
                count: errs.len(),
                mean_error: mean(errs),
            }
        })
        .collect())
}

/// Overall means: pooled over submissions, and averaged over problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reports: usize,
    pub problems: usize,
    pub pooled_mean_error: Option<f64>,
    pub problem_mean_error: Option<f64>,
}

pub fn summarize(reports: &[ScoreReport]) -> Summary {
    let per_problem = aggregate(reports, Grouping::Problem);
    let mut errs: Vec<f64> = reports.iter().map(|r| r.error).collect();
    errs.sort_by(f64::total_cmp);
    Summary {
        reports: reports.len(),
        problems: per_problem.len(),
        pooled_mean_error: mean(errs),
        problem_mean_error: mean(per_problem.iter().map(|r| r.mean_error)),
    }
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), MetricsError> {
    fs::write(path, bytes).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

/// Writes `report.csv`, `aggregates.csv`, `bins.csv`, `summary.json` and
/// `plot.json` into `dir`. Output bytes depend only on the inputs.
pub fn emit_report(dir: &Path, reports: &[ScoreReport], bin_count: usize) -> Result<(), MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut reports = reports.to_vec();
    sort_reports(&mut reports);
    let bins = bin_by_true_score(&reports, bin_count)?;

    let mut rows = vec![REPORT_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in &reports {
        rows.push(vec![
            r.assignment_id.clone(),
            r.problem_id.clone(),
            r.student_id.clone(),
            r.attempt_index.to_string(),
            r.true_score.to_string(),
            r.estimated_score.to_string(),
            r.error.to_string(),
            r.passed().to_string(),
            r.indicators.len().to_string(),
            r.indicators.iter().map(|i| i.to_string()).collect::<String>(),
        ]);
    }
    write_file(&dir.join(REPORT_FILE), &csv_bytes(rows))?;

    let mut rows = vec![[
        "grouping",
        "key",
        "count",
        "problems",
        "mean_error",
        "problem_mean_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    let by_problem = aggregate(&reports, Grouping::Problem);
    let by_assignment = aggregate(&reports, Grouping::Assignment);
    for (grouping, group_rows) in [(Grouping::Problem, &by_problem), (Grouping::Assignment, &by_assignment)] {
        for row in group_rows {
            rows.push(vec![
                grouping.name().to_string(),
                row.key.clone(),
                row.count.to_string(),
                row.problems.to_string(),
                fmt4(row.mean_error),
                fmt4(row.problem_mean_error),
            ]);
        }
    }
    write_file(&dir.join(AGGREGATES_FILE), &csv_bytes(rows))?;

    let mut rows = vec![["bin", "lower", "upper", "center", "count", "mean_error"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for b in &bins {
        rows.push(vec![
            b.index.to_string(),
            fmt4(b.lower),
            fmt4(b.upper),
            fmt4(b.center()),
            b.count.to_string(),
            b.mean_error.map(fmt4).unwrap_or_default(),
        ]);
    }
    write_file(&dir.join(BINS_FILE), &csv_bytes(rows))?;

    let summary = json!({
        "summary": summarize(&reports),
        "by_problem": by_problem,
        "by_assignment": by_assignment,
        "bins": bins,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&dir.join(SUMMARY_FILE), text.as_bytes())?;

    let plot = json!({
        "bin_centers": bins.iter().map(BinRow::center).collect::<Vec<_>>(),
        "bin_edges": bins.iter().map(|b| b.lower).chain(bins.last().map(|b| b.upper)).collect::<Vec<_>>(),
        "mean_errors": bins.iter().map(|b| b.mean_error).collect::<Vec<_>>(),
        "counts": bins.iter().map(|b| b.count).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&plot).expect("plot serializes");
    text.push('\n');
    write_file(&dir.join(PLOT_FILE), text.as_bytes())
}

/// Reads a `report.csv` written by [`emit_report`].
pub fn load_reports(path: &Path) -> Result<Vec<ScoreReport>, MetricsError> {
    let fmt_err = |message: String| MetricsError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => MetricsError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => fmt_err(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
    if headers.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(fmt_err(format!(
            "unexpected header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| fmt_err(e.to_string()))?;
        let num = |idx: usize| -> Result<f64, MetricsError> {
            record[idx]
                .parse::<f64>()
                .map_err(|e| fmt_err(format!("line {line}: {}: {e}", REPORT_HEADER[idx])))
        };
        let indicators = record[9]
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(fmt_err(format!("line {line}: bad indicator `{c}`"))),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        out.push(ScoreReport {
            assignment_id: record[0].to_string(),
            problem_id: record[1].to_string(),
            student_id: record[2].to_string(),
            attempt_index: record[3]
                .parse()
                .map_err(|e| fmt_err(format!("line {line}: attempt_index: {e}")))?,
            true_score: num(4)?,
            estimated_score: num(5)?,
            error: num(6)?,
            indicators,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExecutionResult, Outcome};

    fn run(outcomes: Vec<Outcome>) -> SuiteRun {
        let results: Vec<ExecutionResult> = outcomes
            .into_iter()
            .enumerate()
            .map(|(i, outcome)| ExecutionResult {
                case_id: format!("t{}", i + 1),
                outcome,
            })
            .collect();
        SuiteRun {
            submission: "x".into(),
            pass_count: results.iter().filter(|r| r.passed()).count(),
            compiled: true,
            results,
        }
    }

    fn sub(score: f64) -> Submission {
        Submission {
            student_id: "s1".into(),
            problem_id: "p1".into(),
            attempt_index: 0,
            source: String::new(),
            score,
        }
    }

    fn report(assignment: &str, problem: &str, student: &str, s: f64, e: f64) -> ScoreReport {
        ScoreReport {
            assignment_id: assignment.into(),
            problem_id: problem.into(),
            student_id: student.into(),
            attempt_index: 0,
            true_score: s,
            estimated_score: (s - e).max(0.0),
            error: e,
            indicators: vec![1],
        }
    }

    #[test]
    fn sum67_buggy_row_scores_half() {
        let r = run(vec![
            Outcome::Pass,
            Outcome::Fail { actual: "17".into() },
            Outcome::Fail { actual: "13".into() },
            Outcome::Pass,
        ]);
        let rep = score_submission(&r, &sub(0.5), "a1").unwrap();
        assert_eq!(rep.estimated_score, 0.5);
        assert_eq!(rep.error, 0.0);
        assert_eq!(rep.indicators, vec![1, 0, 0, 1]);
    }

    #[test]
    fn non_pass_outcomes_score_zero() {
        let r = run(vec![
            Outcome::Timeout {
                cap: Duration::from_secs(1)
            };
            3
        ]);
        let rep = score_submission(&r, &sub(0.4), "a").unwrap();
        assert_eq!(rep.estimated_score, 0.0);
        assert!((rep.error - 0.4).abs() < 1e-12);
        let r = run(vec![
            Outcome::CompileError {
                diagnostics: String::new(),
            },
            Outcome::RuntimeError { message: String::new() },
        ]);
        assert_eq!(score_submission(&r, &sub(0.0), "a").unwrap().estimated_score, 0.0);
    }

    #[test]
    fn empty_suite_and_bad_scores_are_errors() {
        assert!(matches!(
            score_submission(&run(vec![]), &sub(0.5), "a"),
            Err(MetricsError::EmptySuite)
        ));
        assert!(matches!(
            score_submission(&run(vec![Outcome::Pass]), &sub(1.5), "a"),
            Err(MetricsError::ScoreOutOfRange(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let rows = aggregate(
            &[report("a", "p", "s1", 0.5, 0.1), report("a", "p", "s2", 0.5, 0.3)],
            Grouping::Assignment,
        );
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_error - 0.2).abs() < 1e-12);
        let rows = aggregate(
            &[report("b", "p2", "s", 0.5, 0.4), report("a", "p1", "s", 0.5, 0.2)],
            Grouping::Assignment,
        );
        let keys: Vec<&str> = rows.iter().map(|r| r.key.as_str()).collect();
        assert_eq!(keys, vec!["a", "b"]);
        assert_eq!(rows[1].mean_error, 0.4);
    }

    #[test]
    fn problem_weighted_and_pooled_means_differ() {
        let reports = vec![
            report("a", "p1", "s1", 1.0, 0.0),
            report("a", "p1", "s2", 1.0, 0.0),
            report("a", "p1", "s3", 1.0, 0.0),
            report("a", "p2", "s1", 1.0, 0.4),
        ];
        let row = &aggregate(&reports, Grouping::Assignment)[0];
        assert!((row.mean_error - 0.1).abs() < 1e-12);
        assert!((row.problem_mean_error - 0.2).abs() < 1e-12);
        let summary = summarize(&reports);
        assert_eq!(summary.problems, 2);
        assert!((summary.problem_mean_error.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bin_boundaries() {
        let reports = vec![report("a", "p", "s1", 0.0, 0.0), report("a", "p", "s2", 1.0, 0.0)];
        let bins = bin_by_true_score(&reports, 2).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1]);
        assert_eq!(bin_index(0.5, 2), 1);
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.7, 10), 7);
        let empty = bin_by_true_score(&reports, 4).unwrap();
        assert_eq!(empty[1].mean_error, None);
        assert!(matches!(bin_by_true_score(&reports, 0), Err(MetricsError::ZeroBins)));
    }

    #[test]
    fn emit_is_byte_stable_and_round_trips() {
        let reports = vec![
            report("a", "p2", "s1", 0.25, 0.25),
            report("a", "p1", "s2", 1.0 / 3.0, 0.1),
            report("b", "p3", "s1", 1.0, 0.0),
        ];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(d1.path(), &reports, 10).unwrap();
        let mut reversed = reports.clone();
        reversed.reverse();
        emit_report(d2.path(), &reversed, 10).unwrap();
        for f in [REPORT_FILE, AGGREGATES_FILE, BINS_FILE, SUMMARY_FILE, PLOT_FILE] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let mut loaded = load_reports(&d1.path().join(REPORT_FILE)).unwrap();
        let mut expected = reports;
        sort_reports(&mut expected);
        sort_reports(&mut loaded);
        assert_eq!(loaded, expected);
    }

    #[test]
    fn empty_report_is_headers_only() {
        let d = tempfile::tempdir().unwrap();
        emit_report(d.path(), &[], 10).unwrap();
        let text = fs::read_to_string(d.path().join(REPORT_FILE)).unwrap();
        assert_eq!(text, format!("{}\n", REPORT_HEADER.join(",")));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_reports() -> impl Strategy<Value = Vec<ScoreReport>> {
            proptest::collection::vec((0usize..3, 0usize..4, 0.0f64..=1.0, 0.0f64..=1.0), 1..40).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (a, p, s, e))| report(&format!("a{a}"), &format!("p{p}"), &format!("s{i}"), s, e))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn aggregate_is_permutation_invariant(reports in arb_reports(), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = reports.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                for g in [Grouping::Problem, Grouping::Assignment] {
                    prop_assert_eq!(aggregate(&reports, g), aggregate(&shuffled, g));
                }
            }

            #[test]
            fn bin_counts_sum_to_total(reports in arb_reports(), n in 1usize..25) {
                let bins = bin_by_true_score(&reports, n).unwrap();
                prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), reports.len());
            }

            #[test]
            fn all_pass_error_is_one_minus_score(t in 1usize..30, s in 0.0f64..=1.0) {
                let r = run(vec![Outcome::Pass; t]);
                let rep = score_submission(&r, &sub(s), "a").unwrap();
                prop_assert_eq!(rep.estimated_score, 1.0);
                prop_assert_eq!(rep.error, 1.0 - s);
            }
        }
    }
}
