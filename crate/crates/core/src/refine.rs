//! Iterative refinement: per code pair, generate, execute, feed back and
//! regenerate for K rounds, then merge the pair suites into one suite of
//! unique tests whose expected outputs come from the correct code.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::dataset::{MethodSignature, Problem, Submission};
use crate::harness::{ExecutionResult, Executor, HarnessError, Observation, DEFAULT_CAP};
use crate::llm::{LlmClient, LlmError, Message};
use crate::prompts::{
    parse_records, parse_test_cases, FeedbackContext, FeedbackTable, Origin, PromptBuilder, TestCase,
};
use crate::selection::{select_pairs, CodePair, SelectionError};
use crate::value::{TypedValue, ValueKind};

pub const DEFAULT_SUITE_SIZE: u32 = 10;
pub const MAX_PAIR_COUNT: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Feedback rounds per pair (K); 0 means single-shot generation.
    pub iterations: u32,
    /// Tests requested per prompt (Q).
    pub suite_size: u32,
    pub pair_count: u32,
    pub per_test_cap: Duration,
    pub seed: u64,
    pub feedback_context: FeedbackContext,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iterations: 1,
            suite_size: DEFAULT_SUITE_SIZE,
            pair_count: MAX_PAIR_COUNT,
            per_test_cap: DEFAULT_CAP,
            seed: 0,
            feedback_context: FeedbackContext::Full,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.suite_size == 0 {
            return Err(RefineError::InvalidConfig("suite_size must be at least 1".into()));
        }
        if self.pair_count == 0 || self.pair_count > MAX_PAIR_COUNT {
            return Err(RefineError::InvalidConfig(format!(
                "pair_count must be between 1 and {MAX_PAIR_COUNT}"
            )));
        }
        if self.per_test_cap.is_zero() {
            return Err(RefineError::InvalidConfig("per_test_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("no code pair yielded a parseable test suite")]
    NoParseableSuite,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

/// How one code pair's generation went.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair_index: u32,
    pub buggy: String,
    pub correct: String,
    pub target_pass_count: u32,
    pub suite_size: u32,
    /// Model responses that could not be parsed (the previous suite was kept).
    pub unparseable_rounds: u32,
    /// Tests in the pair's final suite after reconciliation; 0 if the pair
    /// produced nothing usable.
    pub final_count: u32,
    /// Buggy-code passes on the reconciled final suite.
    pub observed_pass_count: Option<u32>,
    /// `observed_pass_count - target_pass_count`.
    pub residual_gap: Option<i64>,
    /// Tests dropped because the correct code failed to produce an output.
    pub dropped: u32,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub problem_id: String,
    pub signature: MethodSignature,
    pub tests: Vec<TestCase>,
    pub pairs: Vec<PairReport>,
}

#[derive(Serialize, Deserialize)]
struct SuiteFile {
    problem_id: String,
    signature: MethodSignature,
    tests: Vec<Json>,
    #[serde(default)]
    pairs: Vec<PairReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl TestSuite {
    pub fn to_json(&self) -> Json {
        let tests: Vec<Json> = self
            .tests
            .iter()
            .map(|t| {
                let mut record = t.to_record();
                record["origin"] = json!({"pair_index": t.origin.pair_index, "iteration": t.origin.iteration});
                record
            })
            .collect();
        serde_json::to_value(SuiteFile {
            problem_id: self.problem_id.clone(),
            signature: self.signature.clone(),
            tests,
            pairs: self.pairs.clone(),
        })
        .expect("suite serializes")
    }

    pub fn from_json(value: &Json) -> Result<TestSuite, String> {
        let file: SuiteFile = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let mut tests = Vec::with_capacity(file.tests.len());
        for record in &file.tests {
            let origin: Origin = match record.get("origin") {
                Some(o) => serde_json::from_value(o.clone()).map_err(|e| format!("bad origin: {e}"))?,
                None => Origin {
                    pair_index: 0,
                    iteration: 0,
                },
            };
            let mut parsed =
                parse_records(std::slice::from_ref(record), &file.signature, origin).map_err(|e| e.to_string())?;
            tests.append(&mut parsed);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = tests.iter().find(|t| !seen.insert(t.case_id.clone())) {
            return Err(format!("duplicate test id `{}`", dup.case_id));
        }
        Ok(TestSuite {
            problem_id: file.problem_id,
            signature: file.signature,
            tests,
            pairs: file.pairs,
        })
    }

    /// Pretty JSON with a trailing newline; identical suites give identical bytes.
    pub fn save(&self, path: &Path) -> Result<(), SuiteFileError> {
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("suite serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| SuiteFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<TestSuite, SuiteFileError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| SuiteFileError::Io {
            path: p.clone(),
            source,
        })?;
        let value: Json = serde_json::from_str(&text).map_err(|e| SuiteFileError::Format {
            path: p.clone(),
            message: e.to_string(),
        })?;
        TestSuite::from_json(&value).map_err(|message| SuiteFileError::Format { path: p, message })
    }
}

/// Keeps the first test for each distinct input rendering, in order.
pub fn dedup(tests: Vec<TestCase>) -> Vec<TestCase> {
    let mut seen: HashMap<String, TypedValue> = HashMap::new();
    let mut out = Vec::with_capacity(tests.len());
    for test in tests {
        let key = test.input_key();
        match seen.get(&key) {
            Some(expected) => {
                if *expected != test.expected {
                    log::info!(
                        "duplicate inputs ({key}) with conflicting expected outputs {} and {}; keeping the first",
                        expected.display(),
                        test.expected.display()
                    );
                }
            }
            None => {
                seen.insert(key, test.expected.clone());
                out.push(test);
            }
        }
    }
    out
}

/// Replaces each expected output with what the correct code printed.
/// Tests on which the correct code did not produce an output are dropped;
/// returns the kept tests and the number dropped.
pub fn reconcile_with_observations(
    tests: Vec<TestCase>,
    observations: &[Observation],
    return_kind: ValueKind,
) -> (Vec<TestCase>, usize) {
    assert_eq!(tests.len(), observations.len(), "one observation per test");
    let mut kept = Vec::with_capacity(tests.len());
    let mut dropped = 0;
    for (mut test, obs) in tests.into_iter().zip(observations) {
        let reason = match obs {
            Observation::Output(text) => match TypedValue::from_canonical(return_kind, text) {
                Ok(value) => {
                    if value != test.expected {
                        log::debug!(
                            "test {}: expected {} replaced by the correct output {}",
                            test.case_id,
                            test.expected.display(),
                            value.display()
                        );
                    }
                    test.expected = value;
                    kept.push(test);
                    continue;
                }
                Err(e) => format!("unreadable output `{text}`: {e}"),
            },
            Observation::RuntimeError(m) => format!("runtime error: {}", m.lines().next().unwrap_or("")),
            Observation::Timeout(cap) => format!("timeout after {} ms", cap.as_millis()),
            Observation::CompileError(_) => "compile error".to_string(),
        };
        log::warn!(
            "dropping test {} ({}): correct code gave {reason}",
            test.case_id,
            test.input_key()
        );
        dropped += 1;
    }
    (kept, dropped)
}

/// Runs the correct code on every test and reconciles the expected outputs.
pub fn reconcile_expected(
    tests: Vec<TestCase>,
    correct: &Submission,
    signature: &MethodSignature,
    executor: &dyn Executor,
    cap: Duration,
) -> Result<Vec<TestCase>, HarnessError> {
    if tests.is_empty() {
        return Ok(tests);
    }
    let observations = executor.observe(&correct.label(), &correct.source, signature, &tests, cap)?;
    Ok(reconcile_with_observations(tests, &observations, signature.return_type).0)
}

/// Everything `generate_suite` needs besides the problem itself.
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub llm: &'a LlmClient,
    pub prompts: &'a PromptBuilder,
    pub executor: &'a dyn Executor,
}

struct PairResult {
    tests: Vec<TestCase>,
    report: PairReport,
}

impl Pipeline<'_> {
    /// Selects pairs from `pool`, refines one suite per pair and merges them.
    pub fn generate_suite(&self, problem: &Problem, pool: &[Submission]) -> Result<TestSuite, RefineError> {
        self.config.validate()?;
        let selection = select_pairs(pool, self.config.suite_size, self.config.seed)?;
        let mut merged = Vec::new();
        let mut reports = Vec::new();
        for (i, pair) in selection.pairs.iter().take(self.config.pair_count as usize).enumerate() {
            let pair_index = i as u32 + 1;
            let result = self.refine_pair(problem, pair, pair_index)?;
            merged.extend(result.tests);
            reports.push(result.report);
        }
        if reports.iter().all(|r| r.final_count == 0) {
            return Err(RefineError::NoParseableSuite);
        }
        let mut tests = dedup(merged);
        for (i, t) in tests.iter_mut().enumerate() {
            t.case_id = format!("t{}", i + 1);
        }
        Ok(TestSuite {
            problem_id: problem.problem_id.clone(),
            signature: problem.signature.clone(),
            tests,
            pairs: reports,
        })
    }

    fn complete(&self, messages: &[Message], what: &str) -> Result<Option<String>, RefineError> {
        match self.llm.complete(messages) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.is_fatal() => Err(e.into()),
            Err(e) => {
                log::warn!("{what}: {e}");
                Ok(None)
            }
        }
    }

    fn parse(&self, response: &str, signature: &MethodSignature, origin: Origin, what: &str) -> Option<Vec<TestCase>> {
        match parse_test_cases(response, signature, self.config.suite_size as usize, origin) {
            Ok(parsed) if !parsed.tests.is_empty() => Some(parsed.tests),
            Ok(_) => {
                log::warn!("{what}: response contains no test cases");
                None
            }
            Err(e) => {
                log::warn!("{what}: {e}");
                None
            }
        }
    }

    fn results(tests: &[TestCase], observations: &[Observation]) -> Vec<ExecutionResult> {
        tests
            .iter()
            .zip(observations)
            .map(|(t, o)| ExecutionResult {
                case_id: t.case_id.clone(),
                outcome: o.judge(&t.expected),
            })
            .collect()
    }

    fn refine_pair(&self, problem: &Problem, pair: &CodePair, pair_index: u32) -> Result<PairResult, RefineError> {
        let sig = &problem.signature;
        let cap = self.config.per_test_cap;
        let what = |iteration: u32| format!("{} pair {pair_index} round {iteration}", problem.problem_id);
        let mut report = PairReport {
            pair_index,
            buggy: pair.buggy.label(),
            correct: pair.correct.label(),
            target_pass_count: pair.target_pass_count,
            suite_size: pair.suite_size,
            unparseable_rounds: 0,
            final_count: 0,
            observed_pass_count: None,
            residual_gap: None,
            dropped: 0,
            note: None,
        };

        let mut history = self.prompts.generation_prompt(problem, pair);
        let Some(mut reply) = self.complete(&history, &what(0))? else {
            report.note = Some("generation request failed".into());
            return Ok(PairResult {
                tests: Vec::new(),
                report,
            });
        };
        let origin0 = Origin {
            pair_index,
            iteration: 0,
        };
        let Some(mut suite) = self.parse(&reply, sig, origin0, &what(0)) else {
            report.unparseable_rounds += 1;
            report.note = Some("initial response could not be parsed".into());
            return Ok(PairResult {
                tests: Vec::new(),
                report,
            });
        };

        for iteration in 1..=self.config.iterations {
            let buggy_obs = self
                .executor
                .observe(&pair.buggy.label(), &pair.buggy.source, sig, &suite, cap)?;
            let correct_obs = self
                .executor
                .observe(&pair.correct.label(), &pair.correct.source, sig, &suite, cap)?;
            let table = FeedbackTable::build(
                &suite,
                &Self::results(&suite, &buggy_obs),
                &Self::results(&suite, &correct_obs),
                sig.return_type,
                pair.target_pass_count,
            );
            let messages = self
                .prompts
                .feedback_prompt(&history, &reply, &table, pair, self.config.feedback_context);
            let Some(next_reply) = self.complete(&messages, &what(iteration))? else {
                report.note = Some(format!("feedback request {iteration} failed; kept the previous suite"));
                break;
            };
            history = messages;
            reply = next_reply;
            let origin = Origin { pair_index, iteration };
            match self.parse(&reply, sig, origin, &what(iteration)) {
                Some(mut revised) => {
                    let previous: HashMap<String, Origin> = suite.iter().map(|t| (t.input_key(), t.origin)).collect();
                    for t in &mut revised {
                        if let Some(o) = previous.get(&t.input_key()) {
                            t.origin = *o;
                        }
                    }
                    suite = revised;
                }
                None => report.unparseable_rounds += 1,
            }
        }

        let buggy_obs = self
            .executor
            .observe(&pair.buggy.label(), &pair.buggy.source, sig, &suite, cap)?;
        let correct_obs = self
            .executor
            .observe(&pair.correct.label(), &pair.correct.source, sig, &suite, cap)?;
        let buggy_by_id: HashMap<String, Observation> =
            suite.iter().map(|t| t.case_id.clone()).zip(buggy_obs).collect();
        let (kept, dropped) = reconcile_with_observations(suite, &correct_obs, sig.return_type);
        let passes = kept
            .iter()
            .filter(|t| buggy_by_id[&t.case_id].judge(&t.expected) == crate::harness::Outcome::Pass)
            .count() as u32;
        report.dropped = dropped as u32;
        report.final_count = kept.len() as u32;
        report.observed_pass_count = Some(passes);
        report.residual_gap = Some(i64::from(passes) - i64::from(pair.target_pass_count));
        if passes != pair.target_pass_count {
            log::info!(
                "{} pair {pair_index}: buggy code passes {passes} of {}, target {}",
                problem.problem_id,
                kept.len(),
                pair.target_pass_count
            );
        }
        Ok(PairResult { tests: kept, report })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: &str, nums: &[i32], expected: i32) -> TestCase {
        TestCase {
            case_id: id.into(),
            inputs: vec![TypedValue::IntArray(nums.to_vec())],
            expected: TypedValue::Int(expected),
            rationale: String::new(),
            origin: Origin {
                pair_index: 1,
                iteration: 0,
            },
        }
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let out = dedup(vec![t("a", &[6, 7], 0), t("b", &[1], 1), t("c", &[6, 7], 13)]);
        let ids: Vec<&str> = out.iter().map(|x| x.case_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(out[0].expected, TypedValue::Int(0));
    }

    #[test]
    fn dedup_is_identity_on_distinct_inputs() {
        let tests = vec![t("a", &[1], 1), t("b", &[2], 2), t("c", &[], 0)];
        assert_eq!(dedup(tests.clone()), tests);
    }

    #[test]
    fn reconcile_overrides_and_drops() {
        let tests = vec![t("a", &[6, 7, 1, 2, 3], 5), t("b", &[1], 1), t("c", &[2], 9)];
        let obs = vec![
            Observation::Output("6".into()),
            Observation::Output("1".into()),
            Observation::Timeout(Duration::from_secs(1)),
        ];
        let (kept, dropped) = reconcile_with_observations(tests, &obs, ValueKind::Int);
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].expected, TypedValue::Int(6));
        assert_eq!(kept[1].expected, TypedValue::Int(1));
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            suite_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            pair_count: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn suite_file_round_trip() {
        let suite = TestSuite {
            problem_id: "p".into(),
            signature: MethodSignature {
                method_name: "sum67".into(),
                param_types: vec![ValueKind::IntArray],
                return_type: ValueKind::Int,
            },
            tests: vec![t("t1", &[6, 7], 0), t("t2", &[], 0)],
            pairs: vec![],
        };
        let back = TestSuite::from_json(&suite.to_json()).unwrap();
        assert_eq!(back, suite);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_tests() -> impl Strategy<Value = Vec<TestCase>> {
            proptest::collection::vec((proptest::collection::vec(0i32..4, 0..3), 0i32..3), 0..12).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (nums, e))| t(&format!("x{i}"), &nums, e))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn dedup_is_monotone_and_unique(a in arb_tests(), b in arb_tests()) {
                let da = dedup(a.clone());
                let dab = dedup(a.into_iter().chain(b).collect());
                prop_assert!(dab.len() >= da.len());
                let keys: std::collections::HashSet<String> = dab.iter().map(TestCase::input_key).collect();
                prop_assert_eq!(keys.len(), dab.len());
                prop_assert_eq!(&dab[..da.len()], &da[..]);
            }
        }
    }
}
