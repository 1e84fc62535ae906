//! Subcommand implementations. Each returns the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use tcgen_core::dataset::{
    final_submissions, infer_total_tests, load_corpus, Corpus, CorpusError, DEFAULT_SCORE_EPSILON,
};
use tcgen_core::harness::{Harness, HarnessConfig, HarnessError, Toolchain};
use tcgen_core::llm::{
    load_transcript, save_transcript, CompletionConfig, HttpProvider, LlmClient, LlmError, Message, Provider,
    ReplayProvider, ScriptedProvider, Transcript, API_KEY_ENV, API_KEY_FALLBACK_ENV,
};
use tcgen_core::metrics::{self, Grouping, ScoreReport};
use tcgen_core::prompts::PromptBuilder;
use tcgen_core::refine::{Pipeline, RefineError, TestSuite};

use crate::config::{ProviderKind, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const SUITES_DIR: &str = "suites";
pub const EVALUATION_DIR: &str = "evaluation";

/// A usage problem (missing or contradictory settings); exits with 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn corpus_path(settings: &Settings) -> Result<&Path> {
    settings
        .corpus
        .as_deref()
        .ok_or_else(|| usage("no corpus given (set `corpus` or pass --corpus)"))
}

fn load(settings: &Settings) -> Result<Corpus> {
    let path = corpus_path(settings)?;
    load_corpus(path, settings.corpus_format(path)).map_err(|e| match e {
        CorpusError::Invalid(diags) => {
            let mut msg = format!("corpus {} is invalid ({} errors):", path.display(), diags.len());
            for d in &diags {
                let _ = write!(msg, "\n  {d}");
            }
            anyhow!(msg)
        }
        other => anyhow!(other),
    })
}

fn selected_problems(settings: &Settings, corpus: &Corpus) -> Result<Vec<String>> {
    match settings.problem_filter() {
        None => Ok(corpus.problems.keys().cloned().collect()),
        Some(ids) => {
            for id in &ids {
                if corpus.problem(id).is_none() {
                    bail!(usage(format!("unknown problem `{id}` in `problems`")));
                }
            }
            // Keep corpus order regardless of the order given.
            Ok(corpus.problems.keys().filter(|k| ids.contains(k)).cloned().collect())
        }
    }
}

/// `validate`: exit 0 iff the corpus loads without diagnostics.
pub fn validate(settings: &Settings, out: &mut dyn std::io::Write) -> Result<i32> {
    let path = corpus_path(settings)?;
    match load_corpus(path, settings.corpus_format(path)) {
        Ok(corpus) => {
            writeln!(
                out,
                "{}: {} problems, {} submissions",
                path.display(),
                corpus.problems.len(),
                corpus.submission_count()
            )?;
            writeln!(out, "0 errors")?;
            Ok(EXIT_OK)
        }
        Err(CorpusError::Invalid(diags)) => {
            for d in &diags {
                writeln!(out, "{d}")?;
            }
            writeln!(out, "{} error{}", diags.len(), if diags.len() == 1 { "" } else { "s" })?;
            Ok(EXIT_FAILURE)
        }
        Err(e) => {
            writeln!(out, "{e}")?;
            writeln!(out, "1 error")?;
            Ok(EXIT_FAILURE)
        }
    }
}

/// `infer-q`: smallest consistent test count per problem.
pub fn infer_q(settings: &Settings, out: &mut dyn std::io::Write) -> Result<i32> {
    let corpus = load(settings)?;
    writeln!(
        out,
        "{:<12} {:<12} {:>11}  q",
        "problem_id", "assignment", "submissions"
    )?;
    for pid in selected_problems(settings, &corpus)? {
        let problem = corpus.problem(&pid).expect("selected problems exist");
        let scores: Vec<f64> = corpus.submissions_for(&pid).iter().map(|s| s.score).collect();
        let q = if scores.is_empty() {
            "no submissions".to_string()
        } else {
            match infer_total_tests(&scores, settings.q_max, DEFAULT_SCORE_EPSILON) {
                Ok(q) => q.to_string(),
                Err(e) => format!("infeasible: {e}"),
            }
        };
        writeln!(
            out,
            "{:<12} {:<12} {:>11}  {q}",
            pid,
            problem.assignment_id,
            scores.len()
        )?;
    }
    Ok(EXIT_OK)
}

pub fn toolchain(settings: &Settings) -> Result<Toolchain, HarnessError> {
    let java = settings.java.clone().unwrap_or_else(|| PathBuf::from("java"));
    if let Some(javac) = &settings.javac {
        return Ok(Toolchain::javac(javac.clone(), java));
    }
    if let Some(cp) = &settings.janino_classpath {
        return Ok(Toolchain::janino(java, cp.clone()));
    }
    Toolchain::discover()
}

fn harness(settings: &Settings) -> Result<Harness> {
    let toolchain = toolchain(settings)?;
    log::info!("toolchain: {}", toolchain.describe());
    Ok(Harness::new(
        toolchain,
        HarnessConfig {
            per_test_cap: settings.per_test_cap(),
            workers: settings.workers,
            log_dir: settings.log_dir.clone(),
            ..HarnessConfig::default()
        },
    ))
}

/// Lets several per-problem clients share one provider.
struct Shared(Arc<dyn Provider>);

impl Provider for Shared {
    fn name(&self) -> &'static str {
        self.0.name()
    }
    fn send(&self, messages: &[Message], config: &CompletionConfig) -> Result<String, LlmError> {
        self.0.send(messages, config)
    }
}

fn provider(settings: &Settings) -> Result<Arc<dyn Provider>> {
    Ok(match settings.provider {
        ProviderKind::Http => match &settings.base_url {
            Some(base) => {
                let key = std::env::var(API_KEY_ENV)
                    .ok()
                    .or_else(|| std::env::var(API_KEY_FALLBACK_ENV).ok())
                    .filter(|k| !k.trim().is_empty());
                Arc::new(HttpProvider::new(base.clone(), key))
            }
            None => Arc::new(HttpProvider::from_env()),
        },
        ProviderKind::Mock => {
            let path = settings
                .mock_script
                .as_deref()
                .ok_or_else(|| usage("provider `mock` needs `mock_script`"))?;
            let rules = ScriptedProvider::load_rules(path)?;
            Arc::new(ScriptedProvider::from_rules(rules))
        }
        ProviderKind::Replay => {
            let path = settings
                .replay_transcript
                .as_deref()
                .ok_or_else(|| usage("provider `replay` needs `replay_transcript`"))?;
            Arc::new(ReplayProvider::new(load_transcript(path)?))
        }
    })
}

fn prompts(settings: &Settings) -> Result<PromptBuilder> {
    Ok(match &settings.templates_dir {
        Some(dir) => PromptBuilder::load_dir(dir)?,
        None => PromptBuilder::builtin(),
    })
}

/// Runs `f` over `items` with at most `limit` in flight; output keeps
/// input order. Once `stop` returns true for a result, no new items start.
fn bounded_map<T: Sync, R: Send>(
    items: &[T],
    limit: usize,
    f: impl Fn(&T) -> R + Sync,
    stop: impl Fn(&R) -> bool + Sync,
) -> Vec<Option<R>> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let halted = AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..limit.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                if halted.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                if stop(&r) {
                    halted.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("slot lock")).collect()
}

fn file_stem(problem_id: &str) -> String {
    problem_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Settings with every path made absolute, so a snapshot works from any
/// directory.
fn snapshot(settings: &Settings) -> Settings {
    let mut s = settings.clone();
    for p in [
        &mut s.corpus,
        &mut s.mock_script,
        &mut s.replay_transcript,
        &mut s.templates_dir,
        &mut s.log_dir,
    ]
    .into_iter()
    .flatten()
    {
        *p = absolute(p);
    }
    s.out = absolute(&s.out);
    s
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub problem_id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    pub tests: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Completion marker of a `generate` run, written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: Settings,
    pub corpus: String,
    pub corpus_checksum: String,
    pub seed: u64,
    pub provider: String,
    pub model: String,
    pub template_versions: Vec<String>,
    pub toolchain: String,
    pub transcript: String,
    pub problems: Vec<ProblemEntry>,
    pub started_unix_ms: u128,
    pub duration_ms: u128,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
    }
}

fn is_fatal(e: &RefineError) -> bool {
    match e {
        RefineError::Llm(l) => l.is_fatal(),
        RefineError::Harness(_) | RefineError::InvalidConfig(_) => true,
        RefineError::Selection(_) | RefineError::NoParseableSuite => false,
    }
}

/// `generate`: one suite per problem, then the manifest.
pub fn generate(settings: &Settings, out: &mut dyn std::io::Write) -> Result<i32> {
    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let pipeline_config = settings.pipeline();
    pipeline_config.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = load(settings)?;
    let problems = selected_problems(settings, &corpus)?;
    let provider = provider(settings)?;
    let prompts = prompts(settings)?;
    let harness = harness(settings)?;
    let completion = settings.completion();

    let run_dir = &settings.out;
    let suites_dir = run_dir.join(SUITES_DIR);
    fs::create_dir_all(&suites_dir).with_context(|| format!("cannot create {}", suites_dir.display()))?;
    // A stale manifest would mark this run complete before it is.
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).with_context(|| format!("cannot remove {}", manifest_path.display()))?;
    }
    fs::write(run_dir.join(CONFIG_SNAPSHOT_FILE), snapshot(settings).to_toml())
        .with_context(|| format!("cannot write config snapshot in {}", run_dir.display()))?;

    type Outcome = (Result<TestSuite, RefineError>, Transcript);
    let results: Vec<Option<Outcome>> = bounded_map(
        &problems,
        settings.parallel_problems,
        |pid| {
            let problem = corpus.problem(pid).expect("selected problems exist");
            let llm = LlmClient::new(Box::new(Shared(provider.clone())), completion.clone())
                .expect("completion settings were validated");
            let result = final_submissions(&corpus, pid)
                .map_err(|e| RefineError::InvalidConfig(e.to_string()))
                .and_then(|pool| {
                    Pipeline {
                        config: &pipeline_config,
                        llm: &llm,
                        prompts: &prompts,
                        executor: &harness,
                    }
                    .generate_suite(problem, &pool)
                });
            (result, llm.transcript())
        },
        |(result, _)| result.as_ref().is_err_and(is_fatal),
    );

    let mut transcript = Transcript::new();
    let mut entries = Vec::new();
    let mut fatal = None;
    for (pid, result) in problems.iter().zip(results) {
        let Some((result, part)) = result else {
            entries.push(ProblemEntry {
                problem_id: pid.clone(),
                status: "not_run".into(),
                suite: None,
                tests: 0,
                error: Some("run aborted".into()),
            });
            continue;
        };
        for e in part.entries() {
            transcript.push(e.clone());
        }
        match result {
            Ok(suite) => {
                let rel = format!("{SUITES_DIR}/{}.json", file_stem(pid));
                suite.save(&run_dir.join(&rel))?;
                writeln!(out, "{pid}: {} tests -> {rel}", suite.tests.len())?;
                entries.push(ProblemEntry {
                    problem_id: pid.clone(),
                    status: "ok".into(),
                    suite: Some(rel),
                    tests: suite.tests.len(),
                    error: None,
                });
            }
            Err(e) => {
                let fatal_here = is_fatal(&e);
                if fatal_here {
                    log::error!("{pid}: {e}");
                } else {
                    log::warn!("{pid}: skipped: {e}");
                }
                writeln!(out, "{pid}: failed: {e}")?;
                entries.push(ProblemEntry {
                    problem_id: pid.clone(),
                    status: "failed".into(),
                    suite: None,
                    tests: 0,
                    error: Some(e.to_string()),
                });
                if fatal_here && fatal.is_none() {
                    fatal = Some(e);
                }
            }
        }
    }
    save_transcript(&transcript, &run_dir.join(TRANSCRIPT_FILE))?;

    if let Some(e) = fatal {
        writeln!(out, "run aborted: {e}; no manifest written")?;
        return Ok(EXIT_FAILURE);
    }
    let ok = entries.iter().filter(|e| e.status == "ok").count();
    let manifest = RunManifest {
        tool: "tcgen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: snapshot(settings),
        corpus: absolute(corpus_path(settings)?).display().to_string(),
        corpus_checksum: corpus.checksum(),
        seed: settings.seed,
        provider: settings.provider.to_string(),
        model: settings.model.clone(),
        template_versions: prompts.versions(),
        toolchain: harness.toolchain().describe(),
        transcript: TRANSCRIPT_FILE.into(),
        problems: entries,
        started_unix_ms,
        duration_ms: started.elapsed().as_millis(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&manifest_path, text.as_bytes())?;
    writeln!(
        out,
        "{ok} of {} problems generated; manifest at {}",
        problems.len(),
        manifest_path.display()
    )?;
    Ok(if ok > 0 || problems.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

/// `evaluate`: score every submission against the stored suites.
pub fn evaluate(
    settings: &Settings,
    suites_dir: Option<&Path>,
    report_dir: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> Result<i32> {
    let corpus = load(settings)?;
    let problems = selected_problems(settings, &corpus)?;
    let suites_dir = suites_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.out.join(SUITES_DIR));
    let report_dir = report_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.out.join(EVALUATION_DIR));
    let harness = harness(settings)?;
    let cap = settings.per_test_cap();

    let mut work = Vec::new();
    for pid in &problems {
        let path = suites_dir.join(format!("{}.json", file_stem(pid)));
        if !path.exists() {
            log::warn!("no suite for problem {pid} in {}; skipped", suites_dir.display());
            writeln!(out, "{pid}: no suite; skipped")?;
            continue;
        }
        match TestSuite::load(&path) {
            Ok(suite) if suite.tests.is_empty() => {
                log::warn!("suite for problem {pid} is empty; skipped");
                writeln!(out, "{pid}: empty suite; skipped")?;
            }
            Ok(suite) => work.push((pid.clone(), suite)),
            Err(e) => {
                log::warn!("{e}; skipped");
                writeln!(out, "{pid}: unreadable suite; skipped")?;
            }
        }
    }

    let results = bounded_map(
        &work,
        settings.parallel_problems,
        |(pid, suite)| {
            let problem = corpus.problem(pid).expect("selected problems exist");
            metrics::score_problem(problem, corpus.submissions_for(pid), suite, &harness, cap)
        },
        Result::is_err,
    );
    let mut reports: Vec<ScoreReport> = Vec::new();
    for ((pid, _), result) in work.iter().zip(results) {
        match result {
            Some(Ok(mut r)) => reports.append(&mut r),
            Some(Err(e)) => bail!("problem {pid}: {e}"),
            None => bail!("evaluation aborted before problem {pid}"),
        }
    }
    metrics::emit_report(&report_dir, &reports, settings.bins)?;
    write!(out, "{}", render_tables(&reports, settings.bins)?)?;
    writeln!(out, "reports written to {}", report_dir.display())?;
    Ok(EXIT_OK)
}

/// `report`: re-aggregate an existing `report.csv`.
pub fn report(
    settings: &Settings,
    input: Option<&Path>,
    report_dir: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> Result<i32> {
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.out.join(EVALUATION_DIR).join(metrics::REPORT_FILE));
    let reports = metrics::load_reports(&input)?;
    if let Some(dir) = report_dir {
        metrics::emit_report(dir, &reports, settings.bins)?;
    }
    write!(out, "{}", render_tables(&reports, settings.bins)?)?;
    Ok(EXIT_OK)
}

/// Plain-text aggregate and bin tables, means at 4 decimals.
pub fn render_tables(reports: &[ScoreReport], bins: usize) -> Result<String> {
    let mut s = String::new();
    let summary = metrics::summarize(reports);
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let _ = writeln!(
        s,
        "submissions scored: {}  problems: {}",
        summary.reports, summary.problems
    );
    let _ = writeln!(
        s,
        "mean error: {} (pooled over submissions), {} (mean of problem means)",
        fmt(summary.pooled_mean_error),
        fmt(summary.problem_mean_error)
    );
    for grouping in [Grouping::Assignment, Grouping::Problem] {
        let _ = writeln!(
            s,
            "\n{:<12} {:>6} {:>9} {:>12} {:>14}",
            grouping.name(),
            "count",
            "problems",
            "mean_error",
            "problem_mean"
        );
        for row in metrics::aggregate(reports, grouping) {
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>9} {:>12.4} {:>14.4}",
                row.key, row.count, row.problems, row.mean_error, row.problem_mean_error
            );
        }
    }
    let _ = writeln!(s, "\n{:<13} {:>6} {:>12}", "true score", "count", "mean_error");
    for b in metrics::bin_by_true_score(reports, bins)? {
        let close = if b.index + 1 == bins { ']' } else { ')' };
        let _ = writeln!(
            s,
            "[{:.2}, {:.2}{close} {:>6} {:>12}",
            b.lower,
            b.upper,
            b.count,
            fmt(b.mean_error)
        );
    }
    Ok(s)
}
