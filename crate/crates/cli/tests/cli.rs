use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use tcgen_cli::config::{ProviderKind, Settings};
use tcgen_cli::{run_with, Cli};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Runs in-process with an empty environment; returns (exit code, stdout).
fn run(args: &[&str]) -> (i32, String) {
    let mut argv = vec!["tcgen"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).expect("arguments parse");
    let mut out = Vec::new();
    let code = run_with(&cli, |_| None, &mut out);
    (code, String::from_utf8(out).unwrap())
}

/// Writes a one-problem table corpus with the given submission scores.
fn tiny_corpus(dir: &Path, scores: &[&str]) -> PathBuf {
    let corpus = dir.join("corpus");
    fs::create_dir_all(corpus.join("sources")).unwrap();
    fs::write(
        corpus.join("problems.csv"),
        "problem_id,assignment_id,method_name,param_types,return_type,statement\n\
         1,9,twice,int,int,Return twice n.\n",
    )
    .unwrap();
    let mut subs = String::from("problem_id,assignment_id,student_id,attempt_index,score,source_path\n");
    for (i, s) in scores.iter().enumerate() {
        let file = format!("sources/s{i}.java");
        fs::write(corpus.join(&file), "public int twice(int n) { return 2 * n; }\n").unwrap();
        subs.push_str(&format!("1,9,s{i},0,{s},{file}\n"));
    }
    fs::write(corpus.join("submissions.csv"), subs).unwrap();
    corpus
}

#[test]
fn validate_accepts_the_fixture_corpus() {
    let corpus = fixtures().join("corpus");
    let (code, out) = run(&["--corpus", corpus.to_str().unwrap(), "validate"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.trim_end().ends_with("0 errors"), "{out}");
}

#[test]
fn validate_cites_a_bad_score_row() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), &["0.5", "1.7"]);
    let (code, out) = run(&["--corpus", corpus.to_str().unwrap(), "validate"]);
    assert_eq!(code, 1);
    assert!(out.contains("submissions.csv:3"), "{out}");
    assert!(out.contains("score"), "{out}");
}

#[test]
fn validate_reports_a_missing_source_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), &["0.5", "1"]);
    fs::remove_file(corpus.join("sources/s1.java")).unwrap();
    let (code, out) = run(&["--corpus", corpus.to_str().unwrap(), "validate"]);
    assert_eq!(code, 1);
    assert!(out.contains("s1.java"), "{out}");
}

fn q_column(out: &str) -> String {
    let row = out.lines().nth(1).expect("one problem row");
    row.split_whitespace().skip(3).collect::<Vec<_>>().join(" ")
}

#[test]
fn infer_q_on_small_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let quarters = tiny_corpus(&dir.path().join("a"), &["0", "0.25", "0.5", "1"]);
    let (code, out) = run(&["--corpus", quarters.to_str().unwrap(), "infer-q"]);
    assert_eq!(code, 0);
    assert_eq!(q_column(&out), "4");

    let perfect = tiny_corpus(&dir.path().join("b"), &["1", "1", "1"]);
    let (_, out) = run(&["--corpus", perfect.to_str().unwrap(), "infer-q"]);
    assert_eq!(q_column(&out), "1");

    let (code, out) = run(&["--corpus", quarters.to_str().unwrap(), "--q-max", "2", "infer-q"]);
    assert_eq!(code, 0);
    assert!(q_column(&out).starts_with("infeasible"), "{out}");
}

#[test]
fn precedence_is_flag_then_env_then_file_then_default() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    fs::write(&file, "seed = 1\nk = 2\nsuite_size = 3\ncorpus = \"data\"\n").unwrap();
    let env = |key: &str| match key {
        "TCGEN_K" => Some("5".to_string()),
        "TCGEN_SUITE_SIZE" => Some("6".to_string()),
        _ => None,
    };
    let flags = [("suite_size", "8".to_string())];
    let s = Settings::resolve(Some(&file), env, &flags).unwrap();
    assert_eq!(s.seed, 1, "file");
    assert_eq!(s.k, 5, "env over file");
    assert_eq!(s.suite_size, 8, "flag over env");
    assert_eq!(s.bins, 10, "default");
    assert_eq!(
        s.corpus.as_deref(),
        Some(dir.path().join("data").as_path()),
        "relative to the file"
    );
}

#[test]
fn bad_values_are_usage_errors() {
    let corpus = fixtures().join("corpus");
    let (code, _) = run(&["--corpus", corpus.to_str().unwrap(), "--k=-1", "validate"]);
    assert_eq!(code, 2);
    let (code, _) = run(&["--corpus", corpus.to_str().unwrap(), "--provider", "mock", "generate"]);
    assert_eq!(code, 2, "mock provider without a script");
    let (code, _) = run(&["validate"]);
    assert_eq!(code, 2, "no corpus");
}

#[test]
fn unknown_flag_exits_two() {
    let status = Command::new(env!("CARGO_BIN_EXE_tcgen"))
        .args(["--no-such-flag", "validate"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_aborts_without_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let corpus = fixtures().join("corpus");
    let (code, _) = run(&[
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--provider",
        "http",
        "--base-url",
        "http://127.0.0.1:1/v1",
        "--retry-limit",
        "0",
        "--request-timeout-ms",
        "2000",
        "--problems",
        "45",
        "generate",
    ]);
    assert_eq!(code, 1);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn evaluate_with_no_suites_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let suites = dir.path().join("suites");
    fs::create_dir_all(&suites).unwrap();
    let corpus = fixtures().join("corpus");
    let (code, _) = run(&[
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--suites",
        suites.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report = fs::read_to_string(out.join("evaluation/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1, "header only: {report}");
}

/// Mock generation followed by evaluation and re-aggregation. Needs Java.
#[test]
fn mock_generate_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = fixtures().join("tcgen.toml");
    let base = [
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--problems",
        "45",
    ];
    let with = |cmd: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(cmd);
        run(&v)
    };

    let (code, _) = with(&["generate"]);
    assert_eq!(code, 0);
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("transcript.jsonl").is_file());
    let snapshot = Settings::resolve(Some(&out.join("config.toml")), |_| None, &[]).unwrap();
    assert_eq!(snapshot.provider, ProviderKind::Mock);
    assert_eq!(snapshot.seed, 7);
    let suite: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("suites/45.json")).unwrap()).unwrap();
    assert_eq!(suite["tests"].as_array().unwrap().len(), 4);

    let (code, table) = with(&["evaluate"]);
    assert_eq!(code, 0);
    assert!(table.contains("45"), "{table}");
    let report = fs::read_to_string(out.join("evaluation/report.csv")).unwrap();
    let s01_row = report
        .lines()
        .find(|l| l.starts_with("502,45,s01,0,"))
        .expect("s01 row");
    let fields: Vec<&str> = s01_row.split(',').collect();
    assert_eq!(&fields[4..7], &["0.5", "0.5", "0"]);

    let (code, again) = with(&["report"]);
    assert_eq!(code, 0);
    assert!(table.starts_with(&again), "{again}");
}
