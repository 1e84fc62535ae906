//! Student-code corpus ingestion and validation.
//!
//! Two on-disk layouts are accepted:
//!
//! * **Table** – a directory holding `submissions.csv`
//!   (`problem_id,assignment_id,student_id,attempt_index,score,source_path`)
//!   and `problems.csv`
//!   (`problem_id,assignment_id,method_name,param_types,return_type,statement`).
//!   `source_path` is relative to the directory and `param_types` is a
//!   comma-joined list of kind names.
//! * **Records** – a JSON Lines file where each line is either a `problem`
//!   or a `submission` record with the source inlined. This is also the
//!   layout [`save_records`] writes.
//!
//! Loading collects every row-level problem before failing, so a single
//! `validate` pass reports all of them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::value::ValueKind;

pub const SUBMISSIONS_FILE: &str = "submissions.csv";
pub const PROBLEMS_FILE: &str = "problems.csv";

/// Default tolerance when matching decimal scores to `p/q`.
pub const DEFAULT_SCORE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSignature {
    pub method_name: String,
    pub param_types: Vec<ValueKind>,
    pub return_type: ValueKind,
}

impl MethodSignature {
    /// Java declaration header, e.g. `int sum67(int[] nums)` (parameter
    /// names are synthesized).
    pub fn java_header(&self) -> String {
        let params: Vec<String> = self
            .param_types
            .iter()
            .enumerate()
            .map(|(i, k)| format!("{} arg{i}", k.java_type()))
            .collect();
        format!(
            "{} {}({})",
            self.return_type.java_type(),
            self.method_name,
            params.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub assignment_id: String,
    pub statement: String,
    pub signature: MethodSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub student_id: String,
    pub problem_id: String,
    pub attempt_index: u32,
    pub source: String,
    pub score: f64,
}

impl Submission {
    /// `student/attempt` label used in logs and reports.
    pub fn label(&self) -> String {
        format!("{}#{}", self.student_id, self.attempt_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub problems: BTreeMap<String, Problem>,
    pub submissions: BTreeMap<String, Vec<Submission>>,
}

impl Corpus {
    pub fn problem(&self, problem_id: &str) -> Option<&Problem> {
        self.problems.get(problem_id)
    }

    pub fn submissions_for(&self, problem_id: &str) -> &[Submission] {
        self.submissions.get(problem_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn submission_count(&self) -> usize {
        self.submissions.values().map(Vec::len).sum()
    }

    /// SHA-256 over the records serialization.
    pub fn checksum(&self) -> String {
        let mut buf = Vec::new();
        write_records(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Table,
    Records,
}

impl CorpusFormat {
    /// Directories are tables, anything else is a records file.
    pub fn detect(path: &Path) -> CorpusFormat {
        if path.is_dir() {
            CorpusFormat::Table
        } else {
            CorpusFormat::Records
        }
    }
}

/// One row-level problem found while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: Option<u64>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(column) = &self.column {
            write!(f, ": column `{column}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus has {} error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
}

impl CorpusError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            CorpusError::Invalid(d) => d.clone(),
            other => vec![Diagnostic {
                file: String::new(),
                line: None,
                column: None,
                message: other.to_string(),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InferError {
    #[error("no total test count q <= {q_max} fits all scores within {epsilon}")]
    Infeasible { q_max: u32, epsilon: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Loads and validates a corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "no such file or directory"),
        });
    }
    let mut builder = Builder::default();
    match format {
        CorpusFormat::Table => load_table(path, &mut builder)?,
        CorpusFormat::Records => load_records(path, &mut builder)?,
    }
    builder.finish()
}

/// One submission per student: the one with the highest attempt index,
/// ordered by student id.
pub fn final_submissions(corpus: &Corpus, problem_id: &str) -> Result<Vec<Submission>, CorpusError> {
    if !corpus.problems.contains_key(problem_id) {
        return Err(CorpusError::UnknownProblem(problem_id.to_string()));
    }
    let mut latest: BTreeMap<&str, &Submission> = BTreeMap::new();
    for sub in corpus.submissions_for(problem_id) {
        latest
            .entry(sub.student_id.as_str())
            .and_modify(|cur| {
                if sub.attempt_index > cur.attempt_index {
                    *cur = sub;
                }
            })
            .or_insert(sub);
    }
    Ok(latest.into_values().cloned().collect())
}

/// Smallest `q <= q_max` such that every score lies within `epsilon` of
/// some `p/q` with `0 <= p <= q`.
pub fn infer_total_tests(scores: &[f64], q_max: u32, epsilon: f64) -> Result<u32, InferError> {
    if q_max == 0 {
        return Err(InferError::InvalidArgument("q_max must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(InferError::InvalidArgument("epsilon must be positive".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(InferError::InvalidArgument(format!("score {bad} outside [0, 1]")));
    }
    (1..=q_max)
        .find(|&q| {
            let qf = f64::from(q);
            scores.iter().all(|&s| {
                let p = (s * qf).round();
                (0.0..=qf).contains(&p) && (s - p / qf).abs() <= epsilon
            })
        })
        .ok_or_else(|| InferError::Infeasible {
            q_max,
            epsilon: epsilon.to_string(),
        })
}

/// Writes the corpus in the records layout.
pub fn save_records(corpus: &Corpus, path: &Path) -> io::Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    write_records(corpus, &mut file)?;
    file.flush()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Problem(Problem),
    Submission(Submission),
}

fn write_records<W: Write>(corpus: &Corpus, out: &mut W) -> io::Result<()> {
    for problem in corpus.problems.values() {
        serde_json::to_writer(&mut *out, &Record::Problem(problem.clone()))?;
        out.write_all(b"\n")?;
    }
    for subs in corpus.submissions.values() {
        for sub in subs {
            serde_json::to_writer(&mut *out, &Record::Submission(sub.clone()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Accumulates rows and diagnostics, then checks cross-row invariants.
#[derive(Default)]
struct Builder {
    problems: BTreeMap<String, Problem>,
    /// `(file, line)` for each submission, for cross-row diagnostics.
    submissions: Vec<(Submission, String, Option<u64>, Option<String>)>,
    diagnostics: Vec<Diagnostic>,
}

impl Builder {
    fn error(&mut self, file: &str, line: Option<u64>, column: Option<&str>, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            file: file.to_string(),
            line,
            column: column.map(str::to_string),
            message: message.into(),
        });
    }

    fn add_problem(&mut self, problem: Problem, file: &str, line: Option<u64>) {
        if problem.problem_id.trim().is_empty() {
            self.error(file, line, Some("problem_id"), "empty problem id");
            return;
        }
        if problem.statement.trim().is_empty() {
            self.error(file, line, Some("statement"), "empty problem statement");
        }
        if problem.signature.param_types.is_empty() {
            self.error(file, line, Some("param_types"), "method takes no parameters");
        }
        if problem.signature.method_name.trim().is_empty() {
            self.error(file, line, Some("method_name"), "empty method name");
        }
        if self.problems.contains_key(&problem.problem_id) {
            self.error(
                file,
                line,
                Some("problem_id"),
                format!("duplicate problem `{}`", problem.problem_id),
            );
            return;
        }
        self.problems.insert(problem.problem_id.clone(), problem);
    }

    fn add_submission(&mut self, sub: Submission, assignment_id: Option<String>, file: &str, line: Option<u64>) {
        let mut ok = true;
        if !(0.0..=1.0).contains(&sub.score) {
            self.error(file, line, Some("score"), format!("score {} outside [0, 1]", sub.score));
            ok = false;
        }
        if sub.source.trim().is_empty() {
            self.error(file, line, Some("source"), "empty source");
            ok = false;
        }
        if sub.student_id.trim().is_empty() {
            self.error(file, line, Some("student_id"), "empty student id");
            ok = false;
        }
        if ok {
            self.submissions.push((sub, file.to_string(), line, assignment_id));
        }
    }

    fn finish(mut self) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus {
            submissions: self.problems.keys().map(|id| (id.clone(), Vec::new())).collect(),
            problems: std::mem::take(&mut self.problems),
        };
        let mut seen = HashSet::new();
        let mut pending = Vec::new();
        for (sub, file, line, assignment) in std::mem::take(&mut self.submissions) {
            let Some(problem) = corpus.problems.get(&sub.problem_id) else {
                pending.push(Diagnostic {
                    file,
                    line,
                    column: Some("problem_id".into()),
                    message: format!("unknown problem `{}`", sub.problem_id),
                });
                continue;
            };
            if let Some(assignment) = assignment {
                if assignment != problem.assignment_id {
                    pending.push(Diagnostic {
                        file: file.clone(),
                        line,
                        column: Some("assignment_id".into()),
                        message: format!(
                            "assignment `{assignment}` does not match problem `{}` (assignment `{}`)",
                            problem.problem_id, problem.assignment_id
                        ),
                    });
                    continue;
                }
            }
            let key = (sub.student_id.clone(), sub.problem_id.clone(), sub.attempt_index);
            if !seen.insert(key) {
                pending.push(Diagnostic {
                    file,
                    line,
                    column: Some("attempt_index".into()),
                    message: format!(
                        "duplicate submission (student `{}`, problem `{}`, attempt {})",
                        sub.student_id, sub.problem_id, sub.attempt_index
                    ),
                });
                continue;
            }
            corpus
                .submissions
                .get_mut(&sub.problem_id)
                .expect("problem entry exists")
                .push(sub);
        }
        self.diagnostics.extend(pending);
        if self.diagnostics.is_empty() {
            Ok(corpus)
        } else {
            Err(CorpusError::Invalid(self.diagnostics))
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_param_types(text: &str) -> Result<Vec<ValueKind>, String> {
    text.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| part.parse::<ValueKind>().map_err(|e| e.to_string()))
        .collect()
}

fn load_table(dir: &Path, builder: &mut Builder) -> Result<(), CorpusError> {
    let problems_path = dir.join(PROBLEMS_FILE);
    let submissions_path = dir.join(SUBMISSIONS_FILE);
    let problems_text = read_to_string(&problems_path)?;
    let submissions_text = read_to_string(&submissions_path)?;

    let mut reader = csv::Reader::from_reader(problems_text.as_bytes());
    let header = csv_header(&mut reader, PROBLEMS_FILE, builder);
    for record in reader.records() {
        let (line, record) = match record {
            Ok(r) => (r.position().map(|p| p.line()), r),
            Err(e) => {
                let line = e.position().map(|p| p.line());
                builder.error(PROBLEMS_FILE, line, None, format!("malformed row: {e}"));
                continue;
            }
        };
        let field = |name: &str| column(&header, &record, name);
        let (
            Some(problem_id),
            Some(assignment_id),
            Some(method_name),
            Some(param_types),
            Some(return_type),
            Some(statement),
        ) = (
            field("problem_id"),
            field("assignment_id"),
            field("method_name"),
            field("param_types"),
            field("return_type"),
            field("statement"),
        )
        else {
            builder.error(PROBLEMS_FILE, line, None, "malformed row: missing column");
            continue;
        };
        let params = match parse_param_types(param_types) {
            Ok(p) => p,
            Err(reason) => {
                builder.error(PROBLEMS_FILE, line, Some("param_types"), reason);
                continue;
            }
        };
        let ret = match return_type.parse::<ValueKind>() {
            Ok(k) => k,
            Err(reason) => {
                builder.error(PROBLEMS_FILE, line, Some("return_type"), reason.to_string());
                continue;
            }
        };
        builder.add_problem(
            Problem {
                problem_id: problem_id.trim().to_string(),
                assignment_id: assignment_id.trim().to_string(),
                statement: statement.to_string(),
                signature: MethodSignature {
                    method_name: method_name.trim().to_string(),
                    param_types: params,
                    return_type: ret,
                },
            },
            PROBLEMS_FILE,
            line,
        );
    }

    let mut reader = csv::Reader::from_reader(submissions_text.as_bytes());
    let header = csv_header(&mut reader, SUBMISSIONS_FILE, builder);
    for record in reader.records() {
        let (line, record) = match record {
            Ok(r) => (r.position().map(|p| p.line()), r),
            Err(e) => {
                let line = e.position().map(|p| p.line());
                builder.error(SUBMISSIONS_FILE, line, None, format!("malformed row: {e}"));
                continue;
            }
        };
        let field = |name: &str| column(&header, &record, name);
        let (Some(problem_id), Some(assignment_id), Some(student_id), Some(attempt), Some(score), Some(source_path)) = (
            field("problem_id"),
            field("assignment_id"),
            field("student_id"),
            field("attempt_index"),
            field("score"),
            field("source_path"),
        ) else {
            builder.error(SUBMISSIONS_FILE, line, None, "malformed row: missing column");
            continue;
        };
        let attempt_index = match attempt.trim().parse::<u32>() {
            Ok(a) => a,
            Err(_) => {
                builder.error(
                    SUBMISSIONS_FILE,
                    line,
                    Some("attempt_index"),
                    format!("`{attempt}` is not a nonnegative integer"),
                );
                continue;
            }
        };
        let score = match score.trim().parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                builder.error(
                    SUBMISSIONS_FILE,
                    line,
                    Some("score"),
                    format!("`{score}` is not a number"),
                );
                continue;
            }
        };
        let full_path = dir.join(source_path.trim());
        let source = match fs::read_to_string(&full_path) {
            Ok(s) => s,
            Err(e) => {
                builder.error(
                    SUBMISSIONS_FILE,
                    line,
                    Some("source_path"),
                    format!("cannot read source file {}: {e}", full_path.display()),
                );
                continue;
            }
        };
        builder.add_submission(
            Submission {
                student_id: student_id.trim().to_string(),
                problem_id: problem_id.trim().to_string(),
                attempt_index,
                source,
                score,
            },
            Some(assignment_id.trim().to_string()),
            SUBMISSIONS_FILE,
            line,
        );
    }
    Ok(())
}

fn csv_header(reader: &mut csv::Reader<&[u8]>, file: &str, builder: &mut Builder) -> Vec<String> {
    match reader.headers() {
        Ok(h) => h.iter().map(|c| c.trim().to_string()).collect(),
        Err(e) => {
            builder.error(file, Some(1), None, format!("unreadable header: {e}"));
            Vec::new()
        }
    }
}

fn column<'r>(header: &[String], record: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
    let idx = header.iter().position(|h| h == name)?;
    record.get(idx)
}

fn load_records(path: &Path, builder: &mut Builder) -> Result<(), CorpusError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = Some(idx as u64 + 1);
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line) {
            Ok(Record::Problem(p)) => builder.add_problem(p, &file_name, line_no),
            Ok(Record::Submission(s)) => builder.add_submission(s, None, &file_name, line_no),
            Err(e) => builder.error(&file_name, line_no, None, format!("malformed record: {e}")),
        }
    }
    Ok(())
}
