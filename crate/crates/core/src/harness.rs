//! Compiler-in-the-loop executor.
//!
//! A student method is wrapped in a synthesized Java driver, compiled once
//! per (submission, suite), and each test then runs in its own JVM process
//! under a wall-clock cap. Outcomes are classified as pass, fail, compile
//! error, runtime error or timeout.
//!
//! Two compiler back ends are supported: a regular `javac`, and Janino
//! running on a plain JRE (see `scripts/setup-java-toolchain.sh`).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::dataset::MethodSignature;
use crate::prompts::TestCase;
use crate::value::TypedValue;

/// Default per-test wall-clock cap.
pub const DEFAULT_CAP: Duration = Duration::from_secs(5);
const COMPILE_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_CAPTURE: usize = 256 * 1024;
const TRACE_HEAD_LINES: usize = 6;

const DRIVER_CLASS: &str = "Main";
const STUDENT_CLASS: &str = "Solution";
const JANINO_MAIN: &str = "org.codehaus.commons.compiler.samples.CompilerDemo";

/// Environment variable naming the managed toolchain directory.
pub const TOOLCHAIN_DIR_ENV: &str = "TCGEN_TOOLCHAIN_DIR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail { actual: String },
    CompileError { diagnostics: String },
    RuntimeError { message: String },
    Timeout { cap: Duration },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail { .. } => "fail",
            Outcome::CompileError { .. } => "compile_error",
            Outcome::RuntimeError { .. } => "runtime_error",
            Outcome::Timeout { .. } => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub case_id: String,
    pub outcome: Outcome,
}

impl ExecutionResult {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

/// What a program did on one test, before comparison with the expected
/// output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    /// Standard output with trailing whitespace trimmed.
    Output(String),
    CompileError(String),
    RuntimeError(String),
    Timeout(Duration),
}

impl Observation {
    /// Pass iff the output equals the expected value's canonical text.
    pub fn judge(&self, expected: &TypedValue) -> Outcome {
        match self {
            Observation::Output(actual) => {
                if actual.trim_end() == expected.canonical().trim_end() {
                    Outcome::Pass
                } else {
                    Outcome::Fail {
                        actual: actual.trim_end().to_string(),
                    }
                }
            }
            Observation::CompileError(d) => Outcome::CompileError { diagnostics: d.clone() },
            Observation::RuntimeError(m) => Outcome::RuntimeError { message: m.clone() },
            Observation::Timeout(cap) => Outcome::Timeout { cap: *cap },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub submission: String,
    pub results: Vec<ExecutionResult>,
    pub pass_count: usize,
    pub compiled: bool,
}

impl SuiteRun {
    pub fn from_observations(submission: &str, tests: &[TestCase], observations: &[Observation]) -> SuiteRun {
        let results: Vec<ExecutionResult> = tests
            .iter()
            .zip(observations)
            .map(|(t, o)| ExecutionResult {
                case_id: t.case_id.clone(),
                outcome: o.judge(&t.expected),
            })
            .collect();
        SuiteRun {
            submission: submission.to_string(),
            pass_count: results.iter().filter(|r| r.passed()).count(),
            compiled: !observations.iter().all(|o| matches!(o, Observation::CompileError(_))),
            results,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("Java toolchain not found: {0}")]
    ToolchainMissing(String),
    #[error("cannot spawn {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("workspace I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("test suite is empty")]
    EmptySuite,
    #[error("test {case} does not match the method signature")]
    Signature { case: String },
    #[error("test {0} is not part of this compiled unit")]
    UnknownCase(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compiler {
    Javac(PathBuf),
    /// Janino on the classpath of the runtime `java`.
    Janino {
        classpath: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    pub java: PathBuf,
    pub compiler: Compiler,
}

impl Toolchain {
    pub fn javac(javac: impl Into<PathBuf>, java: impl Into<PathBuf>) -> Self {
        Toolchain {
            java: java.into(),
            compiler: Compiler::Javac(javac.into()),
        }
    }

    pub fn janino(java: impl Into<PathBuf>, classpath: impl Into<String>) -> Self {
        Toolchain {
            java: java.into(),
            compiler: Compiler::Janino {
                classpath: classpath.into(),
            },
        }
    }

    /// A Janino toolchain laid out by the setup script in `dir`.
    pub fn managed(dir: &Path) -> Option<Self> {
        let java = dir.join("jre/bin/java");
        let janino = dir.join("janino.jar");
        let commons = dir.join("commons-compiler.jar");
        (java.is_file() && janino.is_file() && commons.is_file())
            .then(|| Toolchain::janino(java, format!("{}:{}", janino.display(), commons.display())))
    }

    /// `JAVA_HOME`, then `PATH`, then the managed toolchain directory.
    pub fn discover() -> Result<Self, HarnessError> {
        if let Some(home) = std::env::var_os("JAVA_HOME") {
            let bin = PathBuf::from(home).join("bin");
            if bin.join("javac").is_file() && bin.join("java").is_file() {
                return Ok(Toolchain::javac(bin.join("javac"), bin.join("java")));
            }
        }
        if let (Some(javac), Some(java)) = (find_on_path("javac"), find_on_path("java")) {
            return Ok(Toolchain::javac(javac, java));
        }
        let managed = managed_dir();
        if let Some(tc) = managed.as_deref().and_then(Toolchain::managed) {
            return Ok(tc);
        }
        Err(HarnessError::ToolchainMissing(format!(
            "no javac under JAVA_HOME or on PATH, and no managed toolchain in {} \
             (run scripts/setup-java-toolchain.sh)",
            managed
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "$HOME/.cache/tcgen/java".into())
        )))
    }

    pub fn describe(&self) -> String {
        match &self.compiler {
            Compiler::Javac(javac) => format!("javac {} / java {}", javac.display(), self.java.display()),
            Compiler::Janino { classpath } => format!("janino {classpath} / java {}", self.java.display()),
        }
    }
}

fn managed_dir() -> Option<PathBuf> {
    std::env::var_os(TOOLCHAIN_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache/tcgen/java")))
}

fn find_on_path(program: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|candidate| candidate.is_file())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessConfig {
    pub per_test_cap: Duration,
    /// Upper bound on concurrent test processes per evaluation.
    pub workers: usize,
    /// Parent for per-run work directories; system temp when `None`.
    pub work_root: Option<PathBuf>,
    /// When set, per-run directories (sources, classes, logs) are created
    /// here and kept.
    pub log_dir: Option<PathBuf>,
    pub jvm_args: Vec<String>,
    /// Reuse observations of identical (code, inputs, cap) triples. Sound
    /// for deterministic student code, which is what the corpus holds.
    pub cache: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            per_test_cap: DEFAULT_CAP,
            workers: thread::available_parallelism().map(|n| n.get().min(4)).unwrap_or(1),
            work_root: None,
            log_dir: None,
            cache: true,
            jvm_args: vec![
                "-Xshare:auto".into(),
                "-XX:TieredStopAtLevel=1".into(),
                "-XX:+UseSerialGC".into(),
                "-Dstdout.encoding=UTF-8".into(),
                "-Dfile.encoding=UTF-8".into(),
            ],
        }
    }
}

/// Synthesizes a driver running a single test.
pub fn synthesize_driver(signature: &MethodSignature, source: &str, test: &TestCase) -> Result<String, HarnessError> {
    synthesize_suite_driver(signature, source, std::slice::from_ref(test))
}

/// Synthesizes one driver unit covering `tests`; the test to run is chosen
/// by its index, passed as the first program argument.
pub fn synthesize_suite_driver(
    signature: &MethodSignature,
    source: &str,
    tests: &[TestCase],
) -> Result<String, HarnessError> {
    let mut out = String::new();
    out.push_str("import java.util.*;\nimport java.io.*;\n\n");
    let _ = writeln!(out, "class {STUDENT_CLASS} {{");
    out.push_str(source.trim_end());
    out.push_str("\n}\n\n");
    let _ = writeln!(out, "public class {DRIVER_CLASS} {{");
    out.push_str(
        "    static String render(int v) { return String.valueOf(v); }\n\
         \x20   static String render(boolean v) { return String.valueOf(v); }\n\
         \x20   static String render(String v) { return String.valueOf(v); }\n\
         \x20   static String render(int[] v) { return Arrays.toString(v); }\n\n",
    );
    for (idx, test) in tests.iter().enumerate() {
        if !test.conforms_to(signature) {
            return Err(HarnessError::Signature {
                case: test.case_id.clone(),
            });
        }
        let args: Vec<String> = test.inputs.iter().map(TypedValue::java_literal).collect();
        let _ = writeln!(
            out,
            "    static String case{idx}() throws Throwable {{ return render(new {STUDENT_CLASS}().{}({})); }}",
            signature.method_name,
            args.join(", ")
        );
    }
    out.push_str("\n    public static void main(String[] args) throws Throwable {\n");
    out.push_str("        int which = args.length > 0 ? Integer.parseInt(args[0]) : 0;\n");
    out.push_str("        PrintStream out = System.out;\n");
    out.push_str("        System.setOut(new PrintStream(new ByteArrayOutputStream()));\n");
    out.push_str("        String result = null;\n");
    out.push_str("        switch (which) {\n");
    for idx in 0..tests.len() {
        let _ = writeln!(out, "            case {idx}: result = case{idx}(); break;");
    }
    out.push_str("            default: throw new IllegalArgumentException(\"no test \" + which);\n");
    out.push_str("        }\n");
    out.push_str("        System.setOut(out);\n");
    out.push_str("        out.println(result);\n");
    out.push_str("        out.flush();\n");
    out.push_str("    }\n}\n");
    Ok(out)
}

/// Compiled classes for one driver unit.
#[derive(Debug)]
pub struct CompiledUnit {
    class_dir: PathBuf,
    case_ids: Vec<String>,
}

impl CompiledUnit {
    pub fn class_dir(&self) -> &Path {
        &self.class_dir
    }
}

#[derive(Debug)]
pub enum CompileOutcome {
    Compiled(CompiledUnit),
    Failed { diagnostics: String },
}

struct Captured {
    status: Option<ExitStatus>,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

/// Java compile-and-run executor.
pub struct Harness {
    toolchain: Toolchain,
    config: HarnessConfig,
    run_counter: AtomicU64,
    cache: Mutex<HashMap<String, Observation>>,
}

impl Harness {
    pub fn new(toolchain: Toolchain, config: HarnessConfig) -> Self {
        Harness {
            toolchain,
            config,
            run_counter: AtomicU64::new(0),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn toolchain(&self) -> &Toolchain {
        &self.toolchain
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    /// Writes `driver_source` into `workdir` and compiles it there.
    pub fn compile(&self, driver_source: &str, workdir: &Path) -> Result<CompileOutcome, HarnessError> {
        self.compile_cases(driver_source, workdir, Vec::new())
    }

    fn compile_cases(
        &self,
        driver_source: &str,
        workdir: &Path,
        case_ids: Vec<String>,
    ) -> Result<CompileOutcome, HarnessError> {
        let src = workdir.join(format!("{DRIVER_CLASS}.java"));
        let class_dir = workdir.join("classes");
        fs::create_dir_all(&class_dir)?;
        fs::write(&src, driver_source)?;
        let mut cmd = match &self.toolchain.compiler {
            Compiler::Javac(javac) => {
                let mut c = Command::new(javac);
                c.args(["-encoding", "UTF-8", "-nowarn", "-d"])
                    .arg(&class_dir)
                    .arg(&src);
                c
            }
            Compiler::Janino { classpath } => {
                let mut c = Command::new(&self.toolchain.java);
                c.args(&self.config.jvm_args)
                    .arg("-cp")
                    .arg(classpath)
                    .arg(JANINO_MAIN)
                    .arg("-d")
                    .arg(&class_dir)
                    .arg(&src);
                c
            }
        };
        cmd.current_dir(workdir);
        let captured = run_capped(cmd, COMPILE_TIMEOUT)?;
        write_log(&workdir.join("compile.log"), &captured);
        match captured.status {
            Some(status) if status.success() => Ok(CompileOutcome::Compiled(CompiledUnit { class_dir, case_ids })),
            Some(_) => {
                let mut diagnostics = captured.stderr.trim().to_string();
                if diagnostics.is_empty() {
                    diagnostics = captured.stdout.trim().to_string();
                }
                Ok(CompileOutcome::Failed { diagnostics })
            }
            None => Ok(CompileOutcome::Failed {
                diagnostics: format!("compiler did not finish within {COMPILE_TIMEOUT:?}"),
            }),
        }
    }

    /// Runs one test of a compiled unit in a fresh JVM.
    pub fn run_one(
        &self,
        unit: &CompiledUnit,
        test: &TestCase,
        cap: Duration,
    ) -> Result<ExecutionResult, HarnessError> {
        let index = if unit.case_ids.is_empty() {
            0
        } else {
            unit.case_ids
                .iter()
                .position(|id| *id == test.case_id)
                .ok_or_else(|| HarnessError::UnknownCase(test.case_id.clone()))?
        };
        let observation = self.run_index(unit, index, cap, None)?;
        Ok(ExecutionResult {
            case_id: test.case_id.clone(),
            outcome: observation.judge(&test.expected),
        })
    }

    fn run_index(
        &self,
        unit: &CompiledUnit,
        index: usize,
        cap: Duration,
        log: Option<&Path>,
    ) -> Result<Observation, HarnessError> {
        let mut cmd = Command::new(&self.toolchain.java);
        cmd.args(&self.config.jvm_args)
            .arg("-cp")
            .arg(&unit.class_dir)
            .arg(DRIVER_CLASS)
            .arg(index.to_string());
        if let Some(dir) = unit.class_dir.parent() {
            cmd.current_dir(dir);
        }
        let captured = run_capped(cmd, cap)?;
        if let Some(path) = log {
            write_log(path, &captured);
        }
        Ok(match captured.status {
            None => Observation::Timeout(cap),
            Some(status) if status.success() => Observation::Output(captured.stdout.trim_end().to_string()),
            Some(status) => Observation::RuntimeError(trace_head(&captured.stderr, status)),
        })
    }

    fn workdir(&self, label: &str) -> Result<WorkDir, HarnessError> {
        let n = self.run_counter.fetch_add(1, Ordering::SeqCst);
        let prefix = format!("{}-{n}-", sanitize(label));
        if let Some(dir) = &self.config.log_dir {
            fs::create_dir_all(dir)?;
            let path = tempfile::Builder::new().prefix(&prefix).tempdir_in(dir)?.keep();
            return Ok(WorkDir::Kept(path));
        }
        let builder = {
            let mut b = tempfile::Builder::new();
            b.prefix(&prefix);
            b
        };
        let dir = match &self.config.work_root {
            Some(root) => {
                fs::create_dir_all(root)?;
                builder.tempdir_in(root)?
            }
            None => builder.tempdir()?,
        };
        Ok(WorkDir::Temp(dir))
    }

    /// Raw behavior of `source` on each test, in input order.
    pub fn observe(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<Vec<Observation>, HarnessError> {
        if tests.is_empty() {
            return Err(HarnessError::EmptySuite);
        }
        if !self.config.cache {
            return self.observe_uncached(label, source, signature, tests, cap);
        }
        let keys: Vec<String> = tests.iter().map(|t| cache_key(signature, source, t, cap)).collect();
        let mut found: Vec<Option<Observation>> = {
            let cache = self.cache.lock().expect("cache lock");
            keys.iter().map(|k| cache.get(k).cloned()).collect()
        };
        let missing: Vec<usize> = (0..tests.len()).filter(|&i| found[i].is_none()).collect();
        if !missing.is_empty() {
            let subset: Vec<TestCase> = missing.iter().map(|&i| tests[i].clone()).collect();
            let fresh = self.observe_uncached(label, source, signature, &subset, cap)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (&i, obs) in missing.iter().zip(fresh) {
                cache.insert(keys[i].clone(), obs.clone());
                found[i] = Some(obs);
            }
        }
        Ok(found.into_iter().map(|o| o.expect("every test observed")).collect())
    }

    fn observe_uncached(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<Vec<Observation>, HarnessError> {
        let work = self.workdir(label)?;
        let root = work.path();
        let driver = synthesize_suite_driver(signature, source, tests)?;
        let case_ids: Vec<String> = tests.iter().map(|t| t.case_id.clone()).collect();
        match self.compile_cases(&driver, root, case_ids)? {
            CompileOutcome::Compiled(unit) => {
                let units: Vec<(&CompiledUnit, usize)> = (0..tests.len()).map(|i| (&unit, i)).collect();
                self.run_all(&units, cap, root)
            }
            CompileOutcome::Failed { diagnostics } => {
                self.observe_per_test(signature, source, tests, cap, root, diagnostics)
            }
        }
    }

    /// Fallback when the suite unit does not compile: if a single-test
    /// driver compiles, the failure is test-specific and every test gets
    /// its own unit; otherwise the student code itself does not compile.
    fn observe_per_test(
        &self,
        signature: &MethodSignature,
        source: &str,
        tests: &[TestCase],
        cap: Duration,
        root: &Path,
        suite_diagnostics: String,
    ) -> Result<Vec<Observation>, HarnessError> {
        let mut units = Vec::with_capacity(tests.len());
        for (i, test) in tests.iter().enumerate() {
            let dir = root.join(format!("case{i}"));
            fs::create_dir_all(&dir)?;
            let driver = synthesize_driver(signature, source, test)?;
            match self.compile_cases(&driver, &dir, Vec::new())? {
                CompileOutcome::Compiled(unit) => units.push(Ok(unit)),
                CompileOutcome::Failed { diagnostics } => {
                    if i == 0 {
                        return Ok(vec![Observation::CompileError(suite_diagnostics); tests.len()]);
                    }
                    units.push(Err(diagnostics));
                }
            }
        }
        let runnable: Vec<(&CompiledUnit, usize)> =
            units.iter().filter_map(|u| u.as_ref().ok()).map(|u| (u, 0)).collect();
        let mut ran = self.run_all(&runnable, cap, root)?.into_iter();
        Ok(units
            .iter()
            .map(|u| match u {
                Ok(_) => ran.next().expect("one observation per runnable unit"),
                Err(d) => Observation::CompileError(d.clone()),
            })
            .collect())
    }

    /// Runs `(unit, index)` jobs on a bounded pool; results keep job order.
    fn run_all(
        &self,
        jobs: &[(&CompiledUnit, usize)],
        cap: Duration,
        root: &Path,
    ) -> Result<Vec<Observation>, HarnessError> {
        let slots: Vec<Mutex<Option<Result<Observation, HarnessError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.workers.max(1).min(jobs.len().max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let job = next.fetch_add(1, Ordering::SeqCst);
                    let Some((unit, index)) = jobs.get(job) else { break };
                    let log = root.join(format!("run-{job}.log"));
                    let result = self.run_index(unit, *index, cap, Some(&log));
                    *slots[job].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot lock").expect("every job ran"))
            .collect()
    }

    /// Compiles `source` with a driver for `tests` and runs every test.
    pub fn evaluate_suite(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<SuiteRun, HarnessError> {
        let observations = self.observe(label, source, signature, tests, cap)?;
        Ok(SuiteRun::from_observations(label, tests, &observations))
    }
}

/// Anything that can run a submission against tests. [`Harness`] is the
/// real implementation; tests substitute in-process fakes.
pub trait Executor: Sync {
    fn observe(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<Vec<Observation>, HarnessError>;

    fn evaluate_suite(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<SuiteRun, HarnessError> {
        let observations = self.observe(label, source, signature, tests, cap)?;
        Ok(SuiteRun::from_observations(label, tests, &observations))
    }
}

impl Executor for Harness {
    fn observe(
        &self,
        label: &str,
        source: &str,
        signature: &MethodSignature,
        tests: &[TestCase],
        cap: Duration,
    ) -> Result<Vec<Observation>, HarnessError> {
        Harness::observe(self, label, source, signature, tests, cap)
    }
}

enum WorkDir {
    Temp(tempfile::TempDir),
    Kept(PathBuf),
}

impl WorkDir {
    fn path(&self) -> &Path {
        match self {
            WorkDir::Temp(t) => t.path(),
            WorkDir::Kept(p) => p,
        }
    }
}

fn cache_key(signature: &MethodSignature, source: &str, test: &TestCase, cap: Duration) -> String {
    let mut h = Sha256::new();
    for part in [
        signature.java_header().as_str(),
        source,
        &test.input_key(),
        &cap.as_millis().to_string(),
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn sanitize(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .take(40)
        .collect();
    if s.is_empty() {
        "run".into()
    } else {
        s
    }
}

fn read_capped<R: Read>(mut reader: R) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if buf.len() < MAX_CAPTURE {
                    let room = MAX_CAPTURE - buf.len();
                    buf.extend_from_slice(&chunk[..n.min(room)]);
                }
            }
        }
    }
    String::from_utf8_lossy(&buf).into_owned()
}

/// Spawns `cmd`, kills it once `cap` elapses. `status` is `None` on timeout.
fn run_capped(mut cmd: Command, cap: Duration) -> Result<Captured, HarnessError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    // Own process group, so a timeout also kills anything the program forked.
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            HarnessError::ToolchainMissing(format!("{program} not found"))
        } else {
            HarnessError::Spawn {
                program: program.clone(),
                source,
            }
        }
    })?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || read_capped(stdout));
    let err_reader = thread::spawn(move || read_capped(stderr));
    let status = match child.wait_timeout(cap)? {
        Some(status) => Some(status),
        None => {
            kill_tree(&mut child);
            let _ = child.wait();
            None
        }
    };
    let elapsed = started.elapsed();
    Ok(Captured {
        status,
        stdout: out_reader.join().unwrap_or_default(),
        stderr: err_reader.join().unwrap_or_default(),
        elapsed,
    })
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn trace_head(stderr: &str, status: ExitStatus) -> String {
    let head: Vec<&str> = stderr
        .lines()
        .filter(|l| !l.trim().is_empty())
        .take(TRACE_HEAD_LINES)
        .collect();
    if head.is_empty() {
        format!("process exited with {status}")
    } else {
        head.join("\n")
    }
}

fn write_log(path: &Path, captured: &Captured) {
    let status = match captured.status {
        Some(s) => s.to_string(),
        None => "killed at cap".into(),
    };
    let text = format!(
        "status: {status}\nelapsed_ms: {}\n--- stdout ---\n{}\n--- stderr ---\n{}\n",
        captured.elapsed.as_millis(),
        captured.stdout,
        captured.stderr
    );
    if let Err(e) = fs::write(path, text) {
        log::debug!("cannot write {}: {e}", path.display());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::Origin;
    use crate::value::ValueKind;

    fn case(id: &str, inputs: Vec<TypedValue>, expected: TypedValue) -> TestCase {
        TestCase {
            case_id: id.into(),
            inputs,
            expected,
            rationale: String::new(),
            origin: Origin {
                pair_index: 1,
                iteration: 0,
            },
        }
    }

    #[test]
    fn driver_embeds_method_and_literals() {
        let sig = MethodSignature {
            method_name: "sum67".into(),
            param_types: vec![ValueKind::IntArray],
            return_type: ValueKind::Int,
        };
        let t = case(
            "t1",
            vec![TypedValue::IntArray(vec![6, 7, 1, 2, 3])],
            TypedValue::Int(6),
        );
        let driver = synthesize_driver(&sig, "public int sum67(int[] nums){ return 0; }", &t).unwrap();
        assert!(driver.contains("class Solution {\npublic int sum67(int[] nums){ return 0; }\n}"));
        assert!(driver.contains("render(new Solution().sum67(new int[]{6, 7, 1, 2, 3}))"));
        assert!(driver.contains("out.println(result);"));
    }

    #[test]
    fn driver_escapes_string_inputs() {
        let sig = MethodSignature {
            method_name: "echo".into(),
            param_types: vec![ValueKind::Str],
            return_type: ValueKind::Boolean,
        };
        let t = case(
            "t1",
            vec![TypedValue::Str("say \"hi\"".into())],
            TypedValue::Boolean(true),
        );
        let driver = synthesize_driver(&sig, "boolean echo(String s){return true;}", &t).unwrap();
        assert!(driver.contains(r#"new Solution().echo("say \"hi\"")"#));
    }

    #[test]
    fn driver_rejects_nonconforming_tests() {
        let sig = MethodSignature {
            method_name: "f".into(),
            param_types: vec![ValueKind::Int],
            return_type: ValueKind::Int,
        };
        let t = case("bad", vec![TypedValue::Boolean(true)], TypedValue::Int(1));
        assert!(matches!(
            synthesize_driver(&sig, "", &t),
            Err(HarnessError::Signature { .. })
        ));
    }

    #[test]
    fn judge_compares_trimmed_canonical_text() {
        assert_eq!(
            Observation::Output("[1, 2]".into()).judge(&TypedValue::IntArray(vec![1, 2])),
            Outcome::Pass
        );
        assert_eq!(
            Observation::Output("13".into()).judge(&TypedValue::Int(3)),
            Outcome::Fail { actual: "13".into() }
        );
        assert_eq!(
            Observation::Output("ab  ".into()).judge(&TypedValue::Str("ab".into())),
            Outcome::Pass
        );
        assert_eq!(
            Observation::Output("True".into()).judge(&TypedValue::Boolean(true)),
            Outcome::Fail { actual: "True".into() }
        );
    }

    #[test]
    fn compile_failure_marks_run_uncompiled() {
        let tests = vec![
            case("a", vec![TypedValue::Int(1)], TypedValue::Int(1)),
            case("b", vec![TypedValue::Int(2)], TypedValue::Int(2)),
        ];
        let obs = vec![Observation::CompileError("x".into()); 2];
        let run = SuiteRun::from_observations("s", &tests, &obs);
        assert!(!run.compiled);
        assert_eq!(run.pass_count, 0);
        assert!(run
            .results
            .iter()
            .all(|r| matches!(r.outcome, Outcome::CompileError { .. })));
    }

    #[test]
    fn missing_toolchain_is_distinct_from_compile_errors() {
        let harness = Harness::new(
            Toolchain::javac("/nonexistent/javac", "/nonexistent/java"),
            HarnessConfig::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        let err = harness.compile("class X {}", dir.path()).unwrap_err();
        assert!(matches!(err, HarnessError::ToolchainMissing(_)), "{err:?}");
    }

    #[test]
    fn run_capped_kills_at_cap() {
        let mut cmd = Command::new("sh");
        cmd.args(["-c", "sleep 10"]);
        let started = Instant::now();
        let captured = run_capped(cmd, Duration::from_millis(300)).unwrap();
        assert!(captured.status.is_none());
        assert!(started.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn trace_head_keeps_first_lines() {
        let status = std::process::Command::new("sh")
            .args(["-c", "exit 1"])
            .status()
            .unwrap();
        let stderr =
            "Exception in thread \"main\" java.lang.ArithmeticException: / by zero\n\tat Solution.f(Main.java:5)\n";
        assert!(trace_head(stderr, status).starts_with("Exception in thread \"main\" java.lang.ArithmeticException"));
        assert!(trace_head("", status).contains("exit"));
    }
}
