//! Compiler-in-the-loop test generation for introductory Java problems.

pub mod dataset;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod refine;
pub mod selection;
pub mod value;

pub use dataset::{Corpus, MethodSignature, Problem, Submission};
pub use harness::{ExecutionResult, Executor, Harness, Outcome, SuiteRun, Toolchain};
pub use metrics::ScoreReport;
pub use prompts::{Origin, TestCase};
pub use refine::{PipelineConfig, TestSuite};
pub use selection::CodePair;
pub use value::{TypedValue, ValueKind};
