//! Conditional question answering over regulatory documents.
//!
//! Questions like "can I get this benefit?" often have answers that only
//! hold under conditions the user never addressed. This crate answers them
//! in three model-backed steps plus one deterministic one:
//!
//! 1. identification: find the conditions the answer depends on and how
//!    they combine (`prompts`, `model`),
//! 2. verification: check each condition against what the user said
//!    (`prompts`),
//! 3. solving: decide which conditions remain unresolved and whether the
//!    answer is conditional, with pure boolean logic (`solver`),
//! 4. answer generation: produce the final answer given the verdicts
//!    (`prompts`, `pipeline`).
//!
//! The remaining modules support that pipeline: `document` parses tagged
//! government-style documents and retrieves sections, `dataset` reads the
//! two benchmark formats, `llm` talks to an OpenAI-style completion API and
//! replays recorded fixtures, `eval` scores prediction files, and
//! `baselines` implements single-prompt comparison methods.

pub mod baselines;
pub mod dataset;
pub mod document;
pub mod eval;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod solver;

pub use dataset::{DatasetKind, Example};
pub use model::{
    AnswerClass, Condition, ConditionExpression, ConditionGroup, ConditionId, LogicalOperator,
    Prediction, PredictionRecord, Trace, VerdictMap, VerificationStatus,
};
pub use pipeline::{
    run_dataset, Pipeline, PipelineConfig, PipelineError, QuestionRunner, RetrievalMode,
    RunOptions, RunReport,
};
pub use solver::{solve, SolveError, SolveResult};
