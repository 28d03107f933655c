//! The condition-aware answering pipeline and the dataset run loop.
//!
//! For each question the pipeline runs up to four model-backed phases, with
//! the boolean work done deterministically in between:
//!
//! 1. retrieval (optional) narrows long documents to relevant sections,
//! 2. a draft answer anchors identification on a concrete candidate,
//! 3. identification extracts condition groups with and/or connectives,
//! 4. verification checks each condition against the user's situation, in
//!    parallel, each condition backed by its surrounding document section,
//! 5. the solver classifies the answer and picks the unresolved conditions,
//! 6. answer generation writes the final answer given the verdicts.
//!
//! Every model call is recorded in the question's [`Trace`], so a run can be
//! audited or replayed step by step. Model output that fails to parse never
//! aborts a question: each phase has a conservative fallback and leaves a
//! warning in the trace.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{
    read_predictions, AnswerType, DatasetError, DatasetKind, Example,
};
use crate::document::{
    augment_condition, embedding_retrieve, locate_condition_with_threshold, oracle_retrieve,
    parse_document, Augmentation, Document, EmbedError, EmbeddingClient, Located, Retrieval,
    LOCATE_THRESHOLD,
};
use crate::llm::{CompletionClient, GenParams, LlmError};
use crate::model::{
    ConditionExpression, ConditionId, Prediction, PredictionRecord, Trace, TraceStage, TraceStep,
    VerdictMap, VerificationStatus,
};
use crate::prompts::{
    answer_prompt, builtin_draft, builtin_step_templates, builtin_summarize, format_known_information,
    freeform_prompt, identification_prompt, parse_answer, parse_identification, parse_marked_line,
    parse_verification, summarize_prompt, verification_prompt, ExemplarCounts, ParsedAnswer,
    StepTemplates, Template,
};
use crate::solver::{self, SolveError};

/// How documents are narrowed before prompting. Only ConditionalQA documents
/// are long enough to need this; ShARC snippets always go in whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Use the whole document.
    #[default]
    None,
    /// Keep the top-level sections containing the gold evidence. Needs
    /// labeled data; used to isolate answering quality from retrieval.
    Oracle,
    /// Keep the sections most similar to the question under an embedding
    /// model.
    Embedding { top_k: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetKind,
    pub params: GenParams,
    #[serde(default)]
    pub exemplars: ExemplarCounts,
    #[serde(default)]
    pub retrieval: RetrievalMode,
    /// Verification calls in flight at once per question.
    #[serde(default = "default_verification_concurrency")]
    pub verification_concurrency: usize,
    /// Token-overlap score below which a condition counts as not found in
    /// the document.
    #[serde(default = "default_locate_threshold")]
    pub locate_threshold: f64,
}

fn default_verification_concurrency() -> usize {
    4
}

fn default_locate_threshold() -> f64 {
    LOCATE_THRESHOLD
}

impl PipelineConfig {
    /// Deterministic defaults: temperature 0, fixed seed, built-in exemplar
    /// counts, whole-document prompting.
    pub fn new(dataset: DatasetKind, model: impl Into<String>) -> Self {
        PipelineConfig {
            dataset,
            params: GenParams::deterministic(model),
            exemplars: ExemplarCounts::default(),
            retrieval: RetrievalMode::None,
            verification_concurrency: default_verification_concurrency(),
            locate_threshold: default_locate_threshold(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("solver rejected the expression: {0}")]
    Solve(#[from] SolveError),
    #[error("retrieval embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

/// Anything that turns one example into one prediction. Implemented by the
/// pipeline and by the single-prompt baselines, so `run_dataset` drives them
/// all the same way.
pub trait QuestionRunner: Sync {
    fn run_question(&self, example: &Example) -> Result<Prediction, PipelineError>;
}

pub struct Pipeline {
    config: PipelineConfig,
    templates: StepTemplates,
    draft_template: Template,
    summarize_template: Template,
    client: Arc<dyn CompletionClient>,
    embedder: Option<Arc<dyn EmbeddingClient>>,
}

/// Everything known about one condition before its verification call runs.
struct PreparedVerification {
    group: usize,
    member: usize,
    id: ConditionId,
    prompt: String,
    /// Augmentation trace steps taken while building the prompt.
    pre_steps: Vec<TraceStep>,
    element_ref: Option<usize>,
    context: Option<String>,
    warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, client: Arc<dyn CompletionClient>) -> Self {
        let templates = builtin_step_templates(config.dataset).clone();
        Pipeline {
            config,
            templates,
            draft_template: builtin_draft().clone(),
            summarize_template: builtin_summarize().clone(),
            client,
            embedder: None,
        }
    }

    /// Replaces the built-in step templates, e.g. with ones loaded from
    /// files.
    pub fn with_templates(mut self, templates: StepTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingClient>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        Ok(self.client.complete(prompt, &self.config.params)?.text)
    }

    /// Runs prompts in chunks of `verification_concurrency`, preserving
    /// input order in the output regardless of completion order.
    fn complete_parallel(&self, prompts: &[String]) -> Result<Vec<String>, LlmError> {
        let chunk_size = self.config.verification_concurrency.max(1);
        let mut outputs: Vec<Option<String>> = Vec::new();
        outputs.resize_with(prompts.len(), || None);
        let indices: Vec<usize> = (0..prompts.len()).collect();
        for batch in indices.chunks(chunk_size) {
            let results: Vec<Result<String, LlmError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&i| {
                        let prompt = &prompts[i];
                        scope.spawn(move || self.complete(prompt))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("verification worker panicked"))
                    .collect()
            });
            for (&i, result) in batch.iter().zip(results) {
                outputs[i] = Some(result?);
            }
        }
        Ok(outputs.into_iter().map(|o| o.expect("every prompt ran")).collect())
    }

    /// Narrows the document per the configured retrieval mode and returns
    /// the text to prompt with. Falls back to the whole document whenever
    /// retrieval keeps nothing usable.
    fn retrieve(
        &self,
        example: &Example,
        doc: &Document,
        question: &str,
        trace: &mut Trace,
    ) -> Result<String, PipelineError> {
        let retrieval: Option<Retrieval> = match &self.config.retrieval {
            RetrievalMode::None => None,
            RetrievalMode::Oracle => {
                let evidence = example.gold_evidence.clone().unwrap_or_default();
                if evidence.is_empty() {
                    trace.warn("oracle retrieval requested but the example has no gold evidence");
                    None
                } else {
                    Some(oracle_retrieve(doc, &evidence))
                }
            }
            RetrievalMode::Embedding { top_k } => match &self.embedder {
                Some(embedder) => Some(embedding_retrieve(doc, question, *top_k, embedder.as_ref())?),
                None => {
                    trace.warn("embedding retrieval requested but no embedder is configured");
                    None
                }
            },
        };
        let Some(retrieval) = retrieval else {
            return Ok(doc.text());
        };
        trace.push_step(TraceStep {
            stage: TraceStage::Retrieval,
            label: "retrieval".to_string(),
            prompt: None,
            completion: None,
            parsed: Some(json!({ "kept_sections": retrieval.kept_sections })),
        });
        if retrieval.is_empty() {
            trace.warn("retrieval kept no sections; prompting with the whole document");
            return Ok(doc.text());
        }
        Ok(retrieval.document.text())
    }

    pub fn run_question(&self, example: &Example) -> Result<Prediction, PipelineError> {
        match self.config.dataset {
            DatasetKind::Conditionalqa => self.run_conditionalqa(example),
            DatasetKind::Sharc => self.run_sharc(example),
        }
    }

    fn run_conditionalqa(&self, example: &Example) -> Result<Prediction, PipelineError> {
        let mut trace = Trace::new(&example.id);
        let doc = parse_document(&example.document_lines);
        let question = example.merged_question();
        let working_text = self.retrieve(example, &doc, &question, &mut trace)?;

        // Draft answer, used as the anchor for identification.
        let draft_prompt = freeform_prompt(&self.draft_template, 0, &working_text, &question);
        let draft_completion = self.complete(&draft_prompt)?;
        let suggested = parse_marked_line(&draft_completion, "Answer:");
        if suggested.is_empty() {
            trace.warn("draft answer is empty");
        }
        trace.push_step(TraceStep {
            stage: TraceStage::DraftAnswer,
            label: "draft".to_string(),
            prompt: Some(draft_prompt),
            completion: Some(draft_completion),
            parsed: Some(json!({ "suggested_answer": suggested })),
        });

        let mut expression =
            self.identify(&working_text, &question, Some(&suggested), &mut trace)?;

        // Augment each condition with its section, then verify in parallel.
        let prepared = self.prepare_conditionalqa_verifications(
            &doc,
            &expression,
            &question,
            &suggested,
        )?;
        let verdicts = self.verify(prepared, &mut expression, &mut trace)?;

        let solved = solver::solve(&expression, &verdicts)?;
        trace.solver_audit = Some(solver::emit_trace(&expression, &verdicts, &solved));

        // Answer generation sees each verdict next to its condition.
        let verdict_pairs = verdict_display_pairs(&expression, &doc, &verdicts);
        let known = format_known_information("", &verdict_pairs);
        let answer_type =
            example.answer_type.unwrap_or_else(|| guess_answer_type(&example.question));
        let final_prompt = answer_prompt(
            &self.templates.answer,
            self.config.exemplars.answer,
            &working_text,
            &question,
            &known,
            Some(answer_type.prompt_value()),
        );
        let final_completion = self.complete(&final_prompt)?;
        let parsed = match parse_answer(&final_completion, DatasetKind::Conditionalqa) {
            Ok(parsed) => parsed,
            Err(e) if suggested.is_empty() => {
                trace.warn(format!("answer parse failed ({e}); defaulting to not answerable"));
                ParsedAnswer::NotAnswerable
            }
            Err(e) => {
                trace.warn(format!("answer parse failed ({e}); falling back to the draft answer"));
                ParsedAnswer::Span(suggested.clone())
            }
        };
        trace.push_step(TraceStep {
            stage: TraceStage::AnswerGeneration,
            label: "answer".to_string(),
            prompt: Some(final_prompt),
            completion: Some(final_completion),
            parsed: Some(json!({ "answer": parsed.answer_text() })),
        });

        let missing_conditions = missing_condition_texts(&expression, Some(&doc), &solved.missing_conditions);
        let answer_class = solved.answer_class;
        trace.expression = Some(expression);
        trace.verdicts = Some(verdicts);
        trace.solve = Some(solved);
        Ok(Prediction {
            id: example.id.clone(),
            answers: vec![parsed.answer_text().to_string()],
            answer_class,
            missing_conditions,
            trace,
        })
    }

    fn run_sharc(&self, example: &Example) -> Result<Prediction, PipelineError> {
        let mut trace = Trace::new(&example.id);
        let snippet = example.document_lines.join("\n");
        let question = example.merged_question();
        let situated = example.situated_question();
        let history = example.history.trim();
        let known_history =
            if history.is_empty() { "None".to_string() } else { history.to_string() };

        let mut expression = self.identify(&snippet, &question, None, &mut trace)?;

        let prepared: Vec<PreparedVerification> = indexed_conditions(&expression)
            .into_iter()
            .map(|(group, member, id, text)| PreparedVerification {
                group,
                member,
                id,
                prompt: verification_prompt(
                    &self.templates.verification,
                    self.config.exemplars.verification,
                    &snippet,
                    &text,
                    &situated,
                    None,
                    Some(&known_history),
                ),
                pre_steps: Vec::new(),
                element_ref: None,
                context: None,
                warnings: Vec::new(),
            })
            .collect();
        let verdicts = self.verify(prepared, &mut expression, &mut trace)?;

        let solved = solver::solve(&expression, &verdicts)?;
        trace.solver_audit = Some(solver::emit_trace(&expression, &verdicts, &solved));

        let verdict_pairs = verdict_display_pairs(&expression, &parse_document(&example.document_lines), &verdicts);
        let known = format_known_information(history, &verdict_pairs);
        let final_prompt = answer_prompt(
            &self.templates.answer,
            self.config.exemplars.answer,
            &snippet,
            &situated,
            &known,
            None,
        );
        let final_completion = self.complete(&final_prompt)?;
        let parsed = match parse_answer(&final_completion, DatasetKind::Sharc) {
            Ok(parsed) => parsed,
            Err(e) => {
                trace.warn(format!(
                    "answer parse failed ({e}); defaulting to not enough information"
                ));
                ParsedAnswer::NotEnoughInformation
            }
        };
        trace.push_step(TraceStep {
            stage: TraceStage::AnswerGeneration,
            label: "answer".to_string(),
            prompt: Some(final_prompt),
            completion: Some(final_completion),
            parsed: Some(json!({ "answer": parsed.answer_text() })),
        });

        let missing_conditions = missing_condition_texts(&expression, None, &solved.missing_conditions);
        let answer_class = solved.answer_class;
        trace.expression = Some(expression);
        trace.verdicts = Some(verdicts);
        trace.solve = Some(solved);
        Ok(Prediction {
            id: example.id.clone(),
            answers: vec![parsed.answer_text().to_string()],
            answer_class,
            missing_conditions,
            trace,
        })
    }

    fn identify(
        &self,
        document: &str,
        question: &str,
        suggested: Option<&str>,
        trace: &mut Trace,
    ) -> Result<ConditionExpression, PipelineError> {
        let prompt = identification_prompt(
            &self.templates.identification,
            self.config.exemplars.identification,
            document,
            question,
            suggested,
        );
        let completion = self.complete(&prompt)?;
        let expression = match parse_identification(&completion) {
            Ok(expression) => expression,
            Err(e) => {
                trace.warn(format!(
                    "identification parse failed ({e}); treating the question as unconditional"
                ));
                ConditionExpression::empty()
            }
        };
        trace.push_step(TraceStep {
            stage: TraceStage::Identification,
            label: "identification".to_string(),
            prompt: Some(prompt),
            completion: Some(completion),
            parsed: serde_json::to_value(&expression).ok(),
        });
        Ok(expression)
    }

    /// Builds one verification prompt per condition, backing each condition
    /// with the innermost document section that contains it. Conditions that
    /// cannot be located (or sit outside any section) get their context from
    /// a short summarization call instead.
    fn prepare_conditionalqa_verifications(
        &self,
        doc: &Document,
        expression: &ConditionExpression,
        question: &str,
        suggested: &str,
    ) -> Result<Vec<PreparedVerification>, PipelineError> {
        let mut prepared = Vec::new();
        for (group, member, id, text) in indexed_conditions(expression) {
            let mut pre_steps = Vec::new();
            let mut warnings = Vec::new();
            let mut element_ref = None;
            let located = locate_condition_with_threshold(doc, &text, self.config.locate_threshold);
            let context = match located {
                Located::Element { id: element, score } => {
                    element_ref = Some(element);
                    match augment_condition(doc, element) {
                        Ok(Augmentation::Section(section_text)) => {
                            pre_steps.push(TraceStep {
                                stage: TraceStage::Augmentation,
                                label: id.as_str().to_string(),
                                prompt: None,
                                completion: None,
                                parsed: Some(json!({
                                    "element": element,
                                    "score": score,
                                    "source": "section",
                                })),
                            });
                            section_text
                        }
                        Ok(Augmentation::SummarizeFallback) | Err(_) => self.summarize_context(
                            doc,
                            &text,
                            &id,
                            "element sits outside any section",
                            &mut pre_steps,
                            &mut warnings,
                        )?,
                    }
                }
                Located::NoMatch => self.summarize_context(
                    doc,
                    &text,
                    &id,
                    "condition not located in the document",
                    &mut pre_steps,
                    &mut warnings,
                )?,
            };
            let prompt = verification_prompt(
                &self.templates.verification,
                self.config.exemplars.verification,
                &context,
                &text,
                question,
                Some(suggested),
                None,
            );
            prepared.push(PreparedVerification {
                group,
                member,
                id,
                prompt,
                pre_steps,
                element_ref,
                context: Some(context),
                warnings,
            });
        }
        Ok(prepared)
    }

    fn summarize_context(
        &self,
        doc: &Document,
        condition_text: &str,
        id: &ConditionId,
        reason: &str,
        pre_steps: &mut Vec<TraceStep>,
        warnings: &mut Vec<String>,
    ) -> Result<String, PipelineError> {
        warnings.push(format!("condition {id}: {reason}; using a model summary as context"));
        let prompt = summarize_prompt(&self.summarize_template, &doc.text(), condition_text);
        let completion = self.complete(&prompt)?;
        let summary = parse_marked_line(&completion, "Summary:");
        let context =
            if summary.is_empty() { condition_text.to_string() } else { summary.clone() };
        pre_steps.push(TraceStep {
            stage: TraceStage::Augmentation,
            label: id.as_str().to_string(),
            prompt: Some(prompt),
            completion: Some(completion),
            parsed: Some(json!({ "summary": summary, "source": "summarize" })),
        });
        Ok(context)
    }

    /// Runs the prepared verification prompts in parallel, parses verdicts,
    /// and writes augmentation results back onto the expression. Returns the
    /// verdict map; trace steps land in condition order.
    fn verify(
        &self,
        prepared: Vec<PreparedVerification>,
        expression: &mut ConditionExpression,
        trace: &mut Trace,
    ) -> Result<VerdictMap, PipelineError> {
        let prompts: Vec<String> = prepared.iter().map(|p| p.prompt.clone()).collect();
        let completions = self.complete_parallel(&prompts)?;
        let mut verdicts = VerdictMap::new();
        for (p, completion) in prepared.into_iter().zip(completions) {
            for warning in p.warnings {
                trace.warn(warning);
            }
            for step in p.pre_steps {
                trace.push_step(step);
            }
            let status = match parse_verification(&completion) {
                Ok(status) => status,
                Err(e) => {
                    trace.warn(format!(
                        "verification parse failed for {} ({e}); treating it as not mentioned",
                        p.id
                    ));
                    VerificationStatus::NotMentioned
                }
            };
            trace.push_step(TraceStep {
                stage: TraceStage::Verification,
                label: p.id.as_str().to_string(),
                prompt: Some(p.prompt),
                completion: Some(completion),
                parsed: Some(json!({ "satisfaction": status })),
            });
            let condition = &mut expression.groups[p.group].conditions[p.member];
            condition.element_ref = p.element_ref;
            condition.context = p.context;
            verdicts.insert(p.id, status);
        }
        Ok(verdicts)
    }
}

impl QuestionRunner for Pipeline {
    fn run_question(&self, example: &Example) -> Result<Prediction, PipelineError> {
        Pipeline::run_question(self, example)
    }
}

/// Conditions of an expression flattened to (group, member, id, text).
fn indexed_conditions(
    expression: &ConditionExpression,
) -> Vec<(usize, usize, ConditionId, String)> {
    let mut out = Vec::with_capacity(expression.condition_count());
    for (gi, group) in expression.groups.iter().enumerate() {
        for (ci, condition) in group.conditions.iter().enumerate() {
            out.push((gi, ci, condition.id.clone(), condition.text.clone()));
        }
    }
    out
}

/// (display text, verdict) per condition in expression order. Located
/// conditions display as the document line they refer to, so the answer
/// prompt and the prediction quote the document rather than the model's
/// paraphrase.
fn verdict_display_pairs(
    expression: &ConditionExpression,
    doc: &Document,
    verdicts: &VerdictMap,
) -> Vec<(String, VerificationStatus)> {
    expression
        .conditions()
        .map(|c| {
            let text = condition_display_text(c.element_ref, &c.text, Some(doc));
            let status = verdicts.get(&c.id).unwrap_or(VerificationStatus::NotMentioned);
            (text, status)
        })
        .collect()
}

fn condition_display_text(
    element_ref: Option<usize>,
    fallback: &str,
    doc: Option<&Document>,
) -> String {
    if let (Some(doc), Some(id)) = (doc, element_ref) {
        if let Some(element) = doc.elements.get(id) {
            return element.raw.clone();
        }
    }
    fallback.to_string()
}

fn missing_condition_texts(
    expression: &ConditionExpression,
    doc: Option<&Document>,
    missing: &[ConditionId],
) -> Vec<String> {
    missing
        .iter()
        .map(|id| match expression.find_condition(id) {
            Some(c) => condition_display_text(c.element_ref, &c.text, doc),
            None => id.as_str().to_string(),
        })
        .collect()
}

/// Question-word heuristic for examples whose answer type is not labeled.
fn guess_answer_type(question: &str) -> AnswerType {
    let first = question
        .trim()
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_ascii_alphabetic())
        .to_ascii_lowercase();
    match first.as_str() {
        "do" | "does" | "did" | "is" | "are" | "am" | "was" | "were" | "can" | "could" | "will"
        | "would" | "shall" | "should" | "must" | "may" | "might" | "have" | "has" => {
            AnswerType::YesNo
        }
        _ => AnswerType::Extractive,
    }
}

/// Options for a dataset run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Prediction JSONL, appended to when resuming.
    pub predictions_path: PathBuf,
    /// Per-question trace files land here as `<id>.json` when set.
    pub trace_dir: Option<PathBuf>,
    /// Stop after this many newly attempted questions.
    pub limit: Option<usize>,
    /// Keep predictions already in the output file and skip their
    /// questions; false starts the file over.
    pub resume: bool,
}

impl RunOptions {
    pub fn new(predictions_path: impl Into<PathBuf>) -> Self {
        RunOptions {
            predictions_path: predictions_path.into(),
            trace_dir: None,
            limit: None,
            resume: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub id: String,
    pub error: String,
}

/// What happened during a dataset run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub skipped_existing: usize,
    pub attempted: usize,
    pub succeeded: usize,
    /// Warnings accumulated across all traces (parse fallbacks and the
    /// like).
    pub warnings: usize,
    /// Questions whose run failed outright; the rest of the run continues
    /// past them.
    pub failures: Vec<QuestionFailure>,
}

/// Runs every example through the runner, streaming predictions to JSONL as
/// they finish. A crashed or interrupted run can be resumed: questions whose
/// ids are already in the output file are skipped. One question failing is
/// recorded and does not stop the run.
pub fn run_dataset(
    runner: &dyn QuestionRunner,
    examples: &[Example],
    options: &RunOptions,
) -> Result<RunReport, PipelineError> {
    let path = &options.predictions_path;
    let existing: BTreeSet<String> = if options.resume && path.exists() {
        read_predictions(path)?.into_iter().map(|r| r.id).collect()
    } else {
        if path.exists() {
            fs::remove_file(path).map_err(|e| io_err(path, e))?;
        }
        BTreeSet::new()
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    if let Some(dir) = &options.trace_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut out = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;

    let mut report = RunReport { total: examples.len(), ..RunReport::default() };
    let limit = options.limit.unwrap_or(usize::MAX);
    for example in examples {
        if report.attempted >= limit {
            break;
        }
        if existing.contains(&example.id) {
            report.skipped_existing += 1;
            continue;
        }
        report.attempted += 1;
        match runner.run_question(example) {
            Ok(prediction) => {
                let trace_ref = match &options.trace_dir {
                    Some(dir) => {
                        let name = format!("{}.json", sanitize_id(&example.id));
                        let trace_path = dir.join(&name);
                        let body = serde_json::to_string_pretty(&prediction.trace)
                            .expect("trace serializes");
                        fs::write(&trace_path, body).map_err(|e| io_err(&trace_path, e))?;
                        Some(name)
                    }
                    None => None,
                };
                report.warnings += prediction.trace.warnings.len();
                let record = PredictionRecord::from_prediction(&prediction, trace_ref);
                crate::dataset::append_prediction(&mut out, &record).map_err(|e| io_err(path, e))?;
                report.succeeded += 1;
            }
            Err(e) => {
                report.failures.push(QuestionFailure {
                    id: example.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

/// Turns an arbitrary example id into a safe file name.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendKind, Completion};
    use crate::model::AnswerClass;
    use std::time::Duration;

    /// Routes prompts to canned responses by substring; the first matching
    /// rule wins.
    pub(crate) struct Scripted {
        rules: Vec<(String, String)>,
    }

    impl Scripted {
        pub(crate) fn new<const N: usize>(rules: [(&str, &str); N]) -> Self {
            Scripted {
                rules: rules.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            }
        }
    }

    impl CompletionClient for Scripted {
        fn complete(&self, prompt: &str, _params: &GenParams) -> Result<Completion, LlmError> {
            for (needle, response) in &self.rules {
                if prompt.contains(needle.as_str()) {
                    return Ok(Completion {
                        text: response.clone(),
                        backend: BackendKind::Replay,
                        latency: Duration::ZERO,
                        usage: None,
                    });
                }
            }
            Err(LlmError::Transport(format!(
                "no scripted rule matches prompt starting {:?}",
                prompt.chars().take(60).collect::<String>()
            )))
        }
    }

    fn pension_example() -> Example {
        Example {
            id: "dev-0".to_string(),
            question: "Does my employer need to enrol me onto a pension?".to_string(),
            scenario: "I am 23 years old and my new job is in the UK.".to_string(),
            history: String::new(),
            document_lines: vec![
                "<h1>Joining a workplace pension</h1>".to_string(),
                "<p>Your employer must enrol you if all of the following apply:</p>".to_string(),
                "<li>you are aged between 22 and State Pension age</li>".to_string(),
                "<li>you earn at least £10,000 per year</li>".to_string(),
            ],
            gold_answers: None,
            gold_evidence: None,
            answer_type: None,
        }
    }

    fn pension_rules() -> Scripted {
        Scripted::new([
            (
                "give a short suggested answer",
                "Answer: yes",
            ),
            (
                "find all the paragraphs that contain conditions",
                "Reasoning: both conditions are required.\nConditions: [{\"contents\": [\"<li>you are aged between 22 and State Pension age</li>\", \"<li>you earn at least £10,000 per year</li>\"], \"relationship\": \"and\"}]",
            ),
            (
                "- Segment to Check: <li>you are aged between 22 and State Pension age</li>",
                "Reasoning: the user is 23.\nSatisfaction: satisfied",
            ),
            (
                "- Segment to Check: <li>you earn at least £10,000 per year</li>",
                "Reasoning: no salary is mentioned.\nSatisfaction: not mentioned",
            ),
            (
                "based on the provided documents and known information",
                "Reasoning: the remaining condition is unresolved but the answer would be yes.\nAnswer: Yes",
            ),
        ])
    }

    #[test]
    fn conditionalqa_flow_produces_a_conditional_prediction() {
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(pension_rules()));
        let prediction = pipeline.run_question(&pension_example()).unwrap();

        assert_eq!(prediction.answers, vec!["yes"]);
        assert_eq!(prediction.answer_class, AnswerClass::Conditional);
        assert_eq!(
            prediction.missing_conditions,
            vec!["<li>you earn at least £10,000 per year</li>"]
        );
        let trace = &prediction.trace;
        assert!(trace.warnings.is_empty(), "unexpected warnings: {:?}", trace.warnings);
        let stages: Vec<TraceStage> = trace.steps.iter().map(|s| s.stage).collect();
        assert_eq!(
            stages,
            vec![
                TraceStage::DraftAnswer,
                TraceStage::Identification,
                TraceStage::Augmentation,
                TraceStage::Verification,
                TraceStage::Augmentation,
                TraceStage::Verification,
                TraceStage::AnswerGeneration,
            ]
        );
        let expression = trace.expression.as_ref().unwrap();
        assert_eq!(expression.groups[0].conditions[0].element_ref, Some(2));
        assert!(expression.groups[0].conditions[0]
            .context
            .as_ref()
            .unwrap()
            .contains("<h1>Joining a workplace pension</h1>"));
        assert!(trace.solver_audit.as_ref().unwrap().contains("answer class: conditional"));
    }

    #[test]
    fn conditionalqa_answer_prompt_carries_known_information() {
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(pension_rules()));
        let prediction = pipeline.run_question(&pension_example()).unwrap();
        let answer_step = prediction
            .trace
            .steps
            .iter()
            .find(|s| s.stage == TraceStage::AnswerGeneration)
            .unwrap();
        let prompt = answer_step.prompt.as_ref().unwrap();
        assert!(prompt.contains(
            "- Known Information: Q: You are aged between 22 and State Pension age? A: Yes; Q: You earn at least £10,000 per year? A: Not mentioned"
        ));
        assert!(prompt.contains("- Answer Type: yes/no"));
        assert!(prompt.contains(
            "- Question: I am 23 years old and my new job is in the UK. Does my employer need to enrol me onto a pension?"
        ));
    }

    #[test]
    fn unlocatable_condition_uses_a_summary_and_warns() {
        let mut rules = vec![
            ("give a short suggested answer".to_string(), "Answer: yes".to_string()),
            (
                "find all the paragraphs that contain conditions".to_string(),
                "Conditions: [{\"contents\": [\"completely unrelated words here\"], \"relationship\": \"and\"}]".to_string(),
            ),
            (
                "rewrite the given condition".to_string(),
                "Summary: You meet the unrelated requirement.".to_string(),
            ),
            (
                "- Segment to Check:".to_string(),
                "Satisfaction: not mentioned".to_string(),
            ),
            (
                "known information".to_string(),
                "Answer: yes".to_string(),
            ),
        ];
        let client = Scripted { rules: rules.drain(..).collect() };
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(client));
        let prediction = pipeline.run_question(&pension_example()).unwrap();
        assert!(prediction.trace.warnings.iter().any(|w| w.contains("not located")));
        let verify_step = prediction
            .trace
            .steps
            .iter()
            .find(|s| s.stage == TraceStage::Verification)
            .unwrap();
        assert!(verify_step
            .prompt
            .as_ref()
            .unwrap()
            .contains("- Reference Document:\nYou meet the unrelated requirement."));
        // The condition never matched a document line, so the prediction
        // falls back to the model's own wording.
        assert_eq!(prediction.missing_conditions, vec!["completely unrelated words here"]);
    }

    fn sharc_example() -> Example {
        Example {
            id: "utt-1".to_string(),
            question: "Will I get Statutory Sick Pay?".to_string(),
            scenario: "I have been off work sick for a week.".to_string(),
            history: "Q: Are you classed as an employee? A: Yes".to_string(),
            document_lines: vec![
                "Statutory Sick Pay (SSP)".to_string(),
                "To qualify you must:".to_string(),
                "* be classed as an employee".to_string(),
                "* earn an average of at least £123 per week".to_string(),
            ],
            gold_answers: None,
            gold_evidence: None,
            answer_type: None,
        }
    }

    #[test]
    fn sharc_flow_splits_history_from_question() {
        // Condition wording must not collide with the template exemplars:
        // the scripted client matches by substring across the whole prompt.
        let client = Scripted::new([
            (
                "find all conditions",
                "Conditions: {\"contents\": [\"You hold an employment contract\", \"You earn at least £123 weekly on average\"], \"relationship\": \"and\"}",
            ),
            (
                "- Condition to Check: You hold an employment contract",
                "Satisfaction: satisfied",
            ),
            (
                "- Condition to Check: You earn at least £123 weekly on average",
                "Satisfaction: not mentioned",
            ),
            ("- Provided Document:", "Answer: Not enough information"),
        ]);
        let config = PipelineConfig::new(DatasetKind::Sharc, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(client));
        let prediction = pipeline.run_question(&sharc_example()).unwrap();

        assert_eq!(prediction.answers, vec!["not enough information"]);
        assert_eq!(prediction.answer_class, AnswerClass::Conditional);
        assert_eq!(
            prediction.missing_conditions,
            vec!["You earn at least £123 weekly on average"]
        );

        let ident_step = prediction
            .trace
            .steps
            .iter()
            .find(|s| s.stage == TraceStage::Identification)
            .unwrap();
        assert!(ident_step.prompt.as_ref().unwrap().contains(
            "- Question: I have been off work sick for a week. Q: Are you classed as an employee? A: Yes Will I get Statutory Sick Pay?"
        ));

        let verify_step = prediction
            .trace
            .steps
            .iter()
            .find(|s| s.stage == TraceStage::Verification)
            .unwrap();
        let vp = verify_step.prompt.as_ref().unwrap();
        assert!(vp.contains("- Known Information: Q: Are you classed as an employee? A: Yes\n"));
        assert!(vp.contains(
            "- Question: I have been off work sick for a week. Will I get Statutory Sick Pay?\n"
        ));

        let answer_step = prediction
            .trace
            .steps
            .iter()
            .find(|s| s.stage == TraceStage::AnswerGeneration)
            .unwrap();
        assert!(answer_step.prompt.as_ref().unwrap().contains(
            "- Known Information: Q: Are you classed as an employee? A: Yes; Q: You hold an employment contract? A: Yes; Q: You earn at least £123 weekly on average? A: Not mentioned"
        ));
    }

    #[test]
    fn sharc_bad_answer_falls_back_to_not_enough_information() {
        let client = Scripted::new([
            ("find all conditions", "Conditions: []"),
            ("- Provided Document:", "Answer: it depends"),
        ]);
        let config = PipelineConfig::new(DatasetKind::Sharc, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(client));
        let prediction = pipeline.run_question(&sharc_example()).unwrap();
        assert_eq!(prediction.answers, vec!["not enough information"]);
        assert_eq!(prediction.answer_class, AnswerClass::Deterministic);
        assert!(prediction.trace.warnings.iter().any(|w| w.contains("answer parse failed")));
    }

    #[test]
    fn verification_parse_failure_defaults_to_not_mentioned() {
        let client = Scripted::new([
            ("give a short suggested answer", "Answer: yes"),
            (
                "find all the paragraphs",
                "Conditions: [{\"contents\": [\"<li>you earn at least £10,000 per year</li>\"], \"relationship\": \"and\"}]",
            ),
            ("- Segment to Check:", "I cannot tell."),
            ("known information", "Answer: yes"),
        ]);
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(client));
        let prediction = pipeline.run_question(&pension_example()).unwrap();
        assert_eq!(prediction.answer_class, AnswerClass::Conditional);
        assert!(prediction.trace.warnings.iter().any(|w| w.contains("verification parse failed")));
        let verdicts = prediction.trace.verdicts.as_ref().unwrap();
        assert_eq!(
            verdicts.get(&ConditionId::from("g0.c0")),
            Some(VerificationStatus::NotMentioned)
        );
    }

    #[test]
    fn run_dataset_streams_resumes_and_isolates_failures() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("preds.jsonl");
        let traces = dir.path().join("traces");

        let mut broken = pension_example();
        broken.id = "dev-broken".to_string();
        broken.document_lines = vec!["<p>unrelated</p>".to_string()];
        let broken_rules = Scripted::new([
            ("give a short suggested answer", "Answer: yes"),
            ("find all the paragraphs", "Conditions: []"),
            ("known information", "Answer: yes"),
        ]);
        // The scripted client has no rule for dev-broken's second document,
        // so its draft call fails; checked below as an isolated failure.
        let mut second = pension_example();
        second.id = "dev-1".to_string();
        let examples = vec![pension_example(), broken, second];

        struct FailSecond {
            inner: Scripted,
        }
        impl CompletionClient for FailSecond {
            fn complete(&self, prompt: &str, params: &GenParams) -> Result<Completion, LlmError> {
                if prompt.contains("<p>unrelated</p>") {
                    return Err(LlmError::Transport("boom".to_string()));
                }
                self.inner.complete(prompt, params)
            }
        }
        let _ = broken_rules;
        let client = Arc::new(FailSecond { inner: pension_rules() });
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, client);

        let mut options = RunOptions::new(&out);
        options.trace_dir = Some(traces.clone());
        let report = run_dataset(&pipeline, &examples, &options).unwrap();
        assert_eq!(report.total, 3);
        assert_eq!(report.attempted, 3);
        assert_eq!(report.succeeded, 2);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].id, "dev-broken");
        assert!(report.failures[0].error.contains("boom"));

        let first_bytes = fs::read(&out).unwrap();
        let records = read_predictions(&out).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].id, "dev-0");
        assert_eq!(records[0].trace_ref.as_deref(), Some("dev-0.json"));
        assert!(traces.join("dev-0.json").exists());

        // Resuming skips the finished questions and retries the failed one.
        let report2 = run_dataset(&pipeline, &examples, &options).unwrap();
        assert_eq!(report2.skipped_existing, 2);
        assert_eq!(report2.attempted, 1);
        assert_eq!(report2.succeeded, 0);
        let second_bytes = fs::read(&out).unwrap();
        assert_eq!(first_bytes, second_bytes, "failed retry must not corrupt the file");
    }

    #[test]
    fn run_dataset_limit_counts_new_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("preds.jsonl");
        let mut second = pension_example();
        second.id = "dev-1".to_string();
        let examples = vec![pension_example(), second];
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(pension_rules()));

        let mut options = RunOptions::new(&out);
        options.limit = Some(1);
        let report = run_dataset(&pipeline, &examples, &options).unwrap();
        assert_eq!(report.attempted, 1);
        assert_eq!(read_predictions(&out).unwrap().len(), 1);

        let report2 = run_dataset(&pipeline, &examples, &options).unwrap();
        assert_eq!(report2.skipped_existing, 1);
        assert_eq!(report2.attempted, 1);
        assert_eq!(read_predictions(&out).unwrap().len(), 2);
    }

    #[test]
    fn fresh_run_replaces_the_output_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("preds.jsonl");
        let examples = vec![pension_example()];
        let config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let pipeline = Pipeline::new(config, Arc::new(pension_rules()));

        let mut options = RunOptions::new(&out);
        run_dataset(&pipeline, &examples, &options).unwrap();
        options.resume = false;
        run_dataset(&pipeline, &examples, &options).unwrap();
        assert_eq!(read_predictions(&out).unwrap().len(), 1);
    }

    #[test]
    fn answer_type_heuristic_reads_the_leading_word() {
        assert_eq!(guess_answer_type("Can I claim?"), AnswerType::YesNo);
        assert_eq!(guess_answer_type("  will it work"), AnswerType::YesNo);
        assert_eq!(guess_answer_type("How do I pay taxes?"), AnswerType::Extractive);
        assert_eq!(guess_answer_type(""), AnswerType::Extractive);
    }

    #[test]
    fn sanitize_id_keeps_safe_characters() {
        assert_eq!(sanitize_id("dev-12_3.x"), "dev-12_3.x");
        assert_eq!(sanitize_id("a/b##c d"), "a_b__c_d");
    }

    #[test]
    fn concurrency_setting_does_not_change_results() {
        let examples = pension_example();
        let mut configs = Vec::new();
        for concurrency in [1, 4] {
            let mut config = PipelineConfig::new(DatasetKind::Conditionalqa, "test-model");
            config.verification_concurrency = concurrency;
            configs.push(config);
        }
        let a = Pipeline::new(configs[0].clone(), Arc::new(pension_rules()))
            .run_question(&examples)
            .unwrap();
        let b = Pipeline::new(configs[1].clone(), Arc::new(pension_rules()))
            .run_question(&examples)
            .unwrap();
        assert_eq!(serde_json::to_string(&a.trace).unwrap(), serde_json::to_string(&b.trace).unwrap());
        assert_eq!(a.answers, b.answers);
        assert_eq!(a.missing_conditions, b.missing_conditions);
    }
}
