//! Single-prompt baselines: zero-shot and chain-of-thought prompting.
//!
//! Both put the whole document and the question into one prompt and read
//! the answer (plus an optional list of unresolved conditions) straight out
//! of the completion. They share the run loop with the full pipeline
//! through [`QuestionRunner`], so the same command can drive either.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{DatasetKind, Example};
use crate::llm::{CompletionClient, GenParams};
use crate::model::{AnswerClass, Prediction, Trace, TraceStage, TraceStep};
use crate::pipeline::{PipelineError, QuestionRunner};
use crate::prompts::{
    builtin_cot, builtin_zero_shot, freeform_prompt, parse_answer, parse_conditions_trailer,
    parse_marked_line, ParsedAnswer, Template,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub dataset: DatasetKind,
    pub params: GenParams,
    /// Chain-of-thought exemplars to keep from the template. Ignored by the
    /// zero-shot baseline, whose template has none.
    #[serde(default = "default_cot_exemplars")]
    pub cot_exemplars: usize,
}

fn default_cot_exemplars() -> usize {
    4
}

impl BaselineConfig {
    pub fn new(dataset: DatasetKind, model: impl Into<String>) -> Self {
        BaselineConfig {
            dataset,
            params: GenParams::deterministic(model),
            cot_exemplars: default_cot_exemplars(),
        }
    }
}

pub struct ZeroShot {
    config: BaselineConfig,
    template: Template,
    client: Arc<dyn CompletionClient>,
}

impl ZeroShot {
    pub fn new(config: BaselineConfig, client: Arc<dyn CompletionClient>) -> Self {
        let template = builtin_zero_shot(config.dataset).clone();
        ZeroShot { config, template, client }
    }
}

impl QuestionRunner for ZeroShot {
    fn run_question(&self, example: &Example) -> Result<Prediction, PipelineError> {
        run_single_prompt(&self.config, &self.template, 0, self.client.as_ref(), example)
    }
}

pub struct ChainOfThought {
    config: BaselineConfig,
    template: Template,
    client: Arc<dyn CompletionClient>,
}

impl ChainOfThought {
    pub fn new(config: BaselineConfig, client: Arc<dyn CompletionClient>) -> Self {
        let template = builtin_cot(config.dataset).clone();
        ChainOfThought { config, template, client }
    }
}

impl QuestionRunner for ChainOfThought {
    fn run_question(&self, example: &Example) -> Result<Prediction, PipelineError> {
        let count = self.config.cot_exemplars;
        run_single_prompt(&self.config, &self.template, count, self.client.as_ref(), example)
    }
}

fn run_single_prompt(
    config: &BaselineConfig,
    template: &Template,
    exemplar_count: usize,
    client: &dyn CompletionClient,
    example: &Example,
) -> Result<Prediction, PipelineError> {
    let mut trace = Trace::new(&example.id);
    let document = example.document_lines.join("\n");
    let question = example.merged_question();
    let prompt = freeform_prompt(template, exemplar_count, &document, &question);
    let completion = client.complete(&prompt, &config.params)?.text;

    let parsed = match parse_answer(&completion, config.dataset) {
        Ok(parsed) => parsed,
        Err(e) => match config.dataset {
            DatasetKind::Conditionalqa => {
                let line = parse_marked_line(&completion, "Answer:");
                if line.is_empty() {
                    trace.warn(format!("answer parse failed ({e}); defaulting to not answerable"));
                    ParsedAnswer::NotAnswerable
                } else {
                    trace.warn(format!("answer parse failed ({e}); keeping the raw answer line"));
                    ParsedAnswer::Span(line)
                }
            }
            DatasetKind::Sharc => {
                trace.warn(format!(
                    "answer parse failed ({e}); defaulting to not enough information"
                ));
                ParsedAnswer::NotEnoughInformation
            }
        },
    };
    let missing_conditions = match parse_conditions_trailer(&completion) {
        Ok(conditions) => conditions,
        Err(e) => {
            trace.warn(format!("conditions trailer parse failed ({e}); reporting none"));
            Vec::new()
        }
    };
    let answer_class = if missing_conditions.is_empty() {
        AnswerClass::Deterministic
    } else {
        AnswerClass::Conditional
    };
    trace.push_step(TraceStep {
        stage: TraceStage::AnswerGeneration,
        label: "single_prompt".to_string(),
        prompt: Some(prompt),
        completion: Some(completion),
        parsed: Some(json!({
            "answer": parsed.answer_text(),
            "missing_conditions": missing_conditions,
        })),
    });
    Ok(Prediction {
        id: example.id.clone(),
        answers: vec![parsed.answer_text().to_string()],
        answer_class,
        missing_conditions,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendKind, Completion, LlmError};
    use std::time::Duration;

    struct Canned(&'static str);

    impl CompletionClient for Canned {
        fn complete(&self, _prompt: &str, _params: &GenParams) -> Result<Completion, LlmError> {
            Ok(Completion {
                text: self.0.to_string(),
                backend: BackendKind::Replay,
                latency: Duration::ZERO,
                usage: None,
            })
        }
    }

    fn example(kind: DatasetKind) -> Example {
        Example {
            id: "b-0".to_string(),
            question: "Can I claim the benefit?".to_string(),
            scenario: "I live alone.".to_string(),
            history: match kind {
                DatasetKind::Sharc => "Q: Do you work? A: Yes".to_string(),
                DatasetKind::Conditionalqa => String::new(),
            },
            document_lines: vec!["<p>You can claim if you qualify.</p>".to_string()],
            gold_answers: None,
            gold_evidence: None,
            answer_type: None,
        }
    }

    #[test]
    fn zero_shot_reads_answer_and_conditions() {
        let config = BaselineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let client = Arc::new(Canned(
            "Answer: yes\nConditions: [\"<li>you are over 18</li>\"]",
        ));
        let baseline = ZeroShot::new(config, client);
        let p = baseline.run_question(&example(DatasetKind::Conditionalqa)).unwrap();
        assert_eq!(p.answers, vec!["yes"]);
        assert_eq!(p.answer_class, AnswerClass::Conditional);
        assert_eq!(p.missing_conditions, vec!["<li>you are over 18</li>"]);
        assert_eq!(p.trace.steps.len(), 1);
        let prompt = p.trace.steps[0].prompt.as_ref().unwrap();
        assert!(prompt.contains("I live alone. Can I claim the benefit?"));
        assert!(prompt.contains("<p>You can claim if you qualify.</p>"));
    }

    #[test]
    fn zero_shot_without_trailer_is_deterministic() {
        let config = BaselineConfig::new(DatasetKind::Conditionalqa, "test-model");
        let baseline = ZeroShot::new(config, Arc::new(Canned("Answer: no")));
        let p = baseline.run_question(&example(DatasetKind::Conditionalqa)).unwrap();
        assert_eq!(p.answers, vec!["no"]);
        assert_eq!(p.answer_class, AnswerClass::Deterministic);
        assert!(p.missing_conditions.is_empty());
        assert!(p.trace.warnings.is_empty());
    }

    #[test]
    fn cot_prompt_keeps_reasoning_exemplars() {
        let config = BaselineConfig::new(DatasetKind::Sharc, "test-model");
        let client = Arc::new(Canned("Reasoning: history says yes.\nAnswer: Yes"));
        let baseline = ChainOfThought::new(config, client);
        let p = baseline.run_question(&example(DatasetKind::Sharc)).unwrap();
        assert_eq!(p.answers, vec!["yes"]);
        let prompt = p.trace.steps[0].prompt.as_ref().unwrap();
        assert!(prompt.matches("Reasoning:").count() >= 4);
        assert!(prompt.contains("I live alone. Q: Do you work? A: Yes Can I claim the benefit?"));
    }

    #[test]
    fn sharc_offlabel_answer_falls_back_with_warning() {
        let config = BaselineConfig::new(DatasetKind::Sharc, "test-model");
        let baseline = ZeroShot::new(config, Arc::new(Canned("Answer: probably")));
        let p = baseline.run_question(&example(DatasetKind::Sharc)).unwrap();
        assert_eq!(p.answers, vec!["not enough information"]);
        assert_eq!(p.trace.warnings.len(), 1);
    }

    #[test]
    fn cqa_unparseable_answer_keeps_the_raw_line() {
        let config = BaselineConfig::new(DatasetKind::Conditionalqa, "test-model");
        // parse_answer only fails on CQA when no answer marker exists at
        // all, so the fallback reads the first non-empty line instead.
        let baseline = ZeroShot::new(config, Arc::new(Canned("the form is online")));
        let p = baseline.run_question(&example(DatasetKind::Conditionalqa)).unwrap();
        assert_eq!(p.answers, vec!["the form is online"]);
        assert!(p.trace.warnings[0].contains("keeping the raw answer line"));
    }
}
