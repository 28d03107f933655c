//! End-to-end runs over the public API with recorded fixtures: recording,
//! strict replay, resumption, and failure isolation.

use std::fs;
use std::sync::Arc;
use std::time::Duration;

use condqa::baselines::{BaselineConfig, ZeroShot};
use condqa::dataset::{self, AnswerType, DatasetKind};
use condqa::llm::{BackendKind, Completion, CompletionClient, GenParams, LlmError, ReplayClient};
use condqa::model::AnswerClass;
use condqa::pipeline::{run_dataset, Pipeline, PipelineConfig, RunOptions};
use condqa::Example;

/// Canned model: a prompt gets the response of the first rule whose needles
/// ALL appear in it. Conjunctive matching keeps rules step- and
/// question-specific at once.
struct Scripted {
    rules: Vec<(Vec<String>, String)>,
}

impl CompletionClient for Scripted {
    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<Completion, LlmError> {
        for (needles, response) in &self.rules {
            if needles.iter().all(|n| prompt.contains(n.as_str())) {
                return Ok(Completion {
                    text: response.clone(),
                    backend: BackendKind::Replay,
                    latency: Duration::ZERO,
                    usage: None,
                });
            }
        }
        Err(LlmError::Transport(format!(
            "no rule for prompt starting {:?}",
            prompt.chars().take(60).collect::<String>()
        )))
    }
}

fn example(id: &str, question: &str, marker: &str) -> Example {
    Example {
        id: id.to_string(),
        question: question.to_string(),
        scenario: "I started a new job in the UK three weeks ago.".to_string(),
        history: String::new(),
        document_lines: vec![
            format!("<h1>{marker} rules</h1>"),
            format!("<p>The {marker} scheme applies if both of the following hold:</p>"),
            format!("<li>you are employed in the UK under the {marker} scheme</li>"),
            format!("<li>you applied for the {marker} scheme within 4 weeks</li>"),
        ],
        gold_answers: None,
        gold_evidence: None,
        answer_type: Some(AnswerType::YesNo),
    }
}

fn rules_for(marker: &str, second_verdict: &str) -> Vec<(Vec<String>, String)> {
    let here = format!("{marker} scheme");
    vec![
        (
            vec!["give a short suggested answer".to_string(), here.clone()],
            "Answer: yes".to_string(),
        ),
        (
            vec!["find all the paragraphs that contain conditions".to_string(), here.clone()],
            format!(
                "Conditions: [{{\"contents\": [\"<li>you are employed in the UK under the {marker} scheme</li>\", \"<li>you applied for the {marker} scheme within 4 weeks</li>\"], \"relationship\": \"and\"}}]"
            ),
        ),
        (
            vec![format!(
                "- Segment to Check: <li>you are employed in the UK under the {marker} scheme</li>"
            )],
            "Satisfaction: satisfied".to_string(),
        ),
        (
            vec![format!(
                "- Segment to Check: <li>you applied for the {marker} scheme within 4 weeks</li>"
            )],
            format!("Satisfaction: {second_verdict}"),
        ),
        (
            vec![
                "based on the provided documents and known information".to_string(),
                here,
            ],
            "Answer: Yes".to_string(),
        ),
    ]
}

fn two_question_client() -> Scripted {
    let mut rules = rules_for("alpha", "not mentioned");
    rules.extend(rules_for("beta", "contradicted"));
    Scripted { rules }
}

fn examples() -> Vec<Example> {
    vec![
        example("q-alpha", "Do I qualify for alpha?", "alpha"),
        example("q-beta", "Do I qualify for beta?", "beta"),
    ]
}

#[test]
fn record_then_strict_replay_and_resume() {
    let base = tempfile::tempdir().unwrap();
    let fixtures = base.path().join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();
    let config = PipelineConfig::new(DatasetKind::Conditionalqa, "fixture-model");

    // Recording pass fills the fixture directory.
    let recorder =
        Arc::new(ReplayClient::recording(&fixtures, Box::new(two_question_client())));
    let pipeline = Pipeline::new(config.clone(), recorder);
    let mut options = RunOptions::new(base.path().join("record.jsonl"));
    let report = run_dataset(&pipeline, &examples(), &options).unwrap();
    assert_eq!(report.succeeded, 2, "recording failures: {:?}", report.failures);
    assert!(fixtures.read_dir().unwrap().count() >= 10, "fixtures were not written");

    // Strict replay sees only the fixtures, never the scripted model.
    let strict = Arc::new(ReplayClient::strict(&fixtures));
    let pipeline = Pipeline::new(config.clone(), strict);
    options.predictions_path = base.path().join("replay.jsonl");
    let report = run_dataset(&pipeline, &examples(), &options).unwrap();
    assert_eq!(report.succeeded, 2, "replay failures: {:?}", report.failures);

    let records = dataset::read_predictions(&options.predictions_path).unwrap();
    assert_eq!(records[0].id, "q-alpha");
    assert_eq!(records[0].answer_class, AnswerClass::Conditional);
    assert_eq!(
        records[0].missing_conditions,
        vec!["<li>you applied for the alpha scheme within 4 weeks</li>"]
    );
    // The beta group shortcuts on its contradicted member, so nothing is
    // reported missing.
    assert_eq!(records[1].id, "q-beta");
    assert_eq!(records[1].answer_class, AnswerClass::Deterministic);
    assert!(records[1].missing_conditions.is_empty());

    // A resumed run skips everything already on disk.
    let report = run_dataset(&pipeline, &examples(), &options).unwrap();
    assert_eq!(report.skipped_existing, 2);
    assert_eq!(report.attempted, 0);

    // A question with no fixtures fails in isolation; the others are kept.
    let mut extended = examples();
    extended.push(example("q-gamma", "Do I qualify for gamma?", "gamma"));
    let report = run_dataset(&pipeline, &extended, &options).unwrap();
    assert_eq!(report.skipped_existing, 2);
    assert_eq!(report.attempted, 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].id, "q-gamma");
    assert!(
        report.failures[0].error.contains("fixture"),
        "unexpected error: {}",
        report.failures[0].error
    );
    assert_eq!(dataset::read_predictions(&options.predictions_path).unwrap().len(), 2);
}

#[test]
fn zero_shot_baseline_records_and_replays() {
    let base = tempfile::tempdir().unwrap();
    let fixtures = base.path().join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();

    let scripted = Scripted {
        rules: vec![(
            vec!["Do I qualify for alpha?".to_string()],
            "Answer: yes\nConditions: [\"<li>you applied for the alpha scheme within 4 weeks</li>\"]"
                .to_string(),
        )],
    };
    let config = BaselineConfig::new(DatasetKind::Conditionalqa, "fixture-model");
    let recorder = Arc::new(ReplayClient::recording(&fixtures, Box::new(scripted)));
    let baseline = ZeroShot::new(config.clone(), recorder);

    let questions = vec![example("q-alpha", "Do I qualify for alpha?", "alpha")];
    let mut options = RunOptions::new(base.path().join("record.jsonl"));
    let report = run_dataset(&baseline, &questions, &options).unwrap();
    assert_eq!(report.succeeded, 1, "failures: {:?}", report.failures);

    let strict = Arc::new(ReplayClient::strict(&fixtures));
    let baseline = ZeroShot::new(config, strict);
    options.predictions_path = base.path().join("replay.jsonl");
    let report = run_dataset(&baseline, &questions, &options).unwrap();
    assert_eq!(report.succeeded, 1, "failures: {:?}", report.failures);

    let records = dataset::read_predictions(&options.predictions_path).unwrap();
    assert_eq!(records[0].answers, vec!["yes"]);
    assert_eq!(records[0].answer_class, AnswerClass::Conditional);
    assert_eq!(
        records[0].missing_conditions,
        vec!["<li>you applied for the alpha scheme within 4 weeks</li>"]
    );
}
