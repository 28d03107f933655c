//! Loading of the two supported datasets and of prediction files.
//!
//! ConditionalQA ships as a document file (records with a `url` and a list
//! of tagged `contents` lines) plus a question file whose records carry
//! `answers` as `[span, [conditions...]]` pairs. ShARC ships as a single
//! file of dialog utterances that we flatten into three-way labeled
//! examples.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::PredictionRecord;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
    #[error("{path}: {at}: {message}")]
    Schema { path: String, at: String, message: String },
    #[error("{path}: line {line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("duplicate example id {id}")]
    DuplicateId { id: String },
    #[error("question {question_id} references unknown document {url}")]
    MissingDocument { question_id: String, url: String },
}

/// Which dataset a run or evaluation is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Conditionalqa,
    Sharc,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetKind::Conditionalqa => f.write_str("conditionalqa"),
            DatasetKind::Sharc => f.write_str("sharc"),
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conditionalqa" | "cqa" => Ok(DatasetKind::Conditionalqa),
            "sharc" => Ok(DatasetKind::Sharc),
            other => Err(format!("unknown dataset {other:?} (expected conditionalqa or sharc)")),
        }
    }
}

/// The ShARC label vocabulary.
pub const SHARC_LABELS: [&str; 3] = ["yes", "no", "not enough information"];

/// A gold answer span together with the conditions attached to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionedAnswer {
    pub text: String,
    pub conditions: Vec<String>,
}

impl ConditionedAnswer {
    pub fn unconditional(text: impl Into<String>) -> Self {
        ConditionedAnswer { text: text.into(), conditions: Vec::new() }
    }
}

/// Coarse answer-shape hint used for the answer-type prompt line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    YesNo,
    Extractive,
}

impl AnswerType {
    pub fn prompt_value(self) -> &'static str {
        match self {
            AnswerType::YesNo => "yes/no",
            AnswerType::Extractive => "extractive",
        }
    }
}

/// One question ready for the pipeline, document attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub scenario: String,
    /// Dialog history folded into "Q: ...? A: ..." clauses joined by "; ".
    /// Empty for datasets without follow-up dialogs.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub history: String,
    pub document_lines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<ConditionedAnswer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_evidence: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_type: Option<AnswerType>,
}

impl Example {
    /// Question with the scenario folded in front, the way prompts render it
    /// when the dialog history stays out of the question text.
    pub fn situated_question(&self) -> String {
        if self.scenario.trim().is_empty() {
            self.question.clone()
        } else {
            format!("{} {}", self.scenario.trim(), self.question)
        }
    }

    /// Question with scenario and dialog history folded in front, carrying
    /// everything the user has stated into a single prompt field.
    pub fn merged_question(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        let scenario = self.scenario.trim();
        if !scenario.is_empty() {
            parts.push(scenario);
        }
        let history = self.history.trim();
        if !history.is_empty() {
            parts.push(history);
        }
        parts.push(&self.question);
        parts.join(" ")
    }
}

/// One record of the ConditionalQA question file, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRecord {
    pub id: String,
    pub url: String,
    pub question: String,
    pub scenario: String,
    pub answers: Vec<ConditionedAnswer>,
    pub evidences: Vec<String>,
    pub not_answerable: bool,
    /// True when the record carried neither answers nor the answerability
    /// flag (hidden-test style records).
    pub unlabeled: bool,
}

impl QuestionRecord {
    /// Gold answers with the answerability rule applied: a not-answerable
    /// record scores against the literal span "not answerable".
    pub fn gold_answers(&self) -> Option<Vec<ConditionedAnswer>> {
        if self.unlabeled {
            return None;
        }
        if self.not_answerable {
            return Some(vec![ConditionedAnswer::unconditional("not answerable")]);
        }
        if self.answers.is_empty() {
            return None;
        }
        Some(self.answers.clone())
    }

    pub fn is_yes_no(&self) -> bool {
        !self.not_answerable
            && !self.answers.is_empty()
            && self
                .answers
                .iter()
                .all(|a| matches!(a.text.trim().to_ascii_lowercase().as_str(), "yes" | "no"))
    }

    pub fn is_conditional(&self) -> bool {
        self.answers.iter().any(|a| !a.conditions.is_empty())
    }

    pub fn answer_type(&self) -> Option<AnswerType> {
        if self.unlabeled {
            None
        } else if self.is_yes_no() {
            Some(AnswerType::YesNo)
        } else {
            Some(AnswerType::Extractive)
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

fn schema_err(path: &Path, at: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        path: path.display().to_string(),
        at: at.into(),
        message: message.into(),
    }
}

fn read_json_file(path: &Path) -> Result<Value, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&raw).map_err(|e| DatasetError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn expect_array<'a>(path: &Path, v: &'a Value, at: &str) -> Result<&'a Vec<Value>, DatasetError> {
    v.as_array().ok_or_else(|| schema_err(path, at, "expected a JSON array"))
}

fn field<'a>(path: &Path, obj: &'a Value, at: &str, key: &str) -> Result<&'a Value, DatasetError> {
    obj.get(key).ok_or_else(|| schema_err(path, at, format!("missing field `{key}`")))
}

fn str_field(path: &Path, obj: &Value, at: &str, key: &str) -> Result<String, DatasetError> {
    field(path, obj, at, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| schema_err(path, at, format!("field `{key}` must be a string")))
}

fn string_array(path: &Path, v: &Value, at: &str) -> Result<Vec<String>, DatasetError> {
    let arr = expect_array(path, v, at)?;
    arr.iter()
        .enumerate()
        .map(|(i, item)| {
            item.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema_err(path, format!("{at}[{i}]"), "expected a string"))
        })
        .collect()
}

fn parse_answer_pair(path: &Path, v: &Value, at: &str) -> Result<ConditionedAnswer, DatasetError> {
    let pair = expect_array(path, v, at)?;
    if pair.len() != 2 {
        return Err(schema_err(path, at, "expected a [span, conditions] pair"));
    }
    let text = pair[0]
        .as_str()
        .ok_or_else(|| schema_err(path, format!("{at}[0]"), "answer span must be a string"))?
        .to_string();
    let conditions = string_array(path, &pair[1], &format!("{at}[1]"))?;
    Ok(ConditionedAnswer { text, conditions })
}

/// Parses a ConditionalQA question file into records, validating the schema
/// field by field so errors point at the offending spot.
pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let root = read_json_file(path)?;
    let records = expect_array(path, &root, "$")?;
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let at = format!("$[{i}]");
        if !rec.is_object() {
            return Err(schema_err(path, &at, "expected an object"));
        }
        let id = str_field(path, rec, &at, "id")?;
        let url = str_field(path, rec, &at, "url")?;
        let question = str_field(path, rec, &at, "question")?;
        let scenario = str_field(path, rec, &at, "scenario")?;
        let answers = match rec.get("answers") {
            Some(v) => {
                let arr = expect_array(path, v, &format!("{at}.answers"))?;
                arr.iter()
                    .enumerate()
                    .map(|(j, a)| parse_answer_pair(path, a, &format!("{at}.answers[{j}]")))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => Vec::new(),
        };
        let not_answerable = match rec.get("not_answerable") {
            Some(v) => Some(v.as_bool().ok_or_else(|| {
                schema_err(path, &at, "field `not_answerable` must be a boolean")
            })?),
            None => None,
        };
        let evidences = match rec.get("evidences") {
            Some(v) => string_array(path, v, &format!("{at}.evidences"))?,
            None => Vec::new(),
        };
        let unlabeled = rec.get("answers").is_none() && not_answerable.is_none();
        out.push(QuestionRecord {
            id,
            url,
            question,
            scenario,
            answers,
            evidences,
            not_answerable: not_answerable.unwrap_or(false),
            unlabeled,
        });
    }
    Ok(out)
}

/// Parses a ConditionalQA document file into a url -> tagged lines map.
pub fn load_documents(path: &Path) -> Result<BTreeMap<String, Vec<String>>, DatasetError> {
    let root = read_json_file(path)?;
    let records = expect_array(path, &root, "$")?;
    let mut out = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let at = format!("$[{i}]");
        let url = str_field(path, rec, &at, "url")?;
        let contents = string_array(
            path,
            field(path, rec, &at, "contents")?,
            &format!("{at}.contents"),
        )?;
        out.insert(url, contents);
    }
    Ok(out)
}

/// Joins the question and document files into pipeline-ready examples, in
/// question-file order.
pub fn load_conditionalqa(
    documents_path: &Path,
    questions_path: &Path,
) -> Result<Vec<Example>, DatasetError> {
    let documents = load_documents(documents_path)?;
    let questions = load_questions(questions_path)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        if !seen.insert(q.id.clone()) {
            return Err(DatasetError::DuplicateId { id: q.id });
        }
        let doc = documents.get(&q.url).ok_or_else(|| DatasetError::MissingDocument {
            question_id: q.id.clone(),
            url: q.url.clone(),
        })?;
        out.push(Example {
            answer_type: q.answer_type(),
            gold_answers: q.gold_answers(),
            gold_evidence: if q.evidences.is_empty() { None } else { Some(q.evidences.clone()) },
            id: q.id,
            question: q.question,
            scenario: q.scenario,
            history: String::new(),
            document_lines: doc.clone(),
        });
    }
    Ok(out)
}

/// Maps a raw ShARC answer field onto the three-way label vocabulary.
/// Anything that is not yes/no/irrelevant is a follow-up question, which
/// means more information is needed. Returns `None` for irrelevant records.
fn sharc_label(raw: &str) -> Option<&'static str> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "yes" => Some("yes"),
        "no" => Some("no"),
        "irrelevant" => None,
        _ => Some("not enough information"),
    }
}

fn fold_history(history: &[(String, String)]) -> String {
    let qa: Vec<String> = history
        .iter()
        .map(|(q, a)| {
            let q = q.trim();
            if q.ends_with('?') {
                format!("Q: {} A: {}", q, a.trim())
            } else {
                format!("Q: {}? A: {}", q, a.trim())
            }
        })
        .collect();
    qa.join("; ")
}

/// Loads ShARC, drops irrelevant records, and splits the rest into two
/// near-equal partitions by shuffling the lexicographically sorted ids with
/// a ChaCha8 generator seeded as given. Both partitions come back sorted by
/// id.
pub fn load_sharc_partitions(
    path: &Path,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), DatasetError> {
    let root = read_json_file(path)?;
    let records = expect_array(path, &root, "$")?;
    let mut examples: BTreeMap<String, Example> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let at = format!("$[{i}]");
        let id = str_field(path, rec, &at, "utterance_id")?;
        let snippet = str_field(path, rec, &at, "snippet")?;
        let question = str_field(path, rec, &at, "question")?;
        let scenario = str_field(path, rec, &at, "scenario")?;
        let answer = str_field(path, rec, &at, "answer")?;
        let history = match rec.get("history") {
            Some(v) => {
                let arr = expect_array(path, v, &format!("{at}.history"))?;
                arr.iter()
                    .enumerate()
                    .map(|(j, h)| {
                        let hat = format!("{at}.history[{j}]");
                        Ok((
                            str_field(path, h, &hat, "follow_up_question")?,
                            str_field(path, h, &hat, "follow_up_answer")?,
                        ))
                    })
                    .collect::<Result<Vec<_>, DatasetError>>()?
            }
            None => Vec::new(),
        };
        let Some(label) = sharc_label(&answer) else { continue };
        if examples.contains_key(&id) {
            return Err(DatasetError::DuplicateId { id });
        }
        examples.insert(
            id.clone(),
            Example {
                id,
                question,
                scenario: scenario.trim().to_string(),
                history: fold_history(&history),
                document_lines: snippet.lines().map(str::to_string).collect(),
                gold_answers: Some(vec![ConditionedAnswer::unconditional(label)]),
                gold_evidence: None,
                answer_type: None,
            },
        );
    }

    let mut ids: Vec<String> = examples.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let cut = ids.len() / 2;
    let mut first: Vec<String> = ids[..cut].to_vec();
    let mut second: Vec<String> = ids[cut..].to_vec();
    first.sort();
    second.sort();
    let take = |chosen: &[String], pool: &BTreeMap<String, Example>| {
        chosen.iter().map(|id| pool[id].clone()).collect::<Vec<_>>()
    };
    Ok((take(&first, &examples), take(&second, &examples)))
}

/// The partition experiments run on: the first half of the seeded split.
pub fn load_sharc(path: &Path, seed: u64) -> Result<Vec<Example>, DatasetError> {
    Ok(load_sharc_partitions(path, seed)?.0)
}

/// Reads a prediction JSONL file. Blank lines are skipped; anything else
/// that fails to parse is reported with its line number.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Line {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        out.push(record);
    }
    Ok(out)
}

/// Serializes one prediction as a JSONL line.
pub fn prediction_line(record: &PredictionRecord) -> String {
    let mut line = serde_json::to_string(record).expect("prediction records always serialize");
    line.push('\n');
    line
}

pub fn append_prediction(
    writer: &mut impl Write,
    record: &PredictionRecord,
) -> std::io::Result<()> {
    writer.write_all(prediction_line(record).as_bytes())?;
    writer.flush()
}

/// Writes a whole prediction file at once.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), DatasetError> {
    let mut buf = String::new();
    for record in records {
        buf.push_str(&prediction_line(record));
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}
