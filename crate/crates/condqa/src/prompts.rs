//! Prompt templates and completion parsers.
//!
//! Templates live in data files under `templates/` with three kinds of
//! sections separated by marker lines:
//!
//! ```text
//! <instruction>
//! <<<EXEMPLAR>>>
//! <worked example, repeated>
//! <<<QUERY>>>
//! <query skeleton with {placeholder} tokens>
//! ```
//!
//! A prompt is the instruction, the first N exemplars, and the filled query
//! skeleton, joined by blank lines. The parsers in this module invert the
//! response formats those templates ask for.

use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::dataset::DatasetKind;
use crate::document::strip_markup;
use crate::model::{
    Condition, ConditionExpression, ConditionGroup, ConditionId, LogicalOperator,
    VerificationStatus,
};

const EXEMPLAR_MARK: &str = "<<<EXEMPLAR>>>";
const QUERY_MARK: &str = "<<<QUERY>>>";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template has no {QUERY_MARK} section")]
    MissingQuery,
    #[error("template has more than one {QUERY_MARK} section")]
    DuplicateQuery,
    #[error("template sections found after the {QUERY_MARK} section")]
    TrailingSection,
    #[error("template instruction is empty")]
    EmptyInstruction,
    #[error("template query skeleton is empty")]
    EmptyQuery,
}

/// One parsed prompt template: instruction text, worked exemplars, and the
/// query skeleton that gets its placeholders filled per call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub instruction: String,
    pub exemplars: Vec<String>,
    pub query: String,
}

pub fn parse_template(text: &str) -> Result<Template, TemplateError> {
    enum Section {
        Instruction,
        Exemplar,
        Query,
    }
    let mut blocks: Vec<(Section, Vec<&str>)> = vec![(Section::Instruction, Vec::new())];
    for line in text.lines() {
        match line {
            EXEMPLAR_MARK => {
                if matches!(blocks.last().unwrap().0, Section::Query) {
                    return Err(TemplateError::TrailingSection);
                }
                blocks.push((Section::Exemplar, Vec::new()));
            }
            QUERY_MARK => {
                if blocks.iter().any(|(s, _)| matches!(s, Section::Query)) {
                    return Err(TemplateError::DuplicateQuery);
                }
                blocks.push((Section::Query, Vec::new()));
            }
            _ => blocks.last_mut().unwrap().1.push(line),
        }
    }

    let mut instruction = String::new();
    let mut exemplars = Vec::new();
    let mut query = None;
    for (section, lines) in blocks {
        let body = lines.join("\n").trim_matches('\n').to_string();
        match section {
            Section::Instruction => instruction = body,
            Section::Exemplar => exemplars.push(body),
            Section::Query => query = Some(body),
        }
    }
    let query = query.ok_or(TemplateError::MissingQuery)?;
    if instruction.is_empty() {
        return Err(TemplateError::EmptyInstruction);
    }
    if query.is_empty() {
        return Err(TemplateError::EmptyQuery);
    }
    Ok(Template { instruction, exemplars, query })
}

pub fn load_template(path: &Path) -> Result<Template, TemplateError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
    parse_template(&text)
}

/// The three per-step templates the pipeline uses for one dataset.
#[derive(Debug, Clone)]
pub struct StepTemplates {
    pub identification: Template,
    pub verification: Template,
    pub answer: Template,
}

/// How many exemplars each step keeps from its template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
pub struct ExemplarCounts {
    pub identification: usize,
    pub verification: usize,
    pub answer: usize,
}

impl Default for ExemplarCounts {
    fn default() -> Self {
        ExemplarCounts { identification: 4, verification: 6, answer: 4 }
    }
}

fn must_parse(name: &str, text: &str) -> Template {
    parse_template(text).unwrap_or_else(|e| panic!("built-in template {name} is malformed: {e}"))
}

pub fn builtin_step_templates(kind: DatasetKind) -> &'static StepTemplates {
    static CQA: OnceLock<StepTemplates> = OnceLock::new();
    static SHARC: OnceLock<StepTemplates> = OnceLock::new();
    match kind {
        DatasetKind::Conditionalqa => CQA.get_or_init(|| StepTemplates {
            identification: must_parse(
                "cqa_identification",
                include_str!("../templates/cqa_identification.txt"),
            ),
            verification: must_parse(
                "cqa_verification",
                include_str!("../templates/cqa_verification.txt"),
            ),
            answer: must_parse("cqa_answer", include_str!("../templates/cqa_answer.txt")),
        }),
        DatasetKind::Sharc => SHARC.get_or_init(|| StepTemplates {
            identification: must_parse(
                "sharc_identification",
                include_str!("../templates/sharc_identification.txt"),
            ),
            verification: must_parse(
                "sharc_verification",
                include_str!("../templates/sharc_verification.txt"),
            ),
            answer: must_parse("sharc_answer", include_str!("../templates/sharc_answer.txt")),
        }),
    }
}

pub fn builtin_zero_shot(kind: DatasetKind) -> &'static Template {
    static CQA: OnceLock<Template> = OnceLock::new();
    static SHARC: OnceLock<Template> = OnceLock::new();
    match kind {
        DatasetKind::Conditionalqa => CQA.get_or_init(|| {
            must_parse("cqa_zero_shot", include_str!("../templates/cqa_zero_shot.txt"))
        }),
        DatasetKind::Sharc => SHARC.get_or_init(|| {
            must_parse("sharc_zero_shot", include_str!("../templates/sharc_zero_shot.txt"))
        }),
    }
}

pub fn builtin_cot(kind: DatasetKind) -> &'static Template {
    static CQA: OnceLock<Template> = OnceLock::new();
    static SHARC: OnceLock<Template> = OnceLock::new();
    match kind {
        DatasetKind::Conditionalqa => {
            CQA.get_or_init(|| must_parse("cqa_cot", include_str!("../templates/cqa_cot.txt")))
        }
        DatasetKind::Sharc => SHARC
            .get_or_init(|| must_parse("sharc_cot", include_str!("../templates/sharc_cot.txt"))),
    }
}

pub fn builtin_draft() -> &'static Template {
    static DRAFT: OnceLock<Template> = OnceLock::new();
    DRAFT.get_or_init(|| must_parse("cqa_draft", include_str!("../templates/cqa_draft.txt")))
}

pub fn builtin_summarize() -> &'static Template {
    static SUMMARIZE: OnceLock<Template> = OnceLock::new();
    SUMMARIZE.get_or_init(|| must_parse("summarize", include_str!("../templates/summarize.txt")))
}

/// Substitutes `{name}` tokens that have a fill value; anything else,
/// including braces inside fill values, passes through untouched.
fn fill_placeholders(query: &str, fills: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(query.len() + 256);
    let mut rest = query;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        if let Some(close) = after.find('}') {
            let name = &after[1..close];
            for (key, value) in fills {
                if *key == name {
                    out.push_str(value);
                    rest = &after[close + 1..];
                    continue 'scan;
                }
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

/// Assembles a full prompt: instruction, the first `exemplar_count`
/// exemplars, and the filled query, joined by blank lines.
pub fn render_prompt(template: &Template, exemplar_count: usize, fills: &[(&str, &str)]) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(exemplar_count + 2);
    parts.push(&template.instruction);
    for exemplar in template.exemplars.iter().take(exemplar_count) {
        parts.push(exemplar);
    }
    let query = fill_placeholders(&template.query, fills);
    parts.push(&query);
    let mut prompt = parts.join("\n\n");
    prompt.push('\n');
    prompt
}

pub fn identification_prompt(
    template: &Template,
    exemplar_count: usize,
    document: &str,
    question: &str,
    suggested_answer: Option<&str>,
) -> String {
    render_prompt(
        template,
        exemplar_count,
        &[
            ("document", document),
            ("question", question),
            ("suggested_answer", suggested_answer.unwrap_or("")),
        ],
    )
}

pub fn verification_prompt(
    template: &Template,
    exemplar_count: usize,
    document: &str,
    segment: &str,
    question: &str,
    suggested_answer: Option<&str>,
    known_information: Option<&str>,
) -> String {
    render_prompt(
        template,
        exemplar_count,
        &[
            ("document", document),
            ("segment", segment),
            ("question", question),
            ("suggested_answer", suggested_answer.unwrap_or("")),
            ("known_information", known_information.unwrap_or("None")),
        ],
    )
}

pub fn answer_prompt(
    template: &Template,
    exemplar_count: usize,
    document: &str,
    question: &str,
    known_information: &str,
    answer_type: Option<&str>,
) -> String {
    render_prompt(
        template,
        exemplar_count,
        &[
            ("document", document),
            ("question", question),
            ("known_information", known_information),
            ("answer_type", answer_type.unwrap_or("extractive")),
        ],
    )
}

/// Prompt for templates whose query takes only a document and a question
/// (zero-shot, chain-of-thought, draft answers).
pub fn freeform_prompt(
    template: &Template,
    exemplar_count: usize,
    document: &str,
    question: &str,
) -> String {
    render_prompt(template, exemplar_count, &[("document", document), ("question", question)])
}

pub fn summarize_prompt(template: &Template, document: &str, segment: &str) -> String {
    render_prompt(template, 0, &[("document", document), ("segment", segment)])
}

/// Renders verified conditions (and any dialog history) the way answer
/// prompts expect their known information: "Q: <condition>? A: <verdict>"
/// clauses joined by semicolons, or "None" when nothing is known.
pub fn format_known_information(
    history: &str,
    verdicts: &[(String, VerificationStatus)],
) -> String {
    let mut clauses: Vec<String> = Vec::new();
    let history = history.trim();
    if !history.is_empty() {
        clauses.push(history.to_string());
    }
    for (text, status) in verdicts {
        let stated = capitalize_first(strip_markup(text).trim());
        let question = if stated.ends_with('?') { stated } else { format!("{stated}?") };
        let answer = match status {
            VerificationStatus::Satisfied => "Yes",
            VerificationStatus::Contradicted => "No",
            VerificationStatus::NotMentioned => "Not mentioned",
        };
        clauses.push(format!("Q: {question} A: {answer}"));
    }
    if clauses.is_empty() {
        "None".to_string()
    } else {
        clauses.join("; ")
    }
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// The response part of an exemplar block: everything after its
/// "- Response:" line. Used to check that exemplars parse with the same
/// code that parses live completions.
pub fn exemplar_response(exemplar: &str) -> Option<&str> {
    let pos = exemplar.find("- Response:")?;
    let rest = &exemplar[pos..];
    let newline = rest.find('\n')?;
    Some(rest[newline + 1..].trim_matches('\n'))
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("completion has no `{marker}` line")]
    MissingMarker { marker: &'static str },
    #[error("malformed condition JSON: {message}")]
    BadConditionJson { message: String },
    #[error("unknown relationship `{value}`, expected `and` or `or`")]
    BadRelationship { value: String },
    #[error("unknown satisfaction label `{label}`")]
    BadSatisfactionLabel { label: String },
    #[error("answer line is empty")]
    EmptyAnswer,
    #[error("answer `{answer}` is not in the label vocabulary")]
    BadAnswer { answer: String },
}

/// Condition group as models emit it in JSON.
#[derive(Debug, Deserialize)]
struct RawGroup {
    contents: Vec<String>,
    relationship: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGroups {
    Many(Vec<RawGroup>),
    One(RawGroup),
}

/// Deserializes the first complete JSON value in `text`, ignoring whatever
/// trails it.
fn first_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let mut stream = serde_json::Deserializer::from_str(text).into_iter::<T>();
    match stream.next() {
        Some(Ok(value)) => Ok(value),
        Some(Err(e)) => Err(ParseError::BadConditionJson { message: e.to_string() }),
        None => Err(ParseError::BadConditionJson { message: "no JSON value found".to_string() }),
    }
}

fn parse_operator(raw: &str) -> Result<LogicalOperator, ParseError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "and" => Ok(LogicalOperator::And),
        "or" => Ok(LogicalOperator::Or),
        _ => Err(ParseError::BadRelationship { value: raw.trim().to_string() }),
    }
}

/// Parses an identification completion into a condition expression.
///
/// The JSON after the last "Conditions:" marker may be a list of groups or a
/// single bare group object; both forms appear in practice. Blank contents
/// are dropped, and a group with no contents left disappears entirely, so an
/// empty expression is a legitimate outcome.
pub fn parse_identification(completion: &str) -> Result<ConditionExpression, ParseError> {
    let lower = completion.to_ascii_lowercase();
    let pos = lower
        .rfind("conditions:")
        .ok_or(ParseError::MissingMarker { marker: "Conditions:" })?;
    let rest = &completion[pos + "conditions:".len()..];

    let array_at = rest.find('[');
    let object_at = rest.find('{');
    let raw_groups = match (array_at, object_at) {
        (Some(a), Some(o)) if o < a => vec![first_json::<RawGroup>(&rest[o..])?],
        (None, Some(o)) => vec![first_json::<RawGroup>(&rest[o..])?],
        (Some(a), _) => match first_json::<RawGroups>(&rest[a..])? {
            RawGroups::Many(groups) => groups,
            RawGroups::One(group) => vec![group],
        },
        (None, None) => {
            return Err(ParseError::BadConditionJson {
                message: "no JSON value after the marker".to_string(),
            })
        }
    };

    let mut groups: Vec<ConditionGroup> = Vec::new();
    for raw in raw_groups {
        let operator = parse_operator(&raw.relationship)?;
        let texts: Vec<&str> =
            raw.contents.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
        if texts.is_empty() {
            continue;
        }
        let group_index = groups.len();
        let conditions = texts
            .iter()
            .enumerate()
            .map(|(i, text)| Condition::new(ConditionId::generated(group_index, i), *text))
            .collect();
        groups.push(ConditionGroup { conditions, operator });
    }
    Ok(ConditionExpression::from_groups(groups, LogicalOperator::And))
}

/// Lowercases, drops quote and period characters, and collapses whitespace,
/// so label comparisons survive cosmetic variation.
fn normalize_label(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .replace('_', " ")
        .chars()
        .filter(|c| !matches!(c, '"' | '\'' | '.' | '`' | '*' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}'))
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses a verification completion: the label on the first "Satisfaction:"
/// line. The misspelling "satified" counts as satisfied because the prompt
/// instruction itself spells it that way.
pub fn parse_verification(completion: &str) -> Result<VerificationStatus, ParseError> {
    let lower = completion.to_ascii_lowercase();
    let pos = lower
        .find("satisfaction:")
        .ok_or(ParseError::MissingMarker { marker: "Satisfaction:" })?;
    let rest = &completion[pos + "satisfaction:".len()..];
    let line = rest.lines().next().unwrap_or("");
    match normalize_label(line).as_str() {
        "satisfied" | "satified" => Ok(VerificationStatus::Satisfied),
        "contradicted" => Ok(VerificationStatus::Contradicted),
        "not mentioned" => Ok(VerificationStatus::NotMentioned),
        _ => Err(ParseError::BadSatisfactionLabel { label: line.trim().to_string() }),
    }
}

/// Final answer of an answer-generation completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedAnswer {
    Yes,
    No,
    NotAnswerable,
    NotEnoughInformation,
    Span(String),
}

impl ParsedAnswer {
    /// The string stored in prediction files, matching each dataset's label
    /// vocabulary for closed-class answers.
    pub fn answer_text(&self) -> &str {
        match self {
            ParsedAnswer::Yes => "yes",
            ParsedAnswer::No => "no",
            ParsedAnswer::NotAnswerable => "not answerable",
            ParsedAnswer::NotEnoughInformation => "not enough information",
            ParsedAnswer::Span(s) => s,
        }
    }
}

/// Parses an answer completion: the text on the last "Answer:" line that is
/// not a "Suggested Answer:" echo. Extractive spans are only possible for
/// ConditionalQA; an out-of-vocabulary answer is an error under ShARC.
pub fn parse_answer(completion: &str, kind: DatasetKind) -> Result<ParsedAnswer, ParseError> {
    let lower = completion.to_ascii_lowercase();
    let marker = "answer:";
    let mut search_end = lower.len();
    let pos = loop {
        let Some(p) = lower[..search_end].rfind(marker) else {
            return Err(ParseError::MissingMarker { marker: "Answer:" });
        };
        if lower[..p].ends_with("suggested ") {
            search_end = p;
            continue;
        }
        break p;
    };
    let rest = &completion[pos + marker.len()..];
    let line = rest.lines().next().unwrap_or("").trim();
    let text = line.trim_matches(|c| matches!(c, '"' | '\u{201c}' | '\u{201d}')).trim();
    let text = text.strip_suffix('.').unwrap_or(text).trim();
    if text.is_empty() {
        return Err(ParseError::EmptyAnswer);
    }
    let label = normalize_label(text);
    match kind {
        DatasetKind::Conditionalqa => Ok(match label.as_str() {
            "yes" => ParsedAnswer::Yes,
            "no" => ParsedAnswer::No,
            "not answerable" | "unanswerable" => ParsedAnswer::NotAnswerable,
            _ => ParsedAnswer::Span(text.to_string()),
        }),
        DatasetKind::Sharc => match label.as_str() {
            "yes" => Ok(ParsedAnswer::Yes),
            "no" => Ok(ParsedAnswer::No),
            "not enough information" => Ok(ParsedAnswer::NotEnoughInformation),
            _ => Err(ParseError::BadAnswer { answer: text.to_string() }),
        },
    }
}

/// Parses the "Conditions: [...]" trailer baseline completions may carry.
/// A missing marker or a marker without JSON means no conditions; malformed
/// JSON after a marker is an error.
pub fn parse_conditions_trailer(completion: &str) -> Result<Vec<String>, ParseError> {
    let lower = completion.to_ascii_lowercase();
    let Some(pos) = lower.rfind("conditions:") else {
        return Ok(Vec::new());
    };
    let rest = &completion[pos + "conditions:".len()..];
    let Some(start) = rest.find('[') else {
        return Ok(Vec::new());
    };
    let items: Vec<String> = first_json(&rest[start..])?;
    Ok(items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
}

/// Extracts the value of a `marker` line ("Answer:", "Summary:"), falling
/// back to the first non-empty line when the completion skips the marker.
/// Used for the single-line draft and summarization calls.
pub fn parse_marked_line(completion: &str, marker: &str) -> String {
    let lower = completion.to_ascii_lowercase();
    let needle = marker.to_ascii_lowercase();
    if let Some(pos) = lower.rfind(&needle) {
        let rest = &completion[pos + needle.len()..];
        for line in rest.lines() {
            let line = line.trim();
            if !line.is_empty() {
                return line.to_string();
            }
        }
    }
    completion.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_splits_into_sections() {
        let text = "instruction line\n<<<EXEMPLAR>>>\nfirst\n<<<EXEMPLAR>>>\nsecond\n<<<QUERY>>>\n- Question: {question}\n- Response:\n";
        let t = parse_template(text).unwrap();
        assert_eq!(t.instruction, "instruction line");
        assert_eq!(t.exemplars, vec!["first", "second"]);
        assert_eq!(t.query, "- Question: {question}\n- Response:");
    }

    #[test]
    fn template_without_query_is_an_error() {
        let err = parse_template("instruction\n<<<EXEMPLAR>>>\nex\n").unwrap_err();
        assert!(matches!(err, TemplateError::MissingQuery));
    }

    #[test]
    fn template_with_two_queries_is_an_error() {
        let err = parse_template("i\n<<<QUERY>>>\nq\n<<<QUERY>>>\nq2\n").unwrap_err();
        assert!(matches!(err, TemplateError::DuplicateQuery));
    }

    #[test]
    fn placeholders_fill_without_rescanning_values() {
        let out = fill_placeholders(
            "doc: {document} q: {question} unknown: {nope}",
            &[("document", "has {question} inside"), ("question", "why?")],
        );
        assert_eq!(out, "doc: has {question} inside q: why? unknown: {nope}");
    }

    #[test]
    fn rendered_prompt_joins_sections_with_blank_lines() {
        let t = Template {
            instruction: "- Do the thing.".to_string(),
            exemplars: vec!["- Question: a\n- Response:\nAnswer: b".to_string()],
            query: "- Question: {question}\n- Response:".to_string(),
        };
        let prompt = render_prompt(&t, 1, &[("question", "c")]);
        assert_eq!(
            prompt,
            "- Do the thing.\n\n- Question: a\n- Response:\nAnswer: b\n\n- Question: c\n- Response:\n"
        );
    }

    #[test]
    fn exemplar_count_is_capped_by_template_size() {
        let t = Template {
            instruction: "i".to_string(),
            exemplars: vec!["e1".to_string(), "e2".to_string()],
            query: "q".to_string(),
        };
        let with_two = render_prompt(&t, 99, &[]);
        assert_eq!(with_two, "i\n\ne1\n\ne2\n\nq\n");
        let with_one = render_prompt(&t, 1, &[]);
        assert_eq!(with_one, "i\n\ne1\n\nq\n");
    }

    #[test]
    fn builtin_templates_have_default_exemplar_counts() {
        for kind in [DatasetKind::Conditionalqa, DatasetKind::Sharc] {
            let steps = builtin_step_templates(kind);
            assert_eq!(steps.identification.exemplars.len(), 4, "{kind} identification");
            assert_eq!(steps.verification.exemplars.len(), 6, "{kind} verification");
            assert_eq!(steps.answer.exemplars.len(), 4, "{kind} answer");
            assert_eq!(builtin_cot(kind).exemplars.len(), 4, "{kind} cot");
            assert!(builtin_zero_shot(kind).exemplars.is_empty(), "{kind} zero-shot");
        }
        assert!(builtin_draft().exemplars.is_empty());
        assert!(builtin_summarize().exemplars.is_empty());
    }

    #[test]
    fn identification_parses_group_list() {
        let completion = "Reasoning: both needed.\nConditions: [{\"contents\": [\"<li>a</li>\", \"<li>b</li>\"], \"relationship\": \"and\"}, {\"contents\": [\"<li>c</li>\"], \"relationship\": \"or\"}]";
        let expr = parse_identification(completion).unwrap();
        assert_eq!(expr.groups.len(), 2);
        assert_eq!(expr.groups[0].operator, LogicalOperator::And);
        assert_eq!(expr.groups[1].operator, LogicalOperator::Or);
        assert_eq!(expr.groups[0].conditions[1].text, "<li>b</li>");
        assert_eq!(expr.groups[1].conditions[0].id.as_str(), "g1.c0");
    }

    #[test]
    fn identification_parses_bare_group_object() {
        let completion =
            "Reasoning: any works.\nConditions: {\"contents\": [\"x\", \"y\"], \"relationship\": \"or\"}";
        let expr = parse_identification(completion).unwrap();
        assert_eq!(expr.groups.len(), 1);
        assert_eq!(expr.groups[0].operator, LogicalOperator::Or);
        assert_eq!(expr.condition_count(), 2);
    }

    #[test]
    fn identification_drops_blank_contents_and_empty_groups() {
        let completion = "Conditions: [{\"contents\": [\" \", \"kept\"], \"relationship\": \"and\"}, {\"contents\": [], \"relationship\": \"or\"}]";
        let expr = parse_identification(completion).unwrap();
        assert_eq!(expr.groups.len(), 1);
        assert_eq!(expr.groups[0].conditions[0].text, "kept");
        assert_eq!(expr.groups[0].conditions[0].id.as_str(), "g0.c0");
    }

    #[test]
    fn identification_takes_json_after_the_last_marker() {
        let completion = "Conditions: [] is what I would say, but really:\nConditions: [{\"contents\": [\"a\"], \"relationship\": \"and\"}]";
        let expr = parse_identification(completion).unwrap();
        assert_eq!(expr.condition_count(), 1);
    }

    #[test]
    fn identification_empty_list_means_no_conditions() {
        let expr = parse_identification("Conditions: []").unwrap();
        assert!(expr.groups.is_empty());
    }

    #[test]
    fn identification_rejects_unknown_relationship() {
        let completion = "Conditions: [{\"contents\": [\"a\"], \"relationship\": \"xor\"}]";
        let err = parse_identification(completion).unwrap_err();
        assert_eq!(err, ParseError::BadRelationship { value: "xor".to_string() });
    }

    #[test]
    fn verification_reads_first_satisfaction_line() {
        let c = "Reasoning: the satisfaction of this condition is \"not mentioned\".\nSatisfaction: not mentioned\nSatisfaction: satisfied";
        assert_eq!(parse_verification(c).unwrap(), VerificationStatus::NotMentioned);
    }

    #[test]
    fn verification_accepts_label_variants() {
        for (line, want) in [
            ("Satisfaction: satisfied", VerificationStatus::Satisfied),
            ("Satisfaction: Satified.", VerificationStatus::Satisfied),
            ("satisfaction: \"Contradicted\"", VerificationStatus::Contradicted),
            ("Satisfaction: not_mentioned", VerificationStatus::NotMentioned),
            ("Satisfaction:   Not  Mentioned", VerificationStatus::NotMentioned),
        ] {
            assert_eq!(parse_verification(line).unwrap(), want, "line {line:?}");
        }
        let err = parse_verification("Satisfaction: maybe").unwrap_err();
        assert_eq!(err, ParseError::BadSatisfactionLabel { label: "maybe".to_string() });
        assert!(matches!(
            parse_verification("no marker here").unwrap_err(),
            ParseError::MissingMarker { .. }
        ));
    }

    #[test]
    fn answer_takes_last_marker_and_skips_suggested_echo() {
        let c = "The Suggested Answer: yes was given.\nReasoning: but the salary is too low.\nAnswer: No";
        assert_eq!(parse_answer(c, DatasetKind::Conditionalqa).unwrap(), ParsedAnswer::No);
    }

    #[test]
    fn answer_keeps_extractive_spans_verbatim() {
        let parsed = parse_answer("Answer: up to $120000", DatasetKind::Conditionalqa).unwrap();
        assert_eq!(parsed, ParsedAnswer::Span("up to $120000".to_string()));
        assert_eq!(parsed.answer_text(), "up to $120000");
        let trimmed = parse_answer("Answer: \"52 weeks.\"", DatasetKind::Conditionalqa).unwrap();
        assert_eq!(trimmed, ParsedAnswer::Span("52 weeks".to_string()));
    }

    #[test]
    fn sharc_answers_must_stay_in_vocabulary() {
        assert_eq!(
            parse_answer("Answer: Not enough information", DatasetKind::Sharc).unwrap(),
            ParsedAnswer::NotEnoughInformation
        );
        let err = parse_answer("Answer: probably", DatasetKind::Sharc).unwrap_err();
        assert_eq!(err, ParseError::BadAnswer { answer: "probably".to_string() });
    }

    #[test]
    fn conditions_trailer_is_lenient_about_missing_markers() {
        assert_eq!(parse_conditions_trailer("Answer: yes").unwrap(), Vec::<String>::new());
        assert_eq!(parse_conditions_trailer("Conditions: none").unwrap(), Vec::<String>::new());
        assert_eq!(
            parse_conditions_trailer("Answer: yes\nConditions: [\"<li>a</li>\", \" \"]").unwrap(),
            vec!["<li>a</li>".to_string()]
        );
        assert!(parse_conditions_trailer("Conditions: [\"unterminated").is_err());
    }

    #[test]
    fn marked_line_parser_handles_marker_and_fallback() {
        assert_eq!(parse_marked_line("Answer: send a tax return", "Answer:"), "send a tax return");
        assert_eq!(parse_marked_line("Summary:\n  You are employed.", "Summary:"), "You are employed.");
        assert_eq!(parse_marked_line("just the span", "Answer:"), "just the span");
        assert_eq!(parse_marked_line("", "Answer:"), "");
    }

    #[test]
    fn known_information_renders_verdicts_as_qa_clauses() {
        let verdicts = vec![
            ("<li>you earn at least £10,000 per year</li>".to_string(), VerificationStatus::Contradicted),
            ("you're classed as a 'worker'".to_string(), VerificationStatus::Satisfied),
            ("a partner in a business partnership".to_string(), VerificationStatus::NotMentioned),
        ];
        let got = format_known_information("", &verdicts);
        assert_eq!(
            got,
            "Q: You earn at least £10,000 per year? A: No; Q: You're classed as a 'worker'? A: Yes; Q: A partner in a business partnership? A: Not mentioned"
        );
    }

    #[test]
    fn known_information_folds_history_first_and_defaults_to_none() {
        let verdicts =
            vec![("You are retired".to_string(), VerificationStatus::Contradicted)];
        let got = format_known_information("Q: Are you working in the UK? A: No", &verdicts);
        assert_eq!(got, "Q: Are you working in the UK? A: No; Q: You are retired? A: No");
        assert_eq!(format_known_information("  ", &[]), "None");
    }

    #[test]
    fn builtin_exemplar_responses_parse_with_the_live_parsers() {
        for kind in [DatasetKind::Conditionalqa, DatasetKind::Sharc] {
            let steps = builtin_step_templates(kind);
            for ex in &steps.identification.exemplars {
                let response = exemplar_response(ex).expect("identification exemplar response");
                let expr = parse_identification(response).expect("identification parse");
                assert!(!expr.groups.is_empty());
            }
            for ex in &steps.verification.exemplars {
                let response = exemplar_response(ex).expect("verification exemplar response");
                parse_verification(response).expect("verification parse");
            }
            for ex in &steps.answer.exemplars {
                let response = exemplar_response(ex).expect("answer exemplar response");
                parse_answer(response, kind).expect("answer parse");
            }
            for ex in &builtin_cot(kind).exemplars {
                let response = exemplar_response(ex).expect("cot exemplar response");
                parse_answer(response, kind).expect("cot answer parse");
                parse_conditions_trailer(response).expect("cot trailer parse");
            }
        }
    }

    #[test]
    fn identification_prompt_fills_the_query_skeleton() {
        let steps = builtin_step_templates(DatasetKind::Conditionalqa);
        let prompt = identification_prompt(
            &steps.identification,
            1,
            "<h1>Doc</h1>\n<p>Line.</p>",
            "Am I eligible?",
            Some("yes"),
        );
        assert!(prompt.ends_with("- Provided Documents:\n<h1>Doc</h1>\n<p>Line.</p>\n- Question: Am I eligible?\n- Suggested Answer: yes\n- Response:\n"));
        assert!(prompt.starts_with("- Please find all the paragraphs"));
        assert_eq!(prompt.matches("- Response:").count(), 2);
    }
}
