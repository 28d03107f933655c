//! Core data types shared across the pipeline: conditions, condition groups,
//! logical expressions over them, verification verdicts, and predictions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable identifier for a condition inside an expression.
///
/// Generated ids encode the group index and the position within the group
/// (`g2.c0` is the first condition of the third group), but any non-empty
/// string is accepted when expressions are read from files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub String);

impl ConditionId {
    pub fn generated(group: usize, position: usize) -> Self {
        ConditionId(format!("g{group}.c{position}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConditionId {
    fn from(s: &str) -> Self {
        ConditionId(s.to_string())
    }
}

/// A single extracted condition. `text` is the raw segment as emitted by the
/// identification step and may still carry markup tags such as `<li>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub id: ConditionId,
    pub text: String,
    /// Id of the document element this condition was matched to, if located.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_ref: Option<usize>,
    /// Context passage attached during augmentation, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl Condition {
    pub fn new(id: ConditionId, text: impl Into<String>) -> Self {
        Condition { id, text: text.into(), element_ref: None, context: None }
    }
}

/// Connective applied within a group (and between groups at the top level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicalOperator {
    And,
    Or,
}

impl fmt::Display for LogicalOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalOperator::And => f.write_str("and"),
            LogicalOperator::Or => f.write_str("or"),
        }
    }
}

/// A group of conditions joined by a single operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionGroup {
    pub conditions: Vec<Condition>,
    pub operator: LogicalOperator,
}

/// A full logical expression: groups combined by `top_operator`.
///
/// An expression with no groups is valid and means the answer does not
/// depend on any condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionExpression {
    pub groups: Vec<ConditionGroup>,
    pub top_operator: LogicalOperator,
}

impl ConditionExpression {
    pub fn empty() -> Self {
        ConditionExpression { groups: Vec::new(), top_operator: LogicalOperator::And }
    }

    pub fn from_groups(groups: Vec<ConditionGroup>, top_operator: LogicalOperator) -> Self {
        ConditionExpression { groups, top_operator }
    }

    /// All conditions in expression order: group order, then member order.
    pub fn conditions(&self) -> impl Iterator<Item = &Condition> {
        self.groups.iter().flat_map(|g| g.conditions.iter())
    }

    pub fn condition_count(&self) -> usize {
        self.groups.iter().map(|g| g.conditions.len()).sum()
    }

    pub fn find_condition(&self, id: &ConditionId) -> Option<&Condition> {
        self.conditions().find(|c| &c.id == id)
    }
}

/// Verdict assigned to one condition by the verification step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Satisfied,
    Contradicted,
    NotMentioned,
}

impl fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerificationStatus::Satisfied => f.write_str("satisfied"),
            VerificationStatus::Contradicted => f.write_str("contradicted"),
            VerificationStatus::NotMentioned => f.write_str("not mentioned"),
        }
    }
}

/// Mapping from condition id to verdict. Kept ordered so serialized output
/// is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerdictMap {
    pub entries: BTreeMap<ConditionId, VerificationStatus>,
}

impl VerdictMap {
    pub fn new() -> Self {
        VerdictMap::default()
    }

    pub fn insert(&mut self, id: ConditionId, status: VerificationStatus) {
        self.entries.insert(id, status);
    }

    pub fn get(&self, id: &ConditionId) -> Option<VerificationStatus> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids of conditions in `expr` that have no verdict.
    pub fn missing_for(&self, expr: &ConditionExpression) -> Vec<ConditionId> {
        expr.conditions()
            .filter(|c| !self.entries.contains_key(&c.id))
            .map(|c| c.id.clone())
            .collect()
    }
}

impl FromIterator<(ConditionId, VerificationStatus)> for VerdictMap {
    fn from_iter<T: IntoIterator<Item = (ConditionId, VerificationStatus)>>(iter: T) -> Self {
        VerdictMap { entries: iter.into_iter().collect() }
    }
}

/// Classification of a group or of the final answer.
///
/// `Deterministic` means the outcome does not hinge on any unverified
/// condition; `Conditional` means at least one not-mentioned condition is
/// still load-bearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerClass {
    Deterministic,
    Conditional,
}

/// Group-level status uses the same two-way classification as the answer.
pub type GroupStatus = AnswerClass;

impl fmt::Display for AnswerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerClass::Deterministic => f.write_str("deterministic"),
            AnswerClass::Conditional => f.write_str("conditional"),
        }
    }
}

/// A structural problem found in an expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpressionViolation {
    EmptyGroup { group: usize },
    BlankConditionText { group: usize, position: usize },
    DuplicateConditionId { id: ConditionId },
}

impl fmt::Display for ExpressionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpressionViolation::EmptyGroup { group } => {
                write!(f, "group {group} has no conditions")
            }
            ExpressionViolation::BlankConditionText { group, position } => {
                write!(f, "condition {position} in group {group} has blank text")
            }
            ExpressionViolation::DuplicateConditionId { id } => {
                write!(f, "condition id {id} appears more than once")
            }
        }
    }
}

/// Checks structural invariants: groups non-empty, condition texts non-blank,
/// ids unique across the whole expression. Returns every violation found.
pub fn validate_expression(expr: &ConditionExpression) -> Vec<ExpressionViolation> {
    let mut violations = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (gi, group) in expr.groups.iter().enumerate() {
        if group.conditions.is_empty() {
            violations.push(ExpressionViolation::EmptyGroup { group: gi });
        }
        for (ci, cond) in group.conditions.iter().enumerate() {
            if cond.text.trim().is_empty() {
                violations.push(ExpressionViolation::BlankConditionText { group: gi, position: ci });
            }
            if !seen.insert(cond.id.clone()) {
                violations.push(ExpressionViolation::DuplicateConditionId { id: cond.id.clone() });
            }
        }
    }
    violations
}

/// Final output for one question.
///
/// `missing_conditions` holds the raw texts of the conditions the answer
/// still depends on; it is non-empty exactly when `answer_class` is
/// `Conditional`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answers: Vec<String>,
    pub answer_class: AnswerClass,
    pub missing_conditions: Vec<String>,
    pub trace: Trace,
}

/// One line of the prediction JSONL file. The trace itself lives in a
/// separate per-question file referenced by `trace_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answers: Vec<String>,
    pub answer_class: AnswerClass,
    pub missing_conditions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

impl PredictionRecord {
    pub fn from_prediction(p: &Prediction, trace_ref: Option<String>) -> Self {
        PredictionRecord {
            id: p.id.clone(),
            answers: p.answers.clone(),
            answer_class: p.answer_class,
            missing_conditions: p.missing_conditions.clone(),
            trace_ref,
        }
    }
}

/// Pipeline stage a trace step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStage {
    Retrieval,
    DraftAnswer,
    Identification,
    Augmentation,
    Verification,
    AnswerGeneration,
}

/// One recorded step: the prompt sent, the raw completion, and whatever was
/// parsed out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub stage: TraceStage,
    /// Free-form marker, e.g. the condition id a verification call was for.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<serde_json::Value>,
}

/// Complete audit record for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub example_id: String,
    pub steps: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<ConditionExpression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<VerdictMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<crate::solver::SolveResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_audit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn new(example_id: impl Into<String>) -> Self {
        Trace { example_id: example_id.into(), ..Trace::default() }
    }

    pub fn push_step(&mut self, step: TraceStep) {
        self.steps.push(step);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }
}
