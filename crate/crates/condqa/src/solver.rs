//! Deterministic resolution of a condition expression against verification
//! verdicts.
//!
//! The rules, in order:
//!
//! 1. A condition maps to `true` when its verdict is satisfied or
//!    contradicted (either way we *know* its state), and to `false` when it
//!    is not mentioned.
//! 2. A group short-circuits when its outcome no longer depends on the
//!    remaining members: an `or` group with a satisfied member, or an `and`
//!    group with a contradicted member.
//! 3. A non-shortcut group that still contains a not-mentioned member is
//!    `conditional`; every other group is `deterministic`.
//! 4. The unresolved set is every not-mentioned condition inside a
//!    conditional group, in expression order. The answer is `conditional`
//!    exactly when that set is non-empty. The top-level operator plays no
//!    part in it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AnswerClass, ConditionExpression, ConditionGroup, ConditionId, GroupStatus, LogicalOperator,
    VerdictMap, VerificationStatus,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("no verdict for condition(s): {}", .missing.iter().map(|id| id.as_str()).collect::<Vec<_>>().join(", "))]
    IncompleteVerdicts { missing: Vec<ConditionId> },
}

/// Everything `solve` derives from an expression and its verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveResult {
    pub answer_class: AnswerClass,
    /// Unresolved conditions in expression order.
    pub missing_conditions: Vec<ConditionId>,
    /// Indices of groups whose outcome no longer depends on unverified members.
    pub shortcut_groups: BTreeSet<usize>,
    /// Status of each group, in group order.
    pub group_status: Vec<GroupStatus>,
}

/// Boolean value a verdict contributes to expression evaluation. Knowing a
/// condition's state either way counts as `true`; only an unknown is `false`.
pub fn truth_value(status: VerificationStatus) -> bool {
    !matches!(status, VerificationStatus::NotMentioned)
}

fn require_total(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
) -> Result<(), SolveError> {
    let missing = verdicts.missing_for(expr);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(SolveError::IncompleteVerdicts { missing })
    }
}

fn group_is_shortcut(group: &ConditionGroup, verdicts: &VerdictMap) -> bool {
    match group.operator {
        LogicalOperator::Or => group
            .conditions
            .iter()
            .any(|c| verdicts.get(&c.id) == Some(VerificationStatus::Satisfied)),
        LogicalOperator::And => group
            .conditions
            .iter()
            .any(|c| verdicts.get(&c.id) == Some(VerificationStatus::Contradicted)),
    }
}

/// Indices of groups that short-circuit under the given verdicts.
pub fn shortcut_groups(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
) -> Result<BTreeSet<usize>, SolveError> {
    require_total(expr, verdicts)?;
    Ok(expr
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| group_is_shortcut(g, verdicts))
        .map(|(i, _)| i)
        .collect())
}

/// Status of the group at `group_index` given the precomputed shortcut set.
pub fn classify_group(
    group: &ConditionGroup,
    group_index: usize,
    verdicts: &VerdictMap,
    shortcuts: &BTreeSet<usize>,
) -> GroupStatus {
    let unmentioned = group
        .conditions
        .iter()
        .any(|c| verdicts.get(&c.id) == Some(VerificationStatus::NotMentioned));
    if unmentioned && !shortcuts.contains(&group_index) {
        GroupStatus::Conditional
    } else {
        GroupStatus::Deterministic
    }
}

/// Unresolved conditions: not-mentioned members of conditional groups, in
/// expression order.
pub fn missing_conditions(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
) -> Result<Vec<ConditionId>, SolveError> {
    Ok(solve(expr, verdicts)?.missing_conditions)
}

/// Conditional exactly when some condition is still unresolved.
pub fn classify_answer(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
) -> Result<AnswerClass, SolveError> {
    Ok(solve(expr, verdicts)?.answer_class)
}

/// Resolves the expression. Requires a verdict for every condition.
pub fn solve(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
) -> Result<SolveResult, SolveError> {
    let shortcuts = shortcut_groups(expr, verdicts)?;
    let mut group_status = Vec::with_capacity(expr.groups.len());
    let mut missing = Vec::new();
    for (i, group) in expr.groups.iter().enumerate() {
        let status = classify_group(group, i, verdicts, &shortcuts);
        group_status.push(status);
        if status == GroupStatus::Conditional {
            for cond in &group.conditions {
                if verdicts.get(&cond.id) == Some(VerificationStatus::NotMentioned) {
                    missing.push(cond.id.clone());
                }
            }
        }
    }
    let answer_class = if missing.is_empty() {
        AnswerClass::Deterministic
    } else {
        AnswerClass::Conditional
    };
    Ok(SolveResult { answer_class, missing_conditions: missing, shortcut_groups: shortcuts, group_status })
}

/// Renders a plain-text audit of a solve. Output is deterministic: the same
/// inputs always produce the same bytes.
pub fn emit_trace(
    expr: &ConditionExpression,
    verdicts: &VerdictMap,
    result: &SolveResult,
) -> String {
    let mut out = String::new();
    if expr.groups.is_empty() {
        out.push_str("no conditions; deterministic\n");
        return out;
    }
    out.push_str("conditions:\n");
    for (gi, group) in expr.groups.iter().enumerate() {
        for cond in &group.conditions {
            let status = verdicts
                .get(&cond.id)
                .expect("emit_trace called with the verdicts solve accepted");
            let _ = writeln!(
                out,
                "  {} [group {} {}] {:?} verdict={} -> {}",
                cond.id,
                gi,
                group.operator,
                cond.text,
                status,
                truth_value(status)
            );
        }
    }
    out.push_str("groups:\n");
    for (gi, group) in expr.groups.iter().enumerate() {
        let shortcut = if result.shortcut_groups.contains(&gi) {
            match group.operator {
                LogicalOperator::Or => "shortcut: OR group satisfied",
                LogicalOperator::And => "shortcut: AND group contradicted",
            }
        } else {
            "shortcut: none"
        };
        let _ = writeln!(
            out,
            "  group {} ({}): {}; status: {}",
            gi, group.operator, shortcut, result.group_status[gi]
        );
    }
    let _ = writeln!(out, "top operator: {}", expr.top_operator);
    let _ = writeln!(out, "answer class: {}", result.answer_class);
    if result.missing_conditions.is_empty() {
        out.push_str("missing conditions: none\n");
    } else {
        out.push_str("missing conditions:\n");
        for id in &result.missing_conditions {
            let text = expr.find_condition(id).map(|c| c.text.as_str()).unwrap_or("");
            let _ = writeln!(out, "  {} {:?}", id, text);
        }
    }
    out
}
