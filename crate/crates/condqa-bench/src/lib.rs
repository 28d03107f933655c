//! Input generators shared by the benchmark targets.

use condqa::{
    Condition, ConditionExpression, ConditionGroup, ConditionId, LogicalOperator, VerdictMap,
    VerificationStatus,
};
use rand::Rng;

/// Builds a random expression with 1 to `max_groups` groups of 1 to
/// `max_conditions` members each, plus a verdict for every condition.
pub fn random_case(
    rng: &mut impl Rng,
    max_groups: usize,
    max_conditions: usize,
) -> (ConditionExpression, VerdictMap) {
    let mut groups = Vec::new();
    let mut verdicts = VerdictMap::new();
    for gi in 0..rng.gen_range(1..=max_groups) {
        let operator = if rng.gen_bool(0.5) { LogicalOperator::And } else { LogicalOperator::Or };
        let mut conditions = Vec::new();
        for ci in 0..rng.gen_range(1..=max_conditions) {
            let id = ConditionId::generated(gi + 1, ci + 1);
            conditions.push(Condition::new(id.clone(), format!("condition {gi}/{ci}")));
            let verdict = match rng.gen_range(0..3) {
                0 => VerificationStatus::Satisfied,
                1 => VerificationStatus::Contradicted,
                _ => VerificationStatus::NotMentioned,
            };
            verdicts.insert(id, verdict);
        }
        groups.push(ConditionGroup { conditions, operator });
    }
    let top = if rng.gen_bool(0.5) { LogicalOperator::And } else { LogicalOperator::Or };
    (ConditionExpression::from_groups(groups, top), verdicts)
}

/// A synthetic tagged policy document: a heading every tenth line, list
/// items under every third section, paragraphs elsewhere.
pub fn synthetic_document_lines(lines: usize) -> Vec<String> {
    (0..lines)
        .map(|i| {
            if i % 10 == 0 {
                format!("<h1>Section {}</h1>", i / 10)
            } else if (i / 10) % 3 == 0 {
                format!("<li>you meet requirement {i} of the scheme</li>")
            } else {
                format!("<p>Paragraph {i} explains how the scheme applies in detail.</p>")
            }
        })
        .collect()
}
