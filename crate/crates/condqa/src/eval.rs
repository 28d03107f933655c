//! Answer-list metrics and run evaluation.
//!
//! A prediction may contain several answers and a reference may expect
//! several; scores pair them up as favourably as possible. With m predicted
//! and n gold answers, the best injective pairing of the smaller side into
//! the larger is found, the pairwise scores are summed, multiplied by an
//! over-prediction penalty of e^(1 - m/n) when m > n, and divided by n.
//! Exact match and token F1 are maximized independently of each other. The
//! conditional variants additionally weight each pair by the F1 between the
//! predicted and gold condition lists, compared as whole whitespace-
//! normalized strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    self, ConditionedAnswer, DatasetError, DatasetKind, QuestionRecord, SHARC_LABELS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold answer list is empty (id {id})")]
    EmptyGold { id: String },
    #[error("prediction and gold label lists differ in length ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("label {label:?} for {id} is not one of yes / no / not enough information")]
    BadLabel { id: String, label: String },
    #[error("reference record {id} has no gold answers")]
    UnlabeledReference { id: String },
    #[error("{path}: prediction file is neither JSONL records nor a JSON answer array: {message}")]
    BadPredictionFile { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

const STRIPPED_MARKS: [char; 6] = ['\u{2019}', '\u{2018}', '\u{201c}', '\u{201d}', '\u{2013}', '\u{2014}'];

/// Lowercases, removes punctuation, splits on whitespace, and drops the
/// articles a/an/the. Removal is deletion, not replacement: "120,000"
/// becomes the single token "120000".
pub fn normalize_text(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !STRIPPED_MARKS.contains(c))
        .collect();
    stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// 1.0 when the two spans normalize to the same token sequence.
pub fn span_em(pred: &str, gold: &str) -> f64 {
    if normalize_text(pred) == normalize_text(gold) {
        1.0
    } else {
        0.0
    }
}

/// Token-multiset F1 between two spans. Two spans that both normalize to
/// nothing count as a perfect match.
pub fn span_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_text(pred);
    let g = normalize_text(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, isize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &p {
        let c = counts.entry(t.as_str()).or_insert(0);
        if *c > 0 {
            *c -= 1;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Over-prediction penalty: e^(1 - m/n) when more answers were predicted
/// than exist, 1 otherwise.
///
/// # Panics
/// Panics when `n` is zero; callers must reject empty gold lists first.
pub fn penalty(m: usize, n: usize) -> f64 {
    assert!(n > 0, "penalty is undefined for an empty gold list");
    if m > n {
        (1.0 - m as f64 / n as f64).exp()
    } else {
        1.0
    }
}

/// Maximum, over injective pairings of the smaller side into the larger, of
/// the summed pairwise scores. `matrix[i][j]` scores prediction i against
/// gold j. Small instances are enumerated directly; larger ones go through
/// an optimal-assignment solve on a zero-padded square matrix, which ranges
/// over exactly the same pairings.
pub fn max_assignment_sum(matrix: &[Vec<f64>]) -> f64 {
    let m = matrix.len();
    let n = if m == 0 { 0 } else { matrix[0].len() };
    if m == 0 || n == 0 {
        return 0.0;
    }
    if m.min(n) <= 6 && m.max(n) <= 8 {
        brute_force_max(matrix, m, n)
    } else {
        hungarian_max(matrix, m, n)
    }
}

fn brute_force_max(matrix: &[Vec<f64>], m: usize, n: usize) -> f64 {
    // Recurse over the smaller side so the branching factor stays bounded.
    let rows_small = m <= n;
    let (small, large) = if rows_small { (m, n) } else { (n, m) };
    let score = |s: usize, l: usize| if rows_small { matrix[s][l] } else { matrix[l][s] };
    let mut used = vec![false; large];
    fn go(
        s: usize,
        small: usize,
        large: usize,
        used: &mut [bool],
        score: &impl Fn(usize, usize) -> f64,
    ) -> f64 {
        if s == small {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for l in 0..large {
            if !used[l] {
                used[l] = true;
                let v = score(s, l) + go(s + 1, small, large, used, score);
                used[l] = false;
                if v > best {
                    best = v;
                }
            }
        }
        best
    }
    go(0, small, large, &mut used, &score)
}

/// O(k^3) assignment with dual potentials on the zero-padded k x k matrix,
/// k = max(m, n). Maximization is done by minimizing negated scores.
fn hungarian_max(matrix: &[Vec<f64>], m: usize, n: usize) -> f64 {
    let k = m.max(n);
    let cost = |i: usize, j: usize| -> f64 {
        if i < m && j < n {
            -matrix[i][j]
        } else {
            0.0
        }
    };
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut assigned_row = vec![0usize; k + 1]; // column -> 1-based row
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=k {
        total -= cost(assigned_row[j] - 1, j - 1);
    }
    total
}

/// EM and F1 for one example, already penalized and normalized by the gold
/// count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListScores {
    pub em: f64,
    pub f1: f64,
}

fn aggregate(
    em_matrix: &[Vec<f64>],
    f1_matrix: &[Vec<f64>],
    m: usize,
    n: usize,
) -> ListScores {
    let gamma = penalty(m, n);
    ListScores {
        em: max_assignment_sum(em_matrix) * gamma / n as f64,
        f1: max_assignment_sum(f1_matrix) * gamma / n as f64,
    }
}

/// Scores a list of predicted answer spans against the gold list.
pub fn list_scores<P: AsRef<str>, G: AsRef<str>>(
    preds: &[P],
    golds: &[G],
) -> Result<ListScores, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::EmptyGold { id: String::new() });
    }
    let em: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| span_em(p.as_ref(), g.as_ref())).collect())
        .collect();
    let f1: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| span_f1(p.as_ref(), g.as_ref())).collect())
        .collect();
    Ok(aggregate(&em, &f1, preds.len(), golds.len()))
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Set F1 between two condition lists, where each condition is one opaque
/// whitespace-normalized string. Two empty lists agree perfectly.
pub fn condition_set_f1<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> f64 {
    let p: BTreeSet<String> = pred.iter().map(|c| collapse_whitespace(c.as_ref())).collect();
    let g: BTreeSet<String> = gold.iter().map(|c| collapse_whitespace(c.as_ref())).collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let common = p.intersection(&g).count();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Conditional EM and F1: each pairwise score is weighted by the condition
/// F1 before the pairing is maximized, so these never exceed the plain
/// scores.
pub fn conditional_scores(
    preds: &[ConditionedAnswer],
    golds: &[ConditionedAnswer],
) -> Result<ListScores, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::EmptyGold { id: String::new() });
    }
    let weight = |p: &ConditionedAnswer, g: &ConditionedAnswer| {
        condition_set_f1(&p.conditions, &g.conditions)
    };
    let em: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| span_em(&p.text, &g.text) * weight(p, g)).collect())
        .collect();
    let f1: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| span_f1(&p.text, &g.text) * weight(p, g)).collect())
        .collect();
    Ok(aggregate(&em, &f1, preds.len(), golds.len()))
}

/// Exact-label accuracy over aligned (prediction, gold) pairs.
pub fn sharc_accuracy<P: AsRef<str>, G: AsRef<str>>(
    preds: &[P],
    golds: &[G],
) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyGold { id: String::new() });
    }
    for (i, label) in preds.iter().map(AsRef::as_ref).chain(golds.iter().map(AsRef::as_ref)).enumerate() {
        if !SHARC_LABELS.contains(&label) {
            return Err(EvalError::BadLabel { id: format!("pair {}", i % preds.len()), label: label.to_string() });
        }
    }
    let correct = preds
        .iter()
        .zip(golds.iter())
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Per-example scores with the type tags used for the report breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub em: f64,
    pub f1: f64,
    pub cond_em: f64,
    pub cond_f1: f64,
    pub yes_no: bool,
    pub extractive: bool,
    pub not_answerable: bool,
    pub conditional: bool,
}

/// Mean scores (x100) over one slice of the data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
    pub cond_em: f64,
    pub cond_f1: f64,
}

impl MetricRow {
    fn from_slice(examples: &[&ScoredExample]) -> MetricRow {
        let count = examples.len();
        if count == 0 {
            return MetricRow::default();
        }
        let mean = |f: fn(&ScoredExample) -> f64| {
            examples.iter().map(|e| f(e)).sum::<f64>() / count as f64 * 100.0
        };
        MetricRow {
            count,
            em: mean(|e| e.em),
            f1: mean(|e| e.f1),
            cond_em: mean(|e| e.cond_em),
            cond_f1: mean(|e| e.cond_f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqaEvalReport {
    pub total: usize,
    pub missing_predictions: usize,
    pub overall: MetricRow,
    pub yes_no: MetricRow,
    pub extractive: MetricRow,
    pub not_answerable: MetricRow,
    pub conditional: MetricRow,
    pub per_example: Vec<ScoredExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharcEvalReport {
    pub total: usize,
    pub correct: usize,
    pub missing_predictions: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "snake_case")]
pub enum EvalReport {
    Conditionalqa(CqaEvalReport),
    Sharc(SharcEvalReport),
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalReport::Conditionalqa(r) => {
                writeln!(f, "{:<16}{:>7}{:>9}{:>9}{:>9}{:>9}", "type", "count", "EM", "F1", "condEM", "condF1")?;
                let row = |f: &mut fmt::Formatter<'_>, name: &str, r: &MetricRow| {
                    writeln!(
                        f,
                        "{:<16}{:>7}{:>9.1}{:>9.1}{:>9.1}{:>9.1}",
                        name, r.count, r.em, r.f1, r.cond_em, r.cond_f1
                    )
                };
                row(f, "yes/no", &r.yes_no)?;
                row(f, "extractive", &r.extractive)?;
                row(f, "not answerable", &r.not_answerable)?;
                row(f, "conditional", &r.conditional)?;
                row(f, "overall", &r.overall)?;
                if r.missing_predictions > 0 {
                    writeln!(f, "missing predictions: {}", r.missing_predictions)?;
                }
                Ok(())
            }
            EvalReport::Sharc(r) => {
                writeln!(f, "accuracy: {:.1} ({}/{})", r.accuracy * 100.0, r.correct, r.total)?;
                if r.missing_predictions > 0 {
                    writeln!(f, "missing predictions: {}", r.missing_predictions)?;
                }
                Ok(())
            }
        }
    }
}

/// Prediction answers for one id, in the shape scoring needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredAnswers {
    pub id: String,
    pub answers: Vec<ConditionedAnswer>,
}

/// Reads a prediction file. Two layouts are accepted: the JSONL records the
/// pipeline writes, and a reference-style JSON array whose records carry
/// `answers` as `[span, [conditions...]]` pairs (which makes a gold file a
/// valid prediction of itself). In a JSONL record the single condition list
/// applies to each of its answers.
pub fn read_prediction_answers(path: &Path) -> Result<Vec<PredAnswers>, EvalError> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        EvalError::Dataset(DatasetError::Io { path: path.display().to_string(), source: e })
    })?;
    if raw.trim_start().starts_with('[') {
        let records = dataset::load_questions(path).map_err(|e| EvalError::BadPredictionFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        return Ok(records
            .into_iter()
            .map(|q| PredAnswers { answers: q.gold_answers().unwrap_or_default(), id: q.id })
            .collect());
    }
    let records = dataset::read_predictions(path)?;
    Ok(records
        .into_iter()
        .map(|r| PredAnswers {
            answers: r
                .answers
                .iter()
                .map(|a| ConditionedAnswer {
                    text: a.clone(),
                    conditions: r.missing_conditions.clone(),
                })
                .collect(),
            id: r.id,
        })
        .collect())
}

fn score_cqa(
    predictions: &BTreeMap<String, Vec<ConditionedAnswer>>,
    reference: &[QuestionRecord],
) -> Result<(Vec<ScoredExample>, usize), EvalError> {
    let mut scored = Vec::with_capacity(reference.len());
    let mut missing = 0usize;
    let empty: Vec<ConditionedAnswer> = Vec::new();
    for record in reference {
        let golds = record
            .gold_answers()
            .ok_or_else(|| EvalError::UnlabeledReference { id: record.id.clone() })?;
        if golds.is_empty() {
            return Err(EvalError::EmptyGold { id: record.id.clone() });
        }
        let preds = match predictions.get(&record.id) {
            Some(p) => p,
            None => {
                missing += 1;
                &empty
            }
        };
        let texts_p: Vec<&str> = preds.iter().map(|a| a.text.as_str()).collect();
        let texts_g: Vec<&str> = golds.iter().map(|a| a.text.as_str()).collect();
        let plain = list_scores(&texts_p, &texts_g)
            .map_err(|_| EvalError::EmptyGold { id: record.id.clone() })?;
        let cond = conditional_scores(preds, &golds)
            .map_err(|_| EvalError::EmptyGold { id: record.id.clone() })?;
        scored.push(ScoredExample {
            id: record.id.clone(),
            em: plain.em,
            f1: plain.f1,
            cond_em: cond.em,
            cond_f1: cond.f1,
            yes_no: record.is_yes_no(),
            extractive: !record.is_yes_no() && !record.not_answerable,
            not_answerable: record.not_answerable,
            conditional: record.is_conditional(),
        });
    }
    Ok((scored, missing))
}

fn cqa_report(scored: Vec<ScoredExample>, missing: usize) -> CqaEvalReport {
    let all: Vec<&ScoredExample> = scored.iter().collect();
    let pick = |f: fn(&ScoredExample) -> bool| {
        scored.iter().filter(|e| f(e)).collect::<Vec<&ScoredExample>>()
    };
    CqaEvalReport {
        total: scored.len(),
        missing_predictions: missing,
        overall: MetricRow::from_slice(&all),
        yes_no: MetricRow::from_slice(&pick(|e| e.yes_no)),
        extractive: MetricRow::from_slice(&pick(|e| e.extractive)),
        not_answerable: MetricRow::from_slice(&pick(|e| e.not_answerable)),
        conditional: MetricRow::from_slice(&pick(|e| e.conditional)),
        per_example: scored,
    }
}

/// Scores a prediction file against a reference file.
///
/// For ConditionalQA the reference is the question file; every reference id
/// is scored, and ids without a prediction score zero. For ShARC the
/// reference is the raw dialog file; the experiment partition (seed 42) is
/// reconstructed and predictions are scored against it by exact label.
pub fn evaluate_run(
    pred_path: &Path,
    ref_path: &Path,
    dataset_kind: DatasetKind,
) -> Result<EvalReport, EvalError> {
    match dataset_kind {
        DatasetKind::Conditionalqa => {
            let reference = dataset::load_questions(ref_path)?;
            let preds = read_prediction_answers(pred_path)?;
            let by_id: BTreeMap<String, Vec<ConditionedAnswer>> =
                preds.into_iter().map(|p| (p.id, p.answers)).collect();
            let (scored, missing) = score_cqa(&by_id, &reference)?;
            Ok(EvalReport::Conditionalqa(cqa_report(scored, missing)))
        }
        DatasetKind::Sharc => {
            let reference = dataset::load_sharc(ref_path, 42)?;
            let preds = read_prediction_answers(pred_path)?;
            let by_id: BTreeMap<String, Vec<ConditionedAnswer>> =
                preds.into_iter().map(|p| (p.id, p.answers)).collect();
            let mut correct = 0usize;
            let mut missing = 0usize;
            for example in &reference {
                let gold = &example.gold_answers.as_ref().expect("sharc examples are labeled")[0].text;
                match by_id.get(&example.id).and_then(|a| a.first()) {
                    Some(pred) => {
                        if !SHARC_LABELS.contains(&pred.text.as_str()) {
                            return Err(EvalError::BadLabel {
                                id: example.id.clone(),
                                label: pred.text.clone(),
                            });
                        }
                        if &pred.text == gold {
                            correct += 1;
                        }
                    }
                    None => missing += 1,
                }
            }
            let total = reference.len();
            Ok(EvalReport::Sharc(SharcEvalReport {
                total,
                correct,
                missing_predictions: missing,
                accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            }))
        }
    }
}
