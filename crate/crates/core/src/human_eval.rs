//! Human annotation statistics: Fleiss kappa, majority labels and agreement
//! between automatic and human labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extrinsic::{majority_of, AnswerLabel};

/// Annotators per item unless the loader is told otherwise.
pub const DEFAULT_ANNOTATORS: usize = 3;

#[derive(Debug, Error)]
pub enum HumanEvalError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("annotation row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("duplicate annotation: item `{item}`, annotator `{annotator}`, question `{question}`")]
    Duplicate {
        item: String,
        annotator: String,
        question: String,
    },
    #[error("question `{question}`: item `{item}` has {found} annotators, expected {expected}")]
    AnnotatorCount {
        question: String,
        item: String,
        found: usize,
        expected: usize,
    },
    #[error("at least two annotators per item are required")]
    TooFewAnnotators,
    #[error("annotation table is empty")]
    Empty,
    #[error("item ids differ: {0}")]
    IdMismatch(String),
    #[error("auto label line {line}: {reason}")]
    AutoLabel { line: usize, reason: String },
}

/// Category counts per item for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTable {
    pub question_id: String,
    pub categories: Vec<String>,
    /// `(item_id, counts)` with counts aligned to `categories`.
    pub items: Vec<(String, Vec<usize>)>,
}

impl AnnotationTable {
    /// Annotator count shared by every item.
    pub fn annotators(&self) -> Result<usize, HumanEvalError> {
        let (_, first) = self.items.first().ok_or(HumanEvalError::Empty)?;
        let m: usize = first.iter().sum();
        for (id, counts) in &self.items {
            let found: usize = counts.iter().sum();
            if found != m {
                return Err(HumanEvalError::AnnotatorCount {
                    question: self.question_id.clone(),
                    item: id.clone(),
                    found,
                    expected: m,
                });
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    item_id: String,
    annotator_id: String,
    question_id: String,
    label: String,
}

/// Reads long-form annotations (`item_id,annotator_id,question_id,label`)
/// into one table per question. With `annotators_per_item` set, every item
/// must have exactly that many labels.
pub fn read_annotations(
    reader: impl Read,
    annotators_per_item: Option<usize>,
) -> Result<BTreeMap<String, AnnotationTable>, HumanEvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut seen = BTreeSet::new();
    let mut labels: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<AnnotationRow>().enumerate() {
        let row = row?;
        if row.label.is_empty() || row.item_id.is_empty() || row.question_id.is_empty() {
            return Err(HumanEvalError::Row {
                row: i + 1,
                reason: "empty field".into(),
            });
        }
        if !seen.insert((
            row.item_id.clone(),
            row.annotator_id.clone(),
            row.question_id.clone(),
        )) {
            return Err(HumanEvalError::Duplicate {
                item: row.item_id,
                annotator: row.annotator_id,
                question: row.question_id,
            });
        }
        labels
            .entry(row.question_id)
            .or_default()
            .entry(row.item_id)
            .or_default()
            .push(row.label);
    }
    if labels.is_empty() {
        return Err(HumanEvalError::Empty);
    }
    let mut tables = BTreeMap::new();
    for (question_id, items) in labels {
        let categories: Vec<String> = items
            .values()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<(String, Vec<usize>)> = items
            .into_iter()
            .map(|(id, ls)| {
                let counts = categories
                    .iter()
                    .map(|c| ls.iter().filter(|l| *l == c).count())
                    .collect();
                (id, counts)
            })
            .collect();
        let table = AnnotationTable {
            question_id: question_id.clone(),
            categories,
            items,
        };
        let m = table.annotators()?;
        if let Some(expected) = annotators_per_item {
            if m != expected {
                return Err(HumanEvalError::AnnotatorCount {
                    question: question_id,
                    item: table.items[0].0.clone(),
                    found: m,
                    expected,
                });
            }
        }
        tables.insert(table.question_id.clone(), table);
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    /// `None` when every label falls in a single category.
    pub kappa: Option<f64>,
    pub p_bar: f64,
    pub p_bar_e: f64,
    pub n_items: usize,
    pub n_annotators: usize,
    pub n_categories: usize,
    pub degenerate: bool,
}

/// Fleiss kappa over items rated by the same number of annotators.
pub fn fleiss_kappa(table: &AnnotationTable) -> Result<KappaResult, HumanEvalError> {
    let m = table.annotators()?;
    if m < 2 {
        return Err(HumanEvalError::TooFewAnnotators);
    }
    let n_items = table.items.len();
    let k = table.categories.len();
    let mf = m as f64;
    let mut marginals = vec![0usize; k];
    let mut p_sum = 0.0;
    for (_, counts) in &table.items {
        let sq: usize = counts.iter().map(|c| c * c).sum();
        p_sum += (sq as f64 - mf) / (mf * (mf - 1.0));
        for (acc, c) in marginals.iter_mut().zip(counts) {
            *acc += c;
        }
    }
    let p_bar = p_sum / n_items as f64;
    let total = (n_items * m) as f64;
    let sq_marginals: u128 = marginals.iter().map(|&c| (c as u128) * (c as u128)).sum();
    let p_bar_e = sq_marginals as f64 / (total * total);
    let degenerate = p_bar_e >= 1.0;
    Ok(KappaResult {
        kappa: (!degenerate).then(|| (p_bar - p_bar_e) / (1.0 - p_bar_e)),
        p_bar,
        p_bar_e,
        n_items,
        n_annotators: m,
        n_categories: k,
        degenerate,
    })
}

/// Majority label per item; ties give can't-tell.
pub fn human_majority(table: &AnnotationTable) -> Vec<(String, AnswerLabel)> {
    table
        .items
        .iter()
        .map(|(id, counts)| {
            let labels: Vec<AnswerLabel> = table
                .categories
                .iter()
                .zip(counts)
                .flat_map(|(c, &n)| std::iter::repeat_n(AnswerLabel::from(c.clone()), n))
                .collect();
            (id.clone(), majority_of(&labels).label)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    /// Percentage in [0, 100].
    pub rate: f64,
    pub matches: usize,
    pub total: usize,
}

/// Share of items where both sides give the same label. Two can't-tell
/// labels agree; can't-tell against a named label does not.
pub fn agreement_rate(
    auto_labels: &[(String, AnswerLabel)],
    human_labels: &[(String, AnswerLabel)],
) -> Result<AgreementResult, HumanEvalError> {
    let auto: BTreeMap<&str, &AnswerLabel> =
        auto_labels.iter().map(|(i, l)| (i.as_str(), l)).collect();
    let human: BTreeMap<&str, &AnswerLabel> =
        human_labels.iter().map(|(i, l)| (i.as_str(), l)).collect();
    if auto.len() != auto_labels.len() || human.len() != human_labels.len() {
        return Err(HumanEvalError::IdMismatch("duplicate item id".into()));
    }
    if let Some(id) = auto.keys().find(|id| !human.contains_key(*id)) {
        return Err(HumanEvalError::IdMismatch(format!(
            "`{id}` has no human label"
        )));
    }
    if let Some(id) = human.keys().find(|id| !auto.contains_key(*id)) {
        return Err(HumanEvalError::IdMismatch(format!(
            "`{id}` has no automatic label"
        )));
    }
    if auto.is_empty() {
        return Err(HumanEvalError::Empty);
    }
    let matches = auto.iter().filter(|(id, l)| human[*id] == **l).count();
    let total = auto.len();
    Ok(AgreementResult {
        rate: 100.0 * matches as f64 / total as f64,
        matches,
        total,
    })
}

/// One line of an automatic label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoLabel {
    pub item_id: String,
    pub question_id: String,
    pub label: AnswerLabel,
}

pub fn read_auto_labels(reader: impl BufRead) -> Result<Vec<AutoLabel>, HumanEvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HumanEvalError::AutoLabel {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Kappa and agreement for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question_id: String,
    pub kappa: KappaResult,
    pub agreement: Option<AgreementResult>,
}

/// Per-question kappa, plus agreement with automatic labels wherever the
/// automatic file covers the question.
pub fn evaluate(
    tables: &BTreeMap<String, AnnotationTable>,
    auto: &[AutoLabel],
) -> Result<Vec<QuestionReport>, HumanEvalError> {
    let mut out = Vec::with_capacity(tables.len());
    for (question_id, table) in tables {
        let kappa = fleiss_kappa(table)?;
        let auto_q: Vec<(String, AnswerLabel)> = auto
            .iter()
            .filter(|a| &a.question_id == question_id)
            .map(|a| (a.item_id.clone(), a.label.clone()))
            .collect();
        let agreement = if auto_q.is_empty() {
            None
        } else {
            Some(agreement_rate(&auto_q, &human_majority(table))?)
        };
        out.push(QuestionReport {
            question_id: question_id.clone(),
            kappa,
            agreement,
        });
    }
    Ok(out)
}
