//! Embedding-space metrics: national association (NA), dimension projection
//! (DP), cultural distance (CD), cross-cultural similarity (CCS) and
//! conceptual coverage, plus confusion-matrix accuracy, min-max
//! normalization and the two-dimensional culture map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_rows, EmbeddingRole, EmbeddingStore, SetKey, StoreError};
use crate::par::Execution;

/// CD is reported as `100 * (1 - cos)`.
pub const CD_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("key {0} is not an image row")]
    NotImage(SetKey),
    #[error("matrix is not square: {rows} rows, row {row} has {len} columns")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("concept mismatch: expected `{expected}`, found `{found}`")]
    ConceptMismatch { expected: String, found: String },
    #[error("language `{language}` lacks scores for dimension `{dimension}`")]
    MissingDimension { language: String, dimension: String },
    #[error("no concept shared by image set {l1} and baseline {l2}")]
    EmptyPair { l1: String, l2: String },
    #[error("distributions have different label sets")]
    LabelMismatch,
    #[error("no text embedding found for {0}")]
    MissingText(String),
}

/// Numerically stable softmax with unit temperature.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Probability over nationalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaDistribution {
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

impl NaDistribution {
    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probs[i])
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs).0
    }

    /// Mean of several distributions over the same labels, renormalized.
    pub fn mean(dists: &[NaDistribution]) -> Result<NaDistribution, MetricError> {
        let first = dists
            .first()
            .ok_or(MetricError::Empty("distribution list"))?;
        let mut acc = vec![0.0; first.probs.len()];
        for d in dists {
            if d.labels != first.labels {
                return Err(MetricError::LabelMismatch);
            }
            for (a, p) in acc.iter_mut().zip(&d.probs) {
                *a += p;
            }
        }
        let total: f64 = acc.iter().sum();
        Ok(NaDistribution {
            labels: first.labels.clone(),
            probs: acc.into_iter().map(|a| a / total).collect(),
        })
    }
}

fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            tie = false;
        } else if v == values[best] {
            tie = true;
        }
    }
    (best, tie)
}

fn check_images(keys: &[SetKey]) -> Result<(), MetricError> {
    if keys.is_empty() {
        return Err(MetricError::Empty("image set"));
    }
    for k in keys {
        if k.role != EmbeddingRole::Image {
            return Err(MetricError::NotImage(k.clone()));
        }
    }
    Ok(())
}

fn common_concept(keys: &[SetKey]) -> Result<Option<&str>, MetricError> {
    let mut concept: Option<&str> = None;
    for k in keys {
        match (concept, k.concept.as_deref()) {
            (None, c) => concept = c,
            (Some(a), Some(b)) if a != b => {
                return Err(MetricError::ConceptMismatch {
                    expected: a.to_string(),
                    found: b.to_string(),
                })
            }
            _ => {}
        }
    }
    Ok(concept)
}

/// NA of one image set: per image, softmax over cosines against every
/// nationality style prompt, then the mean distribution over images.
pub fn national_association(
    image_keys: &[SetKey],
    nationality_text_keys: &[(String, SetKey)],
    store: &EmbeddingStore,
) -> Result<NaDistribution, MetricError> {
    check_images(image_keys)?;
    if nationality_text_keys.is_empty() {
        return Err(MetricError::Empty("nationality set"));
    }
    let texts: Vec<&[f32]> = nationality_text_keys
        .iter()
        .map(|(_, k)| store.get(k))
        .collect::<Result<_, _>>()?;
    let labels: Vec<String> = nationality_text_keys
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut per_image = Vec::with_capacity(image_keys.len());
    for key in image_keys {
        let image = store.get(key)?;
        let scores: Vec<f64> = texts
            .iter()
            .map(|t| cosine_rows(image, t))
            .collect::<Result<_, _>>()?;
        per_image.push(NaDistribution {
            labels: labels.clone(),
            probs: softmax(&scores),
        });
    }
    NaDistribution::mean(&per_image)
}

/// NA for many image sets.
pub fn national_association_batch(
    image_sets: &[Vec<SetKey>],
    nationality_text_keys: &[(String, SetKey)],
    store: &EmbeddingStore,
    exec: Execution,
) -> Result<Vec<NaDistribution>, MetricError> {
    exec.try_map(image_sets, |keys| {
        national_association(keys, nationality_text_keys, store)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub correct: usize,
    pub rows: usize,
    /// Rows whose maximum was shared by several columns.
    pub tied_rows: Vec<usize>,
}

/// Fraction of rows whose argmax lies on the diagonal.
pub fn confusion_accuracy(matrix: &ConfusionMatrix) -> Result<AccuracyResult, MetricError> {
    let n = matrix.rows.len();
    if n == 0 {
        return Err(MetricError::Empty("confusion matrix"));
    }
    for (i, row) in matrix.rows.iter().enumerate() {
        if row.len() != n {
            return Err(MetricError::NotSquare {
                rows: n,
                row: i,
                len: row.len(),
            });
        }
    }
    let mut correct = 0;
    let mut tied_rows = Vec::new();
    for (i, row) in matrix.rows.iter().enumerate() {
        let (best, tie) = argmax(row);
        if tie {
            tied_rows.push(i);
        }
        if best == i {
            correct += 1;
        }
    }
    Ok(AccuracyResult {
        accuracy: correct as f64 / n as f64,
        correct,
        rows: n,
        tied_rows,
    })
}

/// Confusion matrix from NA distributions grouped by ground-truth language.
/// `column_labels[j]` names the nationality that stands for `languages[j]`.
pub fn na_confusion_matrix(
    languages: &[String],
    column_labels: &[String],
    per_language: &BTreeMap<String, Vec<NaDistribution>>,
) -> Result<ConfusionMatrix, MetricError> {
    let mut rows = Vec::with_capacity(languages.len());
    for lang in languages {
        let dists = per_language
            .get(lang)
            .ok_or(MetricError::Empty("language row"))?;
        let mean = NaDistribution::mean(dists)?;
        let row = column_labels
            .iter()
            .map(|label| mean.prob(label).ok_or(MetricError::LabelMismatch))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(ConfusionMatrix {
        labels: languages.to_vec(),
        rows,
    })
}

fn mean_cosine(
    image_keys: &[SetKey],
    text: &[f32],
    store: &EmbeddingStore,
) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for key in image_keys {
        total += cosine_rows(store.get(key)?, text)?;
    }
    Ok(total / image_keys.len() as f64)
}

/// DP: mean cosine between the images and a dimension prompt.
pub fn dimension_projection(
    image_keys: &[SetKey],
    dimension_text_key: &SetKey,
    store: &EmbeddingStore,
) -> Result<f64, MetricError> {
    check_images(image_keys)?;
    mean_cosine(image_keys, store.get(dimension_text_key)?, store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScorePair {
    pub dimension_id: String,
    pub pole_positive_score: f64,
    pub pole_negative_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoleSide {
    Positive,
    Negative,
}

/// One map axis: the dimension and which pole points up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub dimension_id: String,
    pub high: PoleSide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageGroup {
    pub name: String,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CultureMapSpec {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub groups: Vec<LanguageGroup>,
}

impl Default for CultureMapSpec {
    /// Self-expression minus Survival on x, Rational minus Traditional on y,
    /// languages grouped by cultural region.
    fn default() -> Self {
        let group = |name: &str, langs: &[&str]| LanguageGroup {
            name: name.to_string(),
            languages: langs.iter().map(|l| l.to_string()).collect(),
        };
        Self {
            x: AxisSpec {
                dimension_id: "survival_self_expression".into(),
                high: PoleSide::Negative,
            },
            y: AxisSpec {
                dimension_id: "traditional_rational".into(),
                high: PoleSide::Negative,
            },
            groups: vec![
                group("Catholic Europe", &["ES", "FR"]),
                group("Orthodox Europe", &["RU", "EL"]),
                group("West and South Asia", &["HI", "IW"]),
                group("English-speaking", &["EN"]),
                group("Protestant Europe", &["DE"]),
                group("African-Islamic", &["AR"]),
                group("Confucian", &["ZH"]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub language: String,
    pub x: f64,
    pub y: f64,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub mean_x: f64,
    pub mean_y: f64,
    /// Population standard deviations.
    pub std_x: f64,
    pub std_y: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureMap {
    pub points: Vec<MapPoint>,
    pub groups: Vec<GroupStats>,
}

fn axis_value(
    language: &str,
    pairs: &[DimensionScorePair],
    axis: &AxisSpec,
) -> Result<f64, MetricError> {
    let pair = pairs
        .iter()
        .find(|p| p.dimension_id == axis.dimension_id)
        .ok_or_else(|| MetricError::MissingDimension {
            language: language.to_string(),
            dimension: axis.dimension_id.clone(),
        })?;
    Ok(match axis.high {
        PoleSide::Positive => pair.pole_positive_score - pair.pole_negative_score,
        PoleSide::Negative => pair.pole_negative_score - pair.pole_positive_score,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-language map coordinates as differences of the pole scores, with
/// group means and spreads.
pub fn culture_map_axes(
    pole_scores: &BTreeMap<String, Vec<DimensionScorePair>>,
    spec: &CultureMapSpec,
) -> Result<CultureMap, MetricError> {
    let mut points = Vec::with_capacity(pole_scores.len());
    for (lang, pairs) in pole_scores {
        let group = spec
            .groups
            .iter()
            .find(|g| g.languages.iter().any(|l| l == lang))
            .map(|g| g.name.clone());
        points.push(MapPoint {
            language: lang.clone(),
            x: axis_value(lang, pairs, &spec.x)?,
            y: axis_value(lang, pairs, &spec.y)?,
            group,
        });
    }
    let groups = spec
        .groups
        .iter()
        .filter_map(|g| {
            let members: Vec<&MapPoint> = points
                .iter()
                .filter(|p| p.group.as_deref() == Some(g.name.as_str()))
                .collect();
            if members.is_empty() {
                return None;
            }
            let xs: Vec<f64> = members.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = members.iter().map(|p| p.y).collect();
            let (mean_x, std_x) = mean_std(&xs);
            let (mean_y, std_y) = mean_std(&ys);
            Some(GroupStats {
                name: g.name.clone(),
                mean_x,
                mean_y,
                std_x,
                std_y,
                members: members.iter().map(|p| p.language.clone()).collect(),
            })
        })
        .collect();
    Ok(CultureMap { points, groups })
}

/// CD: mean of `100 * (1 - cos)` between the images and the English
/// reference prompt of the same concept.
pub fn cultural_distance(
    image_keys: &[SetKey],
    en_reference_text_key: &SetKey,
    store: &EmbeddingStore,
) -> Result<f64, MetricError> {
    check_images(image_keys)?;
    let concept = common_concept(image_keys)?;
    if let (Some(a), Some(b)) = (concept, en_reference_text_key.concept.as_deref()) {
        if a != b {
            return Err(MetricError::ConceptMismatch {
                expected: a.to_string(),
                found: b.to_string(),
            });
        }
    }
    let sim = mean_cosine(image_keys, store.get(en_reference_text_key)?, store)?;
    Ok((1.0 - sim) * CD_SCALE)
}

/// CCS: mean cosine over every (image of l1, baseline image of l2) pair.
pub fn cross_cultural_similarity(
    image_keys_l1: &[SetKey],
    baseline_image_keys_l2: &[SetKey],
    store: &EmbeddingStore,
) -> Result<f64, MetricError> {
    if image_keys_l1.is_empty() || baseline_image_keys_l2.is_empty() {
        return Err(MetricError::Empty("image set"));
    }
    let a = common_concept(image_keys_l1)?;
    let b = common_concept(baseline_image_keys_l2)?;
    if let (Some(a), Some(b)) = (a, b) {
        if a != b {
            return Err(MetricError::ConceptMismatch {
                expected: a.to_string(),
                found: b.to_string(),
            });
        }
    }
    let rows_b: Vec<&[f32]> = baseline_image_keys_l2
        .iter()
        .map(|k| store.get(k))
        .collect::<Result<_, _>>()?;
    let mut total = 0.0;
    for key in image_keys_l1 {
        let row = store.get(key)?;
        for other in &rows_b {
            total += cosine_rows(row, other)?;
        }
    }
    Ok(total / (image_keys_l1.len() * rows_b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Set when `max == min`; `values` are then returned unchanged.
    pub degenerate: bool,
}

/// Min-max scaling to [0, 1].
pub fn normalize_matrix(values: &[f64]) -> Result<Normalized, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty("value list"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(Normalized {
            values: values.to_vec(),
            min,
            max,
            degenerate: true,
        });
    }
    let range = max - min;
    Ok(Normalized {
        values: values.iter().map(|v| (v - min) / range).collect(),
        min,
        max,
        degenerate: false,
    })
}

/// Image sets feeding a CCS matrix, keyed by (language, concept).
#[derive(Debug, Clone, Default)]
pub struct CcsInput {
    pub languages: Vec<String>,
    pub concepts: Vec<String>,
    pub images: BTreeMap<(String, String), Vec<SetKey>>,
    pub baselines: BTreeMap<(String, String), Vec<SetKey>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcsSkip {
    pub l1: String,
    pub l2: String,
    pub concept: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsMatrix {
    pub labels: Vec<String>,
    /// `raw[i][j]`: images of language i against baselines of language j.
    pub raw: Vec<Vec<f64>>,
    /// `(raw + raw^T) / 2`.
    pub symmetrized: Vec<Vec<f64>>,
    /// Min-max normalized `raw`, row-major, with range metadata.
    pub normalized: Normalized,
    pub skipped: Vec<CcsSkip>,
}

/// Language-by-language CCS, averaged over shared concepts.
pub fn build_ccs_matrix(
    input: &CcsInput,
    store: &EmbeddingStore,
    exec: Execution,
) -> Result<CcsMatrix, MetricError> {
    let n = input.languages.len();
    if n < 2 {
        return Err(MetricError::Empty("language list (need at least two)"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let cells = exec.try_map(&pairs, |&(i, j)| {
        let l1 = &input.languages[i];
        let l2 = &input.languages[j];
        let mut total = 0.0;
        let mut used = 0usize;
        let mut skipped = Vec::new();
        for concept in &input.concepts {
            let a = input.images.get(&(l1.clone(), concept.clone()));
            let b = input.baselines.get(&(l2.clone(), concept.clone()));
            match (a, b) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                    total += cross_cultural_similarity(a, b, store)?;
                    used += 1;
                }
                _ => skipped.push(CcsSkip {
                    l1: l1.clone(),
                    l2: l2.clone(),
                    concept: concept.clone(),
                }),
            }
        }
        if used == 0 {
            return Err(MetricError::EmptyPair {
                l1: l1.clone(),
                l2: l2.clone(),
            });
        }
        Ok((total / used as f64, skipped))
    })?;
    let mut raw = vec![vec![0.0; n]; n];
    let mut skipped = Vec::new();
    for (&(i, j), (value, skips)) in pairs.iter().zip(cells) {
        raw[i][j] = value;
        skipped.extend(skips);
    }
    let symmetrized = (0..n)
        .map(|i| (0..n).map(|j| (raw[i][j] + raw[j][i]) / 2.0).collect())
        .collect();
    let flat: Vec<f64> = raw.iter().flatten().copied().collect();
    let normalized = normalize_matrix(&flat)?;
    Ok(CcsMatrix {
        labels: input.languages.clone(),
        raw,
        symmetrized,
        normalized,
        skipped,
    })
}

/// Mean cosine between VQA description embeddings and the concept term.
pub fn conceptual_coverage(
    description_text_keys: &[SetKey],
    concept_text_key: &SetKey,
    store: &EmbeddingStore,
) -> Result<f64, MetricError> {
    if description_text_keys.is_empty() {
        return Err(MetricError::Empty("description set"));
    }
    mean_cosine(description_text_keys, store.get(concept_text_key)?, store)
}

/// Grouping of one metric value. Fields that do not apply stay empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricGroup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<crate::prompt::TemplateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    /// Nationality, dimension pole or other column label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub group: MetricGroup,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationInfo {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

/// Flat table of one metric's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub values: Vec<MetricValue>,
    /// Present whenever `normalized` values are filled in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationInfo>,
    /// Multiplier applied to raw values, e.g. the CD scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, values: Vec<MetricValue>) -> Self {
        Self {
            metric: metric.into(),
            values,
            normalization: None,
            scale: None,
        }
    }

    /// Fills `normalized` by min-max scaling over every value.
    pub fn normalize(&mut self) -> Result<(), MetricError> {
        let raw: Vec<f64> = self.values.iter().map(|v| v.value).collect();
        let n = normalize_matrix(&raw)?;
        for (v, x) in self.values.iter_mut().zip(&n.values) {
            v.normalized = Some(*x);
        }
        self.normalization = Some(NormalizationInfo {
            min: n.min,
            max: n.max,
            degenerate: n.degenerate,
        });
        Ok(())
    }
}
