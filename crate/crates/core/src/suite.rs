//! Metric runs over a whole store.
//!
//! Image sets are discovered from the store's keys. The text rows each
//! metric compares against are located through the registry and the
//! evaluation prompt helpers, so an archive only has to carry the right
//! prompt hashes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingRole, EmbeddingStore, SetKey};
use crate::intrinsic::{
    build_ccs_matrix, conceptual_coverage, confusion_accuracy, cultural_distance, culture_map_axes,
    dimension_projection, na_confusion_matrix, national_association_batch, AccuracyResult,
    CcsInput, CcsMatrix, ConfusionMatrix, CultureMap, CultureMapSpec, DimensionScorePair,
    MetricError, MetricGroup, MetricReport, MetricValue, NaDistribution, CD_SCALE,
};
use crate::ontology::{CulturalConcept, DimensionPole, OntologyRegistry};
use crate::par::Execution;
use crate::prompt::{
    concept_reference_prompt, dimension_aspect_prompt, national_style_prompt, TemplateKind,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageSetId {
    pub model: String,
    pub template: TemplateKind,
    pub language: String,
    pub concept: String,
}

impl ImageSetId {
    fn group(&self) -> MetricGroup {
        MetricGroup {
            model: Some(self.model.clone()),
            language: Some(self.language.clone()),
            template: Some(self.template),
            concept: Some(self.concept.clone()),
            label: None,
        }
    }
}

/// Restricts which image sets a run looks at. Empty lists admit everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub templates: Vec<TemplateKind>,
    #[serde(default)]
    pub languages: Vec<String>,
}

impl Selection {
    pub fn admits(&self, id: &ImageSetId) -> bool {
        (self.models.is_empty() || self.models.contains(&id.model))
            && (self.templates.is_empty() || self.templates.contains(&id.template))
            && (self.languages.is_empty() || self.languages.contains(&id.language))
    }
}

pub fn nationality_text_key(name: &str) -> SetKey {
    SetKey::text(&national_style_prompt(name))
}

pub fn pole_text_key(pole: &DimensionPole) -> SetKey {
    SetKey::text(&dimension_aspect_prompt(&pole.aspect))
}

/// English "a photo of <cc>" prompt for the concept.
pub fn reference_text_key(concept: &CulturalConcept) -> SetKey {
    SetKey::concept_text(
        &concept.id,
        "EN",
        &concept_reference_prompt(&concept.english_term),
    )
}

/// Bare English concept term, the target of conceptual coverage.
pub fn concept_term_key(concept: &CulturalConcept) -> SetKey {
    SetKey::concept_text(&concept.id, "EN", &concept.english_term)
}

fn set_id(key: &SetKey) -> Option<ImageSetId> {
    Some(ImageSetId {
        model: key.model.clone()?,
        template: key.pt?,
        language: key.lang.clone()?,
        concept: key.concept.clone()?,
    })
}

fn collect_sets(
    store: &EmbeddingStore,
    selection: &Selection,
    pred: impl Fn(&SetKey) -> bool,
) -> BTreeMap<ImageSetId, Vec<SetKey>> {
    let mut sets: BTreeMap<ImageSetId, Vec<SetKey>> = BTreeMap::new();
    for key in store.keys().iter().filter(|k| pred(k)) {
        if let Some(id) = set_id(key).filter(|id| selection.admits(id)) {
            sets.entry(id).or_default().push(key.clone());
        }
    }
    for keys in sets.values_mut() {
        keys.sort_by_key(|k| k.image_index);
    }
    sets
}

/// Image rows grouped by set, each set ordered by image index.
pub fn image_sets(
    store: &EmbeddingStore,
    selection: &Selection,
) -> BTreeMap<ImageSetId, Vec<SetKey>> {
    collect_sets(store, selection, |k| k.role == EmbeddingRole::Image)
}

/// Description text rows grouped by the image set they describe.
pub fn description_sets(
    store: &EmbeddingStore,
    selection: &Selection,
) -> BTreeMap<ImageSetId, Vec<SetKey>> {
    collect_sets(store, selection, |k| {
        k.role == EmbeddingRole::TextBaseline && k.image_index.is_some() && k.pt.is_some()
    })
}

/// Visual baseline rows keyed by (source, language, concept).
pub fn baseline_sets(store: &EmbeddingStore) -> BTreeMap<(String, String, String), Vec<SetKey>> {
    let mut sets: BTreeMap<(String, String, String), Vec<SetKey>> = BTreeMap::new();
    for key in store
        .keys()
        .iter()
        .filter(|k| k.role == EmbeddingRole::VisualBaseline)
    {
        if let (Some(lang), Some(concept)) = (&key.lang, &key.concept) {
            let source = key.model.clone().unwrap_or_default();
            sets.entry((source, lang.clone(), concept.clone()))
                .or_default()
                .push(key.clone());
        }
    }
    for keys in sets.values_mut() {
        keys.sort_by_key(|k| k.image_index);
    }
    sets
}

fn language_rank(registry: &OntologyRegistry, lang: &str) -> usize {
    registry
        .languages()
        .iter()
        .position(|l| l.code == lang)
        .unwrap_or(usize::MAX)
}

fn sort_languages(registry: &OntologyRegistry, langs: &mut Vec<String>) {
    langs.sort_by(|a, b| {
        language_rank(registry, a)
            .cmp(&language_rank(registry, b))
            .then(a.cmp(b))
    });
    langs.dedup();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRun {
    pub model: String,
    pub template: TemplateKind,
    pub matrix: ConfusionMatrix,
    pub accuracy: AccuracyResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaRun {
    /// Nationalities whose style prompt was found, in registry order.
    pub labels: Vec<String>,
    pub report: MetricReport,
    pub confusion: Vec<ConfusionRun>,
}

/// NA for every selected image set, plus a confusion matrix and accuracy per
/// (model, template) over the languages present.
pub fn run_na(
    registry: &OntologyRegistry,
    store: &EmbeddingStore,
    selection: &Selection,
    exec: Execution,
) -> Result<NaRun, MetricError> {
    let nat_keys: Vec<(String, SetKey)> = registry
        .nationalities()
        .iter()
        .map(|n| {
            (
                n.primary_name.clone(),
                nationality_text_key(&n.primary_name),
            )
        })
        .filter(|(_, k)| store.contains(k))
        .collect();
    if nat_keys.is_empty() {
        return Err(MetricError::MissingText(
            "any nationality style prompt".into(),
        ));
    }
    let sets = image_sets(store, selection);
    if sets.is_empty() {
        return Err(MetricError::Empty("image set selection"));
    }
    let ids: Vec<&ImageSetId> = sets.keys().collect();
    let keys: Vec<Vec<SetKey>> = sets.values().cloned().collect();
    let dists = national_association_batch(&keys, &nat_keys, store, exec)?;

    let mut values = Vec::new();
    let mut grouped: BTreeMap<(String, TemplateKind), BTreeMap<String, Vec<NaDistribution>>> =
        BTreeMap::new();
    for (id, dist) in ids.iter().zip(&dists) {
        for (label, p) in dist.labels.iter().zip(&dist.probs) {
            values.push(MetricValue {
                group: MetricGroup {
                    label: Some(label.clone()),
                    ..id.group()
                },
                value: *p,
                normalized: None,
            });
        }
        grouped
            .entry((id.model.clone(), id.template))
            .or_default()
            .entry(id.language.clone())
            .or_default()
            .push(dist.clone());
    }

    let mut confusion = Vec::new();
    for ((model, template), per_language) in &grouped {
        let mut languages: Vec<String> = per_language
            .keys()
            .filter(|lang| {
                registry
                    .nationality(lang)
                    .map(|n| nat_keys.iter().any(|(name, _)| *name == n.primary_name))
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        sort_languages(registry, &mut languages);
        if languages.is_empty() {
            continue;
        }
        let columns: Vec<String> = languages
            .iter()
            .map(|l| registry.nationality(l).map(|n| n.primary_name.clone()))
            .collect::<Result<_, _>>()
            .map_err(|_| MetricError::LabelMismatch)?;
        let mut matrix = na_confusion_matrix(&languages, &columns, per_language)?;
        matrix.labels = languages;
        let accuracy = confusion_accuracy(&matrix)?;
        confusion.push(ConfusionRun {
            model: model.clone(),
            template: *template,
            matrix,
            accuracy,
        });
    }
    Ok(NaRun {
        labels: nat_keys.into_iter().map(|(n, _)| n).collect(),
        report: MetricReport::new("na", values),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCultureMap {
    pub model: String,
    pub map: CultureMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRun {
    /// Dimensions with both pole prompts present.
    pub dimensions: Vec<String>,
    /// One value per (image set, pole); the label is `<dimension>:<pole>`.
    pub report: MetricReport,
    /// Per model and language, pole scores averaged over concepts and templates.
    pub pole_scores: BTreeMap<String, BTreeMap<String, Vec<DimensionScorePair>>>,
    pub culture_maps: Vec<ModelCultureMap>,
}

/// Per dimension: (sum positive, sum negative, count).
type PoleSums = Vec<(f64, f64, usize)>;

pub fn run_dp(
    registry: &OntologyRegistry,
    store: &EmbeddingStore,
    selection: &Selection,
    map_spec: &CultureMapSpec,
    exec: Execution,
) -> Result<DpRun, MetricError> {
    let dims: Vec<(&str, SetKey, SetKey, &str, &str)> = registry
        .dimensions()
        .iter()
        .map(|d| {
            (
                d.id.as_str(),
                pole_text_key(&d.pole_positive),
                pole_text_key(&d.pole_negative),
                d.pole_positive.name.as_str(),
                d.pole_negative.name.as_str(),
            )
        })
        .filter(|(_, p, n, _, _)| store.contains(p) && store.contains(n))
        .collect();
    if dims.is_empty() {
        return Err(MetricError::MissingText(
            "any dimension aspect prompt".into(),
        ));
    }
    let sets: Vec<(ImageSetId, Vec<SetKey>)> = image_sets(store, selection).into_iter().collect();
    if sets.is_empty() {
        return Err(MetricError::Empty("image set selection"));
    }
    let scores = exec.try_map(&sets, |(_, keys)| {
        dims.iter()
            .map(|(_, p, n, _, _)| {
                Ok::<_, MetricError>((
                    dimension_projection(keys, p, store)?,
                    dimension_projection(keys, n, store)?,
                ))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut values = Vec::new();
    let mut sums: BTreeMap<String, BTreeMap<String, PoleSums>> = BTreeMap::new();
    for ((id, _), per_dim) in sets.iter().zip(&scores) {
        let acc = sums
            .entry(id.model.clone())
            .or_default()
            .entry(id.language.clone())
            .or_insert_with(|| vec![(0.0, 0.0, 0); dims.len()]);
        for (i, ((dim, _, _, pos_name, neg_name), (pos, neg))) in
            dims.iter().zip(per_dim).enumerate()
        {
            for (pole, v) in [(pos_name, pos), (neg_name, neg)] {
                values.push(MetricValue {
                    group: MetricGroup {
                        label: Some(format!("{dim}:{pole}")),
                        ..id.group()
                    },
                    value: *v,
                    normalized: None,
                });
            }
            acc[i].0 += pos;
            acc[i].1 += neg;
            acc[i].2 += 1;
        }
    }

    let pole_scores: BTreeMap<String, BTreeMap<String, Vec<DimensionScorePair>>> = sums
        .into_iter()
        .map(|(model, langs)| {
            let langs = langs
                .into_iter()
                .map(|(lang, acc)| {
                    let pairs = dims
                        .iter()
                        .zip(acc)
                        .map(|((dim, ..), (p, n, c))| DimensionScorePair {
                            dimension_id: dim.to_string(),
                            pole_positive_score: p / c as f64,
                            pole_negative_score: n / c as f64,
                        })
                        .collect();
                    (lang, pairs)
                })
                .collect();
            (model, langs)
        })
        .collect();

    let dimension_ids: Vec<String> = dims.iter().map(|d| d.0.to_string()).collect();
    let mut culture_maps = Vec::new();
    let has_axes = [&map_spec.x.dimension_id, &map_spec.y.dimension_id]
        .iter()
        .all(|d| dimension_ids.contains(d));
    if has_axes {
        for (model, langs) in &pole_scores {
            culture_maps.push(ModelCultureMap {
                model: model.clone(),
                map: culture_map_axes(langs, map_spec)?,
            });
        }
    }
    Ok(DpRun {
        dimensions: dimension_ids,
        report: MetricReport::new("dp", values),
        pole_scores,
        culture_maps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdRun {
    pub report: MetricReport,
    /// Mean CD per (model, template, language) over concepts.
    pub by_language: MetricReport,
}

pub fn run_cd(
    registry: &OntologyRegistry,
    store: &EmbeddingStore,
    selection: &Selection,
    exec: Execution,
) -> Result<CdRun, MetricError> {
    let sets: Vec<(ImageSetId, Vec<SetKey>)> = image_sets(store, selection)
        .into_iter()
        .filter(|(id, _)| id.language != "EN")
        .collect();
    if sets.is_empty() {
        return Err(MetricError::Empty("non-English image set selection"));
    }
    let values = exec.try_map(&sets, |(id, keys)| {
        let concept = registry
            .concept(&id.concept)
            .map_err(|_| MetricError::MissingText(format!("concept `{}`", id.concept)))?;
        let reference = reference_text_key(concept);
        if !store.contains(&reference) {
            return Err(MetricError::MissingText(format!(
                "the English reference prompt of `{}`",
                id.concept
            )));
        }
        Ok(MetricValue {
            group: id.group(),
            value: cultural_distance(keys, &reference, store)?,
            normalized: None,
        })
    })?;
    let by_language = mean_by(&values, "cd", |g| MetricGroup {
        model: g.model.clone(),
        template: g.template,
        language: g.language.clone(),
        ..MetricGroup::default()
    });
    let mut report = MetricReport::new("cd", values);
    report.scale = Some(CD_SCALE);
    let mut by_language = by_language;
    by_language.scale = Some(CD_SCALE);
    Ok(CdRun {
        report,
        by_language,
    })
}

fn mean_by(
    values: &[MetricValue],
    metric: &str,
    key: impl Fn(&MetricGroup) -> MetricGroup,
) -> MetricReport {
    let mut acc: BTreeMap<MetricGroup, (f64, usize)> = BTreeMap::new();
    for v in values {
        let e = acc.entry(key(&v.group)).or_insert((0.0, 0));
        e.0 += v.value;
        e.1 += 1;
    }
    MetricReport::new(
        metric,
        acc.into_iter()
            .map(|(group, (sum, n))| MetricValue {
                group,
                value: sum / n as f64,
                normalized: None,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsRun {
    pub model: String,
    pub template: TemplateKind,
    /// `model` field of the visual baseline rows.
    pub baseline_source: String,
    pub matrix: CcsMatrix,
}

/// One CCS matrix per (image model, template, baseline source) with at
/// least two languages that have both images and baselines.
pub fn run_ccs(
    registry: &OntologyRegistry,
    store: &EmbeddingStore,
    selection: &Selection,
    exec: Execution,
) -> Result<Vec<CcsRun>, MetricError> {
    let sets = image_sets(store, selection);
    let baselines = baseline_sets(store);
    if baselines.is_empty() {
        return Err(MetricError::Empty("visual baseline set"));
    }
    let sources: BTreeSet<&String> = baselines.keys().map(|(s, _, _)| s).collect();
    let combos: BTreeSet<(&String, TemplateKind)> =
        sets.keys().map(|id| (&id.model, id.template)).collect();
    let mut runs = Vec::new();
    for (model, template) in combos {
        for source in &sources {
            let mut images = BTreeMap::new();
            for (id, keys) in sets
                .iter()
                .filter(|(id, _)| &id.model == model && id.template == template)
            {
                images.insert((id.language.clone(), id.concept.clone()), keys.clone());
            }
            let base: BTreeMap<(String, String), Vec<SetKey>> = baselines
                .iter()
                .filter(|((s, _, _), _)| s == *source)
                .map(|((_, l, c), keys)| ((l.clone(), c.clone()), keys.clone()))
                .collect();
            let image_langs: BTreeSet<&String> = images.keys().map(|(l, _)| l).collect();
            let base_langs: BTreeSet<&String> = base.keys().map(|(l, _)| l).collect();
            let mut languages: Vec<String> = image_langs
                .intersection(&base_langs)
                .map(|l| (*l).clone())
                .collect();
            sort_languages(registry, &mut languages);
            if languages.len() < 2 {
                continue;
            }
            let concepts: BTreeSet<String> = images
                .keys()
                .chain(base.keys())
                .filter(|(l, _)| languages.contains(l))
                .map(|(_, c)| c.clone())
                .collect();
            let input = CcsInput {
                languages,
                concepts: concepts.into_iter().collect(),
                images,
                baselines: base,
            };
            runs.push(CcsRun {
                model: model.clone(),
                template,
                baseline_source: (*source).clone(),
                matrix: build_ccs_matrix(&input, store, exec)?,
            });
        }
    }
    if runs.is_empty() {
        return Err(MetricError::Empty(
            "language pair with images and baselines",
        ));
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    /// Raw coverage per described image set.
    pub report: MetricReport,
    /// Mean coverage per template, one report per model, range-normalized
    /// across templates when requested.
    pub by_template: Vec<MetricReport>,
}

pub fn run_coverage(
    registry: &OntologyRegistry,
    store: &EmbeddingStore,
    selection: &Selection,
    normalize: bool,
    exec: Execution,
) -> Result<CoverageRun, MetricError> {
    let sets: Vec<(ImageSetId, Vec<SetKey>)> =
        description_sets(store, selection).into_iter().collect();
    if sets.is_empty() {
        return Err(MetricError::Empty("description set selection"));
    }
    let values = exec.try_map(&sets, |(id, keys)| {
        let concept = registry
            .concept(&id.concept)
            .map_err(|_| MetricError::MissingText(format!("concept `{}`", id.concept)))?;
        let target = concept_term_key(concept);
        if !store.contains(&target) {
            return Err(MetricError::MissingText(format!(
                "the concept term `{}`",
                concept.english_term
            )));
        }
        Ok(MetricValue {
            group: id.group(),
            value: conceptual_coverage(keys, &target, store)?,
            normalized: None,
        })
    })?;
    let per_template = mean_by(&values, "coverage", |g| MetricGroup {
        model: g.model.clone(),
        template: g.template,
        ..MetricGroup::default()
    });
    let mut by_model: BTreeMap<Option<String>, Vec<MetricValue>> = BTreeMap::new();
    for v in per_template.values {
        by_model.entry(v.group.model.clone()).or_default().push(v);
    }
    let mut by_template = Vec::new();
    for (_, vals) in by_model {
        let mut r = MetricReport::new("coverage", vals);
        if normalize {
            r.normalize()?;
        }
        by_template.push(r);
    }
    Ok(CoverageRun {
        report: MetricReport::new("coverage", values),
        by_template,
    })
}
