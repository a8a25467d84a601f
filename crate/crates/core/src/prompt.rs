//! Generation and evaluation prompt templates, and dataset manifest
//! enumeration.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ontology::{
    CulturalConcept, Language, OntologyError, OntologyRegistry, CONCEPT_PLACEHOLDER,
};
use crate::par::Execution;

pub const DEFAULT_IMAGES_PER_SET: u32 = 4;
pub const DEFAULT_BASE_SEED: u64 = 42;
/// Length of the gibberish example in the template table ("йкуаскымдо").
pub const DEFAULT_GIBBERISH_LENGTH: usize = 10;

const EN_PHOTO_OF: &str = "a photo of";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("concept `{concept}` has no {language} translation")]
    MissingTranslation { concept: String, language: String },
    #[error("template {0} requires a gibberish spec")]
    MissingGibberish(TemplateKind),
    #[error("gibberish length must be at least 1")]
    EmptyGibberish,
    #[error("{kind:?} prompt: missing placeholder `{name}`")]
    MissingPlaceholder { kind: EvalPromptKind, name: String },
    #[error("{kind:?} prompt: unexpected argument `{name}`")]
    ExtraPlaceholder { kind: EvalPromptKind, name: String },
    #[error("duplicate {kind} `{id}` in model config")]
    DuplicateInConfig { kind: &'static str, id: String },
    #[error("images per set must be at least 1")]
    ZeroImages,
    #[error("failed to render ({concept}, {template}, {language}): {source}")]
    Render {
        concept: String,
        template: TemplateKind,
        language: String,
        #[source]
        source: Box<PromptError>,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    EnglishReference,
    FullyTranslated,
    TranslatedConcept,
    EnglishWithNation,
    EnglishWithGibberish,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::EnglishReference,
        TemplateKind::FullyTranslated,
        TemplateKind::TranslatedConcept,
        TemplateKind::EnglishWithNation,
        TemplateKind::EnglishWithGibberish,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::EnglishReference => "english_reference",
            TemplateKind::FullyTranslated => "fully_translated",
            TemplateKind::TranslatedConcept => "translated_concept",
            TemplateKind::EnglishWithNation => "english_with_nation",
            TemplateKind::EnglishWithGibberish => "english_with_gibberish",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown prompt template `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibberishSpec {
    pub length: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSegment {
    pub text: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub template_kind: TemplateKind,
    pub concept_id: String,
    pub language_code: String,
    pub components: Vec<PromptSegment>,
}

impl PromptInstance {
    fn from_segments(
        kind: TemplateKind,
        concept: &CulturalConcept,
        language: &Language,
        components: Vec<PromptSegment>,
    ) -> Self {
        let text = components
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            text,
            template_kind: kind,
            concept_id: concept.id.clone(),
            language_code: language.code.clone(),
            components,
        }
    }
}

fn segment(text: impl Into<String>, language: &str) -> PromptSegment {
    PromptSegment {
        text: text.into(),
        language: language.to_string(),
    }
}

fn translation<'a>(
    concept: &'a CulturalConcept,
    language: &Language,
) -> Result<&'a str, PromptError> {
    concept
        .term_in(&language.code)
        .ok_or_else(|| PromptError::MissingTranslation {
            concept: concept.id.clone(),
            language: language.code.clone(),
        })
}

/// Render one generation prompt.
pub fn render_prompt(
    kind: TemplateKind,
    concept: &CulturalConcept,
    language: &Language,
    registry: &OntologyRegistry,
    gib: Option<&GibberishSpec>,
) -> Result<PromptInstance, PromptError> {
    registry.concept(&concept.id)?;
    registry.language(&language.code)?;
    let english = format!("{EN_PHOTO_OF} {}", concept.english_term);
    let components = match kind {
        TemplateKind::EnglishReference => vec![segment(english, "EN")],
        TemplateKind::FullyTranslated => {
            let term = translation(concept, language)?;
            let text = language
                .photo_of_template
                .replace(CONCEPT_PLACEHOLDER, term);
            vec![segment(text, &language.code)]
        }
        TemplateKind::TranslatedConcept => {
            let term = translation(concept, language)?;
            vec![segment(EN_PHOTO_OF, "EN"), segment(term, &language.code)]
        }
        TemplateKind::EnglishWithNation => {
            let nat = registry.nationality(&language.code)?;
            let text = format!(
                "{EN_PHOTO_OF} {} {}",
                nat.primary_name, concept.english_term
            );
            vec![segment(text, "EN")]
        }
        TemplateKind::EnglishWithGibberish => {
            let spec = gib.ok_or(PromptError::MissingGibberish(kind))?;
            let word = gen_gibberish(language, spec.length, spec.rng_seed)?;
            vec![segment(english, "EN"), segment(word, &language.code)]
        }
    };
    Ok(PromptInstance::from_segments(
        kind, concept, language, components,
    ))
}

/// Deterministic random string over the language alphabet.
pub fn gen_gibberish(
    language: &Language,
    length: usize,
    rng_seed: u64,
) -> Result<String, PromptError> {
    if length == 0 {
        return Err(PromptError::EmptyGibberish);
    }
    let alphabet = language.alphabet_chars();
    if alphabet.is_empty() {
        return Err(PromptError::Ontology(OntologyError::Invalid {
            kind: "language",
            id: language.code.clone(),
            reason: "alphabet is empty".into(),
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..length)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPromptKind {
    NationalStyle,
    DimensionAspects,
    XnaQuestion,
    XdpQuestion,
    ConceptReference,
    CoverageQuestion,
}

impl EvalPromptKind {
    pub const ALL: [EvalPromptKind; 6] = [
        EvalPromptKind::NationalStyle,
        EvalPromptKind::DimensionAspects,
        EvalPromptKind::XnaQuestion,
        EvalPromptKind::XdpQuestion,
        EvalPromptKind::ConceptReference,
        EvalPromptKind::CoverageQuestion,
    ];

    fn template(self) -> &'static str {
        match self {
            EvalPromptKind::NationalStyle => "a photo with {national} style",
            EvalPromptKind::DimensionAspects => "a photo with {dimension} aspects",
            EvalPromptKind::XnaQuestion => "What is the country of origin for the depicted photo?",
            EvalPromptKind::XdpQuestion => {
                "Are there more {d0} features in the photo or more {d1}?"
            }
            EvalPromptKind::ConceptReference => "a photo of {concept}",
            EvalPromptKind::CoverageQuestion => "Question: What is in the photo? Answer:",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            EvalPromptKind::NationalStyle => &["national"],
            EvalPromptKind::DimensionAspects => &["dimension"],
            EvalPromptKind::XdpQuestion => &["d0", "d1"],
            EvalPromptKind::ConceptReference => &["concept"],
            EvalPromptKind::XnaQuestion | EvalPromptKind::CoverageQuestion => &[],
        }
    }
}

/// Render an evaluation prompt or VQA question. `args` must name exactly the
/// placeholders of `kind`.
pub fn render_eval_prompt(
    kind: EvalPromptKind,
    args: &[(&str, &str)],
) -> Result<String, PromptError> {
    let wanted = kind.placeholders();
    for (name, _) in args {
        if !wanted.contains(name) {
            return Err(PromptError::ExtraPlaceholder {
                kind,
                name: name.to_string(),
            });
        }
    }
    let mut text = kind.template().to_string();
    for name in wanted {
        let value = args
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingPlaceholder {
                kind,
                name: name.to_string(),
            })?;
        text = text.replace(&format!("{{{name}}}"), value);
    }
    Ok(text)
}

/// "a photo with <national> style", lower-cased as in the metric table.
pub fn national_style_prompt(nationality: &str) -> String {
    let lower = nationality.to_lowercase();
    render_eval_prompt(EvalPromptKind::NationalStyle, &[("national", &lower)])
        .expect("fixed placeholder set")
}

pub fn dimension_aspect_prompt(aspect: &str) -> String {
    render_eval_prompt(EvalPromptKind::DimensionAspects, &[("dimension", aspect)])
        .expect("fixed placeholder set")
}

pub fn concept_reference_prompt(term: &str) -> String {
    render_eval_prompt(EvalPromptKind::ConceptReference, &[("concept", term)])
        .expect("fixed placeholder set")
}

pub fn xdp_question(d0: &str, d1: &str) -> String {
    render_eval_prompt(EvalPromptKind::XdpQuestion, &[("d0", d0), ("d1", d1)])
        .expect("fixed placeholder set")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    /// Empty means every registry language.
    #[serde(default)]
    pub languages: Vec<String>,
    /// Empty means all five templates.
    #[serde(default)]
    pub templates: Vec<TemplateKind>,
    /// Empty means every registry concept.
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default = "default_images")]
    pub images_per_set: u32,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_gib_len")]
    pub gibberish_length: usize,
    #[serde(default)]
    pub gibberish_seed: u64,
}

fn default_images() -> u32 {
    DEFAULT_IMAGES_PER_SET
}

fn default_seed() -> u64 {
    DEFAULT_BASE_SEED
}

fn default_gib_len() -> usize {
    DEFAULT_GIBBERISH_LENGTH
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            languages: Vec::new(),
            templates: Vec::new(),
            concepts: Vec::new(),
            images_per_set: DEFAULT_IMAGES_PER_SET,
            base_seed: DEFAULT_BASE_SEED,
            gibberish_length: DEFAULT_GIBBERISH_LENGTH,
            gibberish_seed: 0,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model: String,
    pub concept: String,
    pub pt: TemplateKind,
    pub lang: String,
    pub prompt: String,
    pub k: u32,
    /// Seed of the first image; image `j` uses `seed + j`.
    pub seed: u64,
}

impl ManifestEntry {
    pub fn image_seed(&self, index: u32) -> u64 {
        self.seed + u64::from(index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub model_id: String,
    pub entries: Vec<ManifestEntry>,
}

/// Per-entry gibberish seed mixed from the configured seed, concept and
/// language so prompts differ across concepts but stay reproducible.
pub fn gibberish_seed(base: u64, concept_id: &str, language: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(concept_id.as_bytes());
    h.update([0u8]);
    h.update(language.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn check_unique(kind: &'static str, ids: &[String]) -> Result<(), PromptError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(PromptError::DuplicateInConfig {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

/// Enumerate every (concept, template, language) tuple of a model config in
/// lexicographic order and render its prompt.
pub fn enumerate_dataset(
    config: &ModelConfig,
    registry: &OntologyRegistry,
    exec: Execution,
) -> Result<DatasetManifest, PromptError> {
    if config.images_per_set == 0 {
        return Err(PromptError::ZeroImages);
    }
    let languages = if config.languages.is_empty() {
        registry.language_codes()
    } else {
        config.languages.clone()
    };
    let concepts = if config.concepts.is_empty() {
        registry.concept_ids()
    } else {
        config.concepts.clone()
    };
    let templates = if config.templates.is_empty() {
        TemplateKind::ALL.to_vec()
    } else {
        config.templates.clone()
    };
    check_unique("language", &languages)?;
    check_unique("concept", &concepts)?;
    let template_names: Vec<String> = templates.iter().map(|t| t.to_string()).collect();
    check_unique("template", &template_names)?;
    for code in &languages {
        registry.language(code)?;
    }
    for id in &concepts {
        registry.concept(id)?;
    }

    let mut tuples = Vec::with_capacity(languages.len() * concepts.len() * templates.len());
    for c in &concepts {
        for t in &templates {
            for l in &languages {
                tuples.push((c.as_str(), *t, l.as_str()));
            }
        }
    }
    tuples.sort_by(|a, b| (a.0, a.1.as_str(), a.2).cmp(&(b.0, b.1.as_str(), b.2)));

    let entries = exec.try_map(&tuples, |&(cid, kind, code)| {
        let concept = registry.concept(cid)?;
        let language = registry.language(code)?;
        let gib = GibberishSpec {
            length: config.gibberish_length,
            rng_seed: gibberish_seed(config.gibberish_seed, cid, code),
        };
        let prompt = render_prompt(kind, concept, language, registry, Some(&gib)).map_err(|e| {
            PromptError::Render {
                concept: cid.to_string(),
                template: kind,
                language: code.to_string(),
                source: Box::new(e),
            }
        })?;
        Ok::<_, PromptError>(ManifestEntry {
            model: config.model_id.clone(),
            concept: cid.to_string(),
            pt: kind,
            lang: code.to_string(),
            prompt: prompt.text,
            k: config.images_per_set,
            seed: config.base_seed,
        })
    })?;

    Ok(DatasetManifest {
        model_id: config.model_id.clone(),
        entries,
    })
}

impl DatasetManifest {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), PromptError> {
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 json")
    }

    /// Parse a manifest and check every concept, language and tuple against
    /// the registry.
    pub fn read_jsonl<R: BufRead>(
        input: R,
        registry: &OntologyRegistry,
    ) -> Result<Self, PromptError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut model_id: Option<String> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| PromptError::Manifest {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            registry
                .concept(&entry.concept)
                .map_err(|e| PromptError::Manifest {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            registry
                .language(&entry.lang)
                .map_err(|e| PromptError::Manifest {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if !seen.insert((
                entry.model.clone(),
                entry.concept.clone(),
                entry.pt,
                entry.lang.clone(),
            )) {
                return Err(PromptError::Manifest {
                    line: lineno,
                    reason: format!(
                        "duplicate entry ({}, {}, {})",
                        entry.concept, entry.pt, entry.lang
                    ),
                });
            }
            if model_id.is_none() {
                model_id = Some(entry.model.clone());
            }
            entries.push(entry);
        }
        Ok(Self {
            model_id: model_id.unwrap_or_default(),
            entries,
        })
    }
}
