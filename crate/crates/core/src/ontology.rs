//! Cultural ontology: languages, nationalities, domains, concepts and
//! dimensions.
//!
//! The registry is a single JSON document. A curated default is embedded in
//! the crate and returned by [`OntologyRegistry::bundled`]; alternative files
//! go through [`OntologyRegistry::from_path`] and receive the same validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_REGISTRY: &str = include_str!("../data/registry.json");

/// Placeholder substituted by the translated concept in `photo_of_template`.
pub const CONCEPT_PLACEHOLDER: &str = "{concept}";

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("failed to read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registry does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} `{owner}` references unknown {target} `{id}`")]
    DanglingReference {
        kind: &'static str,
        owner: String,
        target: &'static str,
        id: String,
    },
    #[error("invalid {kind} `{id}`: {reason}")]
    Invalid {
        kind: &'static str,
        id: String,
        reason: String,
    },
    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    pub code: String,
    pub display_name: String,
    /// Letters of the language, stored as a string of distinct characters.
    /// Order is significant: gibberish sampling indexes into it.
    pub alphabet: String,
    /// Translated "a photo of {concept}" used by the fully translated template.
    pub photo_of_template: String,
}

impl Language {
    pub fn alphabet_chars(&self) -> Vec<char> {
        self.alphabet.chars().collect()
    }

    /// Total membership test; any scalar value is accepted.
    pub fn contains_char(&self, c: char) -> bool {
        self.alphabet.contains(c)
    }

    pub fn is_in_alphabet(&self, text: &str) -> bool {
        !text.is_empty() && text.chars().all(|c| self.contains_char(c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nationality {
    pub language: String,
    pub primary_name: String,
    /// Second-order nationalities sharing the language.
    #[serde(default)]
    pub additional_names: Vec<String>,
    /// Free-text forms accepted as referring to the primary nationality.
    #[serde(default)]
    pub country_aliases: Vec<String>,
    /// Free-text forms for each additional nationality.
    #[serde(default)]
    pub additional_aliases: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CulturalDomain {
    pub id: String,
    pub name: String,
    pub concept_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CulturalConcept {
    pub id: String,
    pub english_term: String,
    pub domain_id: String,
    #[serde(default)]
    pub translations: BTreeMap<String, String>,
    /// Member of the 40-concept tangible subset used for coverage analysis.
    #[serde(default)]
    pub tangible: bool,
    /// Listed in parentheses in the source table (enrichment concept).
    #[serde(default)]
    pub supplementary: bool,
    /// False for concepts added to complete the 210-concept dataset that are
    /// absent from the published concept table.
    #[serde(default = "default_true")]
    pub listed: bool,
}

fn default_true() -> bool {
    true
}

impl CulturalConcept {
    /// Concept text in `language`; English uses the English term.
    pub fn term_in(&self, language: &str) -> Option<&str> {
        if language == "EN" {
            Some(&self.english_term)
        } else {
            self.translations.get(language).map(String::as_str)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionPole {
    /// Display name, e.g. "Modern".
    pub name: String,
    /// Noun used in the projection prompt ("a photo with modernity aspects").
    pub aspect: String,
    /// Term used in the VQA question ("Are there more modern features ...").
    pub answer: String,
    /// Free-text forms accepted when normalizing VQA answers.
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CulturalDimension {
    pub id: String,
    pub pole_positive: DimensionPole,
    pub pole_negative: DimensionPole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NationalityOrder {
    Primary,
    Extended,
}

impl fmt::Display for NationalityOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NationalityOrder::Primary => "primary",
            NationalityOrder::Extended => "extended",
        })
    }
}

impl std::str::FromStr for NationalityOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "primary" => Ok(NationalityOrder::Primary),
            "extended" => Ok(NationalityOrder::Extended),
            other => Err(format!("unknown nationality order `{other}`")),
        }
    }
}

/// Serialized form of the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryData {
    pub version: String,
    pub languages: Vec<Language>,
    pub nationalities: Vec<Nationality>,
    pub domains: Vec<CulturalDomain>,
    pub concepts: Vec<CulturalConcept>,
    pub dimensions: Vec<CulturalDimension>,
}

/// Validated, immutable registry with id lookups.
#[derive(Debug, Clone)]
pub struct OntologyRegistry {
    data: RegistryData,
    languages: HashMap<String, usize>,
    nationalities: HashMap<String, usize>,
    concepts: HashMap<String, usize>,
    domains: HashMap<String, usize>,
    dimensions: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl PartialEq for OntologyRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl OntologyRegistry {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_REGISTRY).expect("bundled registry is valid")
    }

    /// Process-wide parsed copy of the bundled registry.
    pub fn bundled_shared() -> &'static Self {
        static SHARED: std::sync::OnceLock<OntologyRegistry> = std::sync::OnceLock::new();
        SHARED.get_or_init(Self::bundled)
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED_REGISTRY
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        let data: RegistryData = serde_json::from_str(text)?;
        Self::from_data(data)
    }

    pub fn from_data(data: RegistryData) -> Result<Self, OntologyError> {
        let languages = index_unique("language", data.languages.iter().map(|l| &l.code))?;
        let concepts = index_unique("concept", data.concepts.iter().map(|c| &c.id))?;
        let domains = index_unique("domain", data.domains.iter().map(|d| &d.id))?;
        let dimensions = index_unique("dimension", data.dimensions.iter().map(|d| &d.id))?;
        let nationalities = index_unique(
            "nationality",
            data.nationalities.iter().map(|n| &n.language),
        )?;

        for lang in &data.languages {
            if lang.alphabet.is_empty() {
                return Err(invalid("language", &lang.code, "alphabet is empty"));
            }
            let mut seen = HashSet::new();
            for c in lang.alphabet.chars() {
                if !c.is_alphabetic() {
                    return Err(invalid(
                        "language",
                        &lang.code,
                        format!("alphabet contains non-letter {c:?}"),
                    ));
                }
                if !seen.insert(c) {
                    return Err(invalid(
                        "language",
                        &lang.code,
                        format!("alphabet repeats {c:?}"),
                    ));
                }
            }
            if !lang.photo_of_template.contains(CONCEPT_PLACEHOLDER) {
                return Err(invalid(
                    "language",
                    &lang.code,
                    "photo_of_template lacks the {concept} placeholder",
                ));
            }
        }
        if let Some(en) = languages.get("EN").map(|&i| &data.languages[i]) {
            if en.alphabet != "abcdefghijklmnopqrstuvwxyz" {
                return Err(invalid(
                    "language",
                    "EN",
                    "alphabet must be the 26 Latin letters",
                ));
            }
        }

        for nat in &data.nationalities {
            if !languages.contains_key(&nat.language) {
                return Err(OntologyError::DanglingReference {
                    kind: "nationality",
                    owner: nat.primary_name.clone(),
                    target: "language",
                    id: nat.language.clone(),
                });
            }
            if nat.primary_name.trim().is_empty() {
                return Err(invalid("nationality", &nat.language, "empty primary name"));
            }
            for name in nat.additional_aliases.keys() {
                if !nat.additional_names.contains(name) {
                    return Err(OntologyError::DanglingReference {
                        kind: "nationality",
                        owner: nat.language.clone(),
                        target: "additional nationality",
                        id: name.clone(),
                    });
                }
            }
        }

        let mut owner: HashMap<&str, &str> = HashMap::new();
        for domain in &data.domains {
            for cid in &domain.concept_ids {
                if !concepts.contains_key(cid) {
                    return Err(OntologyError::DanglingReference {
                        kind: "domain",
                        owner: domain.id.clone(),
                        target: "concept",
                        id: cid.clone(),
                    });
                }
                if let Some(prev) = owner.insert(cid, &domain.id) {
                    return Err(invalid(
                        "concept",
                        cid,
                        format!("listed by both domain `{prev}` and `{}`", domain.id),
                    ));
                }
            }
        }

        let mut warnings = Vec::new();
        for concept in &data.concepts {
            if concept.english_term.trim().is_empty() {
                return Err(invalid("concept", &concept.id, "empty english term"));
            }
            if !domains.contains_key(&concept.domain_id) {
                return Err(OntologyError::DanglingReference {
                    kind: "concept",
                    owner: concept.id.clone(),
                    target: "domain",
                    id: concept.domain_id.clone(),
                });
            }
            match owner.get(concept.id.as_str()) {
                Some(d) if *d == concept.domain_id => {}
                _ => {
                    return Err(invalid(
                        "concept",
                        &concept.id,
                        format!("not listed by its domain `{}`", concept.domain_id),
                    ))
                }
            }
            for code in concept.translations.keys() {
                if !languages.contains_key(code) {
                    return Err(OntologyError::DanglingReference {
                        kind: "concept",
                        owner: concept.id.clone(),
                        target: "language",
                        id: code.clone(),
                    });
                }
            }
            for lang in &data.languages {
                if lang.code != "EN" && !concept.translations.contains_key(&lang.code) {
                    warnings.push(format!(
                        "concept `{}` has no {} translation",
                        concept.id, lang.code
                    ));
                }
            }
        }

        for dim in &data.dimensions {
            if dim.pole_positive.name == dim.pole_negative.name {
                return Err(invalid("dimension", &dim.id, "pole names must differ"));
            }
        }

        Ok(Self {
            data,
            languages,
            nationalities,
            concepts,
            domains,
            dimensions,
            warnings,
        })
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.data).expect("registry serializes");
        out.push('\n');
        out
    }

    pub fn data(&self) -> &RegistryData {
        &self.data
    }

    pub fn version(&self) -> &str {
        &self.data.version
    }

    /// Non-fatal validation findings, e.g. missing translations.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn languages(&self) -> &[Language] {
        &self.data.languages
    }

    pub fn concepts(&self) -> &[CulturalConcept] {
        &self.data.concepts
    }

    pub fn domains(&self) -> &[CulturalDomain] {
        &self.data.domains
    }

    pub fn dimensions(&self) -> &[CulturalDimension] {
        &self.data.dimensions
    }

    pub fn nationalities(&self) -> &[Nationality] {
        &self.data.nationalities
    }

    pub fn language(&self, code: &str) -> Result<&Language, OntologyError> {
        self.languages
            .get(code)
            .map(|&i| &self.data.languages[i])
            .ok_or_else(|| OntologyError::UnknownLanguage(code.to_string()))
    }

    pub fn concept(&self, id: &str) -> Result<&CulturalConcept, OntologyError> {
        self.concepts
            .get(id)
            .map(|&i| &self.data.concepts[i])
            .ok_or_else(|| OntologyError::UnknownConcept(id.to_string()))
    }

    pub fn domain(&self, id: &str) -> Option<&CulturalDomain> {
        self.domains.get(id).map(|&i| &self.data.domains[i])
    }

    pub fn dimension(&self, id: &str) -> Result<&CulturalDimension, OntologyError> {
        self.dimensions
            .get(id)
            .map(|&i| &self.data.dimensions[i])
            .ok_or_else(|| OntologyError::UnknownDimension(id.to_string()))
    }

    pub fn nationality(&self, code: &str) -> Result<&Nationality, OntologyError> {
        self.language(code)?;
        self.nationalities
            .get(code)
            .map(|&i| &self.data.nationalities[i])
            .ok_or_else(|| OntologyError::UnknownLanguage(code.to_string()))
    }

    /// Nationality names associated with a language. `Primary` yields one
    /// name; `Extended` appends the second-order nationalities in registry
    /// order.
    pub fn nationality_for(
        &self,
        code: &str,
        order: NationalityOrder,
    ) -> Result<Vec<String>, OntologyError> {
        let nat = self.nationality(code)?;
        let mut names = vec![nat.primary_name.clone()];
        if order == NationalityOrder::Extended {
            names.extend(nat.additional_names.iter().cloned());
        }
        Ok(names)
    }

    /// Language whose primary nationality is `name`.
    pub fn language_of_primary(&self, name: &str) -> Option<&str> {
        self.data
            .nationalities
            .iter()
            .find(|n| n.primary_name == name)
            .map(|n| n.language.as_str())
    }

    pub fn language_codes(&self) -> Vec<String> {
        self.data.languages.iter().map(|l| l.code.clone()).collect()
    }

    pub fn concept_ids(&self) -> Vec<String> {
        self.data.concepts.iter().map(|c| c.id.clone()).collect()
    }
}

fn index_unique<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a String>,
) -> Result<HashMap<String, usize>, OntologyError> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(OntologyError::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(map)
}

fn invalid(kind: &'static str, id: &str, reason: impl Into<String>) -> OntologyError {
    OntologyError::Invalid {
        kind,
        id: id.to_string(),
        reason: reason.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled_data() -> RegistryData {
        OntologyRegistry::bundled().data().clone()
    }

    #[test]
    fn bundled_counts() {
        let reg = OntologyRegistry::bundled();
        assert_eq!(reg.dimensions().len(), 8);
        assert_eq!(reg.languages().len(), 10);
        assert_eq!(reg.concepts().len(), 210);
        assert!(reg.concepts().len() >= 200);
        let countries = reg.domain("countries").unwrap();
        assert_eq!(countries.concept_ids.len(), 10);
        assert_eq!(reg.concepts().iter().filter(|c| c.tangible).count(), 40);
        assert!(reg.warnings().is_empty(), "{:?}", reg.warnings());
    }

    #[test]
    fn nationality_orders() {
        let reg = OntologyRegistry::bundled();
        assert_eq!(
            reg.nationality_for("EL", NationalityOrder::Primary)
                .unwrap(),
            vec!["Greek"]
        );
        assert_eq!(
            reg.nationality_for("EL", NationalityOrder::Extended)
                .unwrap(),
            vec!["Greek", "Cypriot", "Albanian"]
        );
        assert_eq!(
            reg.nationality_for("IW", NationalityOrder::Extended)
                .unwrap(),
            vec!["Israeli"]
        );
        assert!(matches!(
            reg.nationality_for("XX", NationalityOrder::Primary),
            Err(OntologyError::UnknownLanguage(code)) if code == "XX"
        ));
    }

    #[test]
    fn every_language_has_one_nationality() {
        let reg = OntologyRegistry::bundled();
        for lang in reg.languages() {
            assert!(reg.nationality(&lang.code).is_ok(), "{}", lang.code);
        }
    }

    #[test]
    fn unknown_domain_is_named() {
        let mut data = bundled_data();
        data.concepts[0].domain_id = "xyz".into();
        let err = OntologyRegistry::from_data(data).unwrap_err();
        assert!(err.to_string().contains("xyz"), "{err}");
    }

    #[test]
    fn duplicate_concept_is_named() {
        let mut data = bundled_data();
        let dup = data.concepts[3].clone();
        data.concepts.push(dup);
        let err = OntologyRegistry::from_data(data).unwrap_err();
        assert!(
            matches!(&err, OntologyError::DuplicateId { kind: "concept", id } if id == "race"),
            "{err}"
        );
    }

    #[test]
    fn dangling_domain_member() {
        let mut data = bundled_data();
        data.domains[0].concept_ids.push("ghost".into());
        let err = OntologyRegistry::from_data(data).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn missing_translation_is_a_warning() {
        let mut data = bundled_data();
        data.concepts[0].translations.remove("RU");
        let reg = OntologyRegistry::from_data(data).unwrap();
        assert_eq!(reg.warnings().len(), 1);
        assert!(reg.warnings()[0].contains("RU"));
    }

    #[test]
    fn parse_failure() {
        assert!(matches!(
            OntologyRegistry::from_json("{ not json"),
            Err(OntologyError::Parse(_))
        ));
    }

    #[test]
    fn round_trip() {
        let reg = OntologyRegistry::bundled();
        let again = OntologyRegistry::from_json(&reg.to_json()).unwrap();
        assert_eq!(reg, again);
    }

    #[test]
    fn alphabet_membership_is_total() {
        let reg = OntologyRegistry::bundled();
        let probes = ['a', 'я', '中', '\u{0}', '\u{10FFFF}', ' ', '7', 'ß'];
        for lang in reg.languages() {
            for c in probes {
                let _ = lang.contains_char(c);
            }
        }
        assert!(reg.language("EN").unwrap().contains_char('q'));
        assert!(!reg.language("EN").unwrap().contains_char('я'));
        assert!(reg.language("RU").unwrap().contains_char('я'));
    }

    #[test]
    fn term_in_language() {
        let reg = OntologyRegistry::bundled();
        let food = reg.concept("food").unwrap();
        assert_eq!(food.term_in("EN"), Some("food"));
        assert_eq!(food.term_in("RU"), Some("еда"));
        assert_eq!(reg.concept("city").unwrap().term_in("DE"), Some("Stadt"));
        assert_eq!(reg.concept("city").unwrap().term_in("ES"), Some("ciudad"));
    }
}
