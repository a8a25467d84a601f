//! Embedding archives and similarity primitives.
//!
//! An archive is a directory holding `manifest.json` (dim, count and the
//! ordered row keys) and `embeddings.f32` (little-endian row-major `f32`).
//! Rows are normalized to unit length on ingestion so every similarity
//! downstream is a plain dot product.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::write_atomic;
use crate::prompt::TemplateKind;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "embeddings.f32";

/// Rows with an input norm below this are rejected.
pub const MIN_NORM: f64 = 1e-8;
/// Rows already this close to unit length are stored untouched, which keeps
/// ingest/export/ingest bit-identical.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("archive io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("archive manifest does not parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("archive declares {declared} keys but lists {listed}")]
    KeyCountMismatch { declared: usize, listed: usize },
    #[error("data block holds {actual} bytes, expected {expected} (count x dim x 4)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("duplicate key {0}")]
    DuplicateKey(Box<SetKey>),
    #[error("row {0} has zero norm")]
    ZeroNorm(Box<SetKey>),
    #[error("row {key} is not finite")]
    NonFinite { key: Box<SetKey> },
    #[error("vector is not finite")]
    NonFiniteVector,
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("missing key {0}")]
    MissingKey(Box<SetKey>),
    #[error("invalid key {key}: {reason}")]
    InvalidKey {
        key: Box<SetKey>,
        reason: &'static str,
    },
    #[error("empty key set")]
    EmptySet,
    #[error("mean of the set is the zero vector")]
    ZeroMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingRole {
    Image,
    TextBaseline,
    VisualBaseline,
}

/// Identity of one archive row.
///
/// Image rows carry the full (model, concept, template, language, index)
/// tuple. Text baselines are identified by the hash of their prompt text,
/// optionally scoped to a concept and language; a text row that also carries
/// an image identity is the embedding of that image's VQA description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SetKey {
    pub role: EmbeddingRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt: Option<TemplateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

/// Stable 16-hex-digit digest of a prompt text.
pub fn prompt_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

impl SetKey {
    pub fn image(model: &str, concept: &str, pt: TemplateKind, lang: &str, index: u32) -> Self {
        Self {
            role: EmbeddingRole::Image,
            model: Some(model.to_string()),
            concept: Some(concept.to_string()),
            pt: Some(pt),
            lang: Some(lang.to_string()),
            image_index: Some(index),
            prompt_hash: None,
        }
    }

    pub fn visual_baseline(model: &str, concept: &str, lang: &str, index: u32) -> Self {
        Self {
            role: EmbeddingRole::VisualBaseline,
            model: Some(model.to_string()),
            concept: Some(concept.to_string()),
            pt: None,
            lang: Some(lang.to_string()),
            image_index: Some(index),
            prompt_hash: None,
        }
    }

    /// Text embedding of a prompt that is not tied to a concept.
    pub fn text(prompt: &str) -> Self {
        Self {
            role: EmbeddingRole::TextBaseline,
            model: None,
            concept: None,
            pt: None,
            lang: None,
            image_index: None,
            prompt_hash: Some(prompt_hash(prompt)),
        }
    }

    /// Text embedding of a concept-specific prompt.
    pub fn concept_text(concept: &str, lang: &str, prompt: &str) -> Self {
        Self {
            concept: Some(concept.to_string()),
            lang: Some(lang.to_string()),
            ..Self::text(prompt)
        }
    }

    /// Text embedding of the free-text description of one image.
    pub fn description(
        model: &str,
        concept: &str,
        pt: TemplateKind,
        lang: &str,
        index: u32,
        text: &str,
    ) -> Self {
        Self {
            role: EmbeddingRole::TextBaseline,
            prompt_hash: Some(prompt_hash(text)),
            ..Self::image(model, concept, pt, lang, index)
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let fail = |reason| {
            Err(StoreError::InvalidKey {
                key: Box::new(self.clone()),
                reason,
            })
        };
        match self.role {
            EmbeddingRole::Image => {
                if self.model.is_none()
                    || self.concept.is_none()
                    || self.pt.is_none()
                    || self.lang.is_none()
                {
                    return fail("image rows need model, concept, pt and lang");
                }
                if self.image_index.is_none() {
                    return fail("image rows need an image_index");
                }
                if self.prompt_hash.is_some() {
                    return fail("image rows do not carry a prompt hash");
                }
            }
            EmbeddingRole::TextBaseline => {
                if self.prompt_hash.is_none() {
                    return fail("text baselines need a prompt_hash");
                }
            }
            EmbeddingRole::VisualBaseline => {
                if self.concept.is_none() || self.lang.is_none() || self.image_index.is_none() {
                    return fail("visual baselines need concept, lang and image_index");
                }
            }
        }
        Ok(())
    }

    /// Same set, ignoring the image index.
    pub fn same_set(&self, other: &SetKey) -> bool {
        self.role == other.role
            && self.model == other.model
            && self.concept == other.concept
            && self.pt == other.pt
            && self.lang == other.lang
    }
}

impl fmt::Display for SetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}",
            serde_json::to_string(self).map_err(|_| fmt::Error)?
        )
    }
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, StoreError> {
        let norm = norm(&values);
        if !norm.is_finite() {
            return Err(StoreError::NonFiniteVector);
        }
        if norm < MIN_NORM {
            return Err(StoreError::ZeroVector);
        }
        Ok(Self(normalize_row(values, norm)))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, StoreError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

pub(crate) fn norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

fn normalize_row(values: Vec<f32>, norm: f64) -> Vec<f32> {
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        values
    } else {
        values
            .iter()
            .map(|&v| (f64::from(v) / norm) as f32)
            .collect()
    }
}

/// Dot product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine similarity; rows are unit up to f32 rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    cosine_rows(a.as_slice(), b.as_slice())
}

pub fn cosine_rows(a: &[f32], b: &[f32]) -> Result<f64, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    // Dividing by the stored norms removes f32 rounding, so a row against
    // itself gives exactly 1.
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveManifest {
    dim: usize,
    count: usize,
    keys: Vec<SetKey>,
}

/// Immutable collection of unit rows keyed by [`SetKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<SetKey>,
    index: HashMap<SetKey, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[SetKey] {
        &self.keys
    }

    pub fn insert(&mut self, key: SetKey, values: Vec<f32>) -> Result<(), StoreError> {
        key.validate()?;
        if values.len() != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.index.contains_key(&key) {
            return Err(StoreError::DuplicateKey(Box::new(key)));
        }
        let n = norm(&values);
        if !n.is_finite() {
            return Err(StoreError::NonFinite { key: Box::new(key) });
        }
        if n < MIN_NORM {
            return Err(StoreError::ZeroNorm(Box::new(key)));
        }
        self.data.extend(normalize_row(values, n));
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        Ok(())
    }

    pub fn contains(&self, key: &SetKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn row(&self, key: &SetKey) -> Option<&[f32]> {
        self.index
            .get(key)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn get(&self, key: &SetKey) -> Result<&[f32], StoreError> {
        self.row(key)
            .ok_or_else(|| StoreError::MissingKey(Box::new(key.clone())))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&SetKey, &[f32])> {
        self.keys
            .iter()
            .zip(self.data.chunks_exact(self.dim.max(1)))
    }

    /// Image rows of one set, ordered by image index.
    pub fn image_set(
        &self,
        model: &str,
        concept: &str,
        pt: TemplateKind,
        lang: &str,
    ) -> Vec<SetKey> {
        let probe = SetKey::image(model, concept, pt, lang, 0);
        self.matching(|k| k.same_set(&probe))
    }

    /// Visual baseline rows for (model, concept, language).
    pub fn visual_baseline_set(&self, model: &str, concept: &str, lang: &str) -> Vec<SetKey> {
        let probe = SetKey::visual_baseline(model, concept, lang, 0);
        self.matching(|k| k.same_set(&probe))
    }

    /// Description text rows attached to the images of one set.
    pub fn description_set(
        &self,
        model: &str,
        concept: &str,
        pt: TemplateKind,
        lang: &str,
    ) -> Vec<SetKey> {
        self.matching(|k| {
            k.role == EmbeddingRole::TextBaseline
                && k.image_index.is_some()
                && k.model.as_deref() == Some(model)
                && k.concept.as_deref() == Some(concept)
                && k.pt == Some(pt)
                && k.lang.as_deref() == Some(lang)
        })
    }

    fn matching(&self, pred: impl Fn(&SetKey) -> bool) -> Vec<SetKey> {
        let mut keys: Vec<SetKey> = self.keys.iter().filter(|k| pred(k)).cloned().collect();
        keys.sort_by_key(|k| k.image_index);
        keys
    }

    pub fn similarity(&self, a: &SetKey, b: &SetKey) -> Result<f64, StoreError> {
        cosine_rows(self.get(a)?, self.get(b)?)
    }

    /// Read and validate an archive directory.
    pub fn ingest_archive(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| StoreError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: ArchiveManifest = serde_json::from_str(&text)?;
        let data_path = dir.join(DATA_FILE);
        let bytes = std::fs::read(&data_path).map_err(|source| StoreError::Io {
            path: data_path.display().to_string(),
            source,
        })?;
        Self::from_parts(manifest.dim, manifest.count, manifest.keys, &bytes)
    }

    fn from_parts(
        dim: usize,
        count: usize,
        keys: Vec<SetKey>,
        bytes: &[u8],
    ) -> Result<Self, StoreError> {
        if keys.len() != count {
            return Err(StoreError::KeyCountMismatch {
                declared: count,
                listed: keys.len(),
            });
        }
        let expected = count * dim * 4;
        if bytes.len() != expected {
            return Err(StoreError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let mut store = Self::new(dim);
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        for (key, row) in keys.into_iter().zip(floats.chunks_exact(dim.max(1))) {
            store.insert(key, row.to_vec())?;
        }
        Ok(store)
    }

    /// Serialized archive contents: (manifest JSON, data block).
    pub fn to_archive_bytes(&self) -> (String, Vec<u8>) {
        let manifest = ArchiveManifest {
            dim: self.dim,
            count: self.keys.len(),
            keys: self.keys.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        let bytes = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        (json, bytes)
    }

    pub fn export_archive(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let (json, bytes) = self.to_archive_bytes();
        for (name, payload) in [
            (MANIFEST_FILE, json.as_bytes()),
            (DATA_FILE, bytes.as_slice()),
        ] {
            let path = dir.join(name);
            write_atomic(&path, payload).map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.rows()
            .map(|(_, r)| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Model ids of the image rows, sorted.
    pub fn image_models(&self) -> Vec<String> {
        let mut models: Vec<String> = self
            .keys
            .iter()
            .filter(|k| k.role == EmbeddingRole::Image)
            .filter_map(|k| k.model.clone())
            .collect();
        models.sort();
        models.dedup();
        models
    }
}

/// Arithmetic mean of the rows, renormalized.
pub fn set_mean(keys: &[SetKey], store: &EmbeddingStore) -> Result<EmbeddingVector, StoreError> {
    if keys.is_empty() {
        return Err(StoreError::EmptySet);
    }
    let mut acc = vec![0f64; store.dim()];
    for key in keys {
        for (a, &v) in acc.iter_mut().zip(store.get(key)?) {
            *a += f64::from(v);
        }
    }
    let n = keys.len() as f64;
    let mean: Vec<f64> = acc.iter().map(|a| a / n).collect();
    let len = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len < MIN_NORM {
        return Err(StoreError::ZeroMean);
    }
    Ok(EmbeddingVector(
        mean.iter().map(|v| (v / len) as f32).collect(),
    ))
}
