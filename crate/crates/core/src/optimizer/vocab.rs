use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::OptimizerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub text: String,
}

/// Token ids, surface strings and their input embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    tokens: Vec<Token>,
    token_dim: usize,
    embeddings: Vec<Vec<f64>>,
}

impl TokenVocabulary {
    pub fn new(tokens: Vec<Token>, embeddings: Vec<Vec<f64>>) -> Result<Self, OptimizerError> {
        if tokens.is_empty() {
            return Err(OptimizerError::EmptyVocabulary);
        }
        if tokens.len() != embeddings.len() {
            return Err(OptimizerError::Vocabulary(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                embeddings.len()
            )));
        }
        let token_dim = embeddings[0].len();
        if token_dim == 0 {
            return Err(OptimizerError::Vocabulary("zero-width embeddings".into()));
        }
        let mut texts = HashSet::new();
        let mut ids = HashSet::new();
        for (t, row) in tokens.iter().zip(&embeddings) {
            if !texts.insert(t.text.as_str()) {
                return Err(OptimizerError::Vocabulary(format!(
                    "duplicate token text `{}`",
                    t.text
                )));
            }
            if !ids.insert(t.id) {
                return Err(OptimizerError::Vocabulary(format!(
                    "duplicate token id {}",
                    t.id
                )));
            }
            if row.len() != token_dim {
                return Err(OptimizerError::Vocabulary(format!(
                    "row for `{}` has wrong width",
                    t.text
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OptimizerError::Vocabulary(format!(
                    "row for `{}` is not finite",
                    t.text
                )));
            }
        }
        Ok(Self {
            tokens,
            token_dim,
            embeddings,
        })
    }

    /// Random Gaussian rows for the given surfaces, ids assigned in order.
    pub fn toy<S: AsRef<str>>(
        surfaces: &[S],
        token_dim: usize,
        seed: u64,
    ) -> Result<Self, OptimizerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| Token {
                id: i as u32,
                text: s.as_ref().to_string(),
            })
            .collect();
        let embeddings = surfaces
            .iter()
            .map(|_| {
                (0..token_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        Self::new(tokens, embeddings)
    }

    pub fn from_path(path: &Path) -> Result<Self, OptimizerError> {
        let text = std::fs::read_to_string(path)?;
        let v: Self = serde_json::from_str(&text)?;
        Self::new(v.tokens, v.embeddings)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.embeddings[index]
    }

    pub fn position_of_id(&self, id: u32) -> Option<usize> {
        self.tokens.iter().position(|t| t.id == id)
    }

    pub fn position_of_text(&self, text: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t.text == text)
    }

    fn retain(&self, keep: impl Fn(&Token) -> bool) -> Result<Self, OptimizerError> {
        let (tokens, embeddings): (Vec<Token>, Vec<Vec<f64>>) = self
            .tokens
            .iter()
            .zip(&self.embeddings)
            .filter(|(t, _)| keep(t))
            .map(|(t, e)| (t.clone(), e.clone()))
            .unzip();
        if tokens.is_empty() {
            return Err(OptimizerError::EmptyVocabulary);
        }
        Ok(Self {
            tokens,
            token_dim: self.token_dim,
            embeddings,
        })
    }

    /// Tokens consisting of exactly one character.
    pub fn single_characters(&self) -> Result<Self, OptimizerError> {
        self.retain(|t| t.text.chars().count() == 1)
    }
}

/// Keeps tokens whose every character is in `alphabet`, preserving ids and
/// order.
pub fn filter_vocab(
    vocab: &TokenVocabulary,
    alphabet: &HashSet<char>,
) -> Result<TokenVocabulary, OptimizerError> {
    vocab.retain(|t| !t.text.is_empty() && t.text.chars().all(|c| alphabet.contains(&c)))
}
