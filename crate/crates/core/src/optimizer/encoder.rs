use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::OptimizerError;

/// A token position passed to an encoder: its vocabulary id and its input
/// embedding row.
#[derive(Debug, Clone, Copy)]
pub struct TokenRow<'a> {
    pub id: u32,
    pub values: &'a [f64],
}

/// A differentiable text encoder.
pub trait TextEncoder {
    /// Prompt embedding of the token sequence.
    fn embed(&mut self, tokens: &[TokenRow<'_>]) -> Result<Vec<f64>, OptimizerError>;

    /// Gradient of `upstream · embed(tokens)` with respect to every token row.
    fn gradient(
        &mut self,
        tokens: &[TokenRow<'_>],
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>, OptimizerError>;
}

/// `normalize(W · mean(rows))` with a fixed Gaussian `W`. Token order does
/// not affect the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    token_dim: usize,
    dim: usize,
    /// `dim` rows of `token_dim` columns.
    weights: Vec<Vec<f64>>,
}

impl ToyEncoder {
    pub fn new(token_dim: usize, dim: usize, seed: u64) -> Result<Self, OptimizerError> {
        if token_dim == 0 || dim == 0 {
            return Err(OptimizerError::Vocabulary(
                "encoder dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dim)
            .map(|_| {
                (0..token_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        Ok(Self {
            token_dim,
            dim,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn pre_norm(&self, rows: &[&[f64]]) -> Result<(Vec<f64>, f64), OptimizerError> {
        if rows.is_empty() {
            return Err(OptimizerError::Vocabulary("no token rows".into()));
        }
        let mut mean = vec![0.0; self.token_dim];
        for r in rows {
            if r.len() != self.token_dim {
                return Err(OptimizerError::DimMismatch {
                    expected: self.token_dim,
                    actual: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let u: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w.iter().zip(&mean).map(|(a, b)| a * b).sum())
            .collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(OptimizerError::ZeroEmbedding);
        }
        Ok((u, norm))
    }

    pub fn embed_rows(&self, rows: &[&[f64]]) -> Result<Vec<f64>, OptimizerError> {
        let (u, norm) = self.pre_norm(rows)?;
        Ok(u.into_iter().map(|x| x / norm).collect())
    }

    /// Every row receives `Wᵀ (g - (e·g) e) / (|u| n)` where `u = W · mean`
    /// and `e = u / |u|`.
    pub fn gradient_rows(
        &self,
        rows: &[&[f64]],
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>, OptimizerError> {
        if upstream.len() != self.dim {
            return Err(OptimizerError::DimMismatch {
                expected: self.dim,
                actual: upstream.len(),
            });
        }
        let (u, norm) = self.pre_norm(rows)?;
        let e: Vec<f64> = u.iter().map(|x| x / norm).collect();
        let eg: f64 = e.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let n = rows.len() as f64;
        let du: Vec<f64> = upstream
            .iter()
            .zip(&e)
            .map(|(g, ei)| (g - eg * ei) / norm)
            .collect();
        let mut dmean = vec![0.0; self.token_dim];
        for (w, d) in self.weights.iter().zip(&du) {
            for (acc, wij) in dmean.iter_mut().zip(w) {
                *acc += wij * d;
            }
        }
        let per_row: Vec<f64> = dmean.into_iter().map(|x| x / n).collect();
        Ok(vec![per_row; rows.len()])
    }
}

impl TextEncoder for ToyEncoder {
    fn embed(&mut self, tokens: &[TokenRow<'_>]) -> Result<Vec<f64>, OptimizerError> {
        let rows: Vec<&[f64]> = tokens.iter().map(|t| t.values).collect();
        self.embed_rows(&rows)
    }

    fn gradient(
        &mut self,
        tokens: &[TokenRow<'_>],
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>, OptimizerError> {
        let rows: Vec<&[f64]> = tokens.iter().map(|t| t.values).collect();
        self.gradient_rows(&rows, upstream)
    }
}
