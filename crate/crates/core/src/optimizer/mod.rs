//! Alphabet-constrained discrete prompt optimization.
//!
//! A projected-gradient search over token slots: continuous rows are
//! snapped to their nearest vocabulary tokens, the loss and its gradient are
//! taken at the snapped tokens, and the step is applied to the continuous
//! rows. The best snapped sequence seen is returned.

mod encoder;
mod external;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::par::Execution;

pub use encoder::{TextEncoder, TokenRow, ToyEncoder};
pub use external::{serve, ExternalEncoder, GradientRequest, GradientResponse};
pub use vocab::{filter_vocab, Token, TokenVocabulary};

/// Gibberish lengths tried by default.
pub const DEFAULT_LENGTHS: [usize; 5] = [1, 2, 3, 5, 10];
pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("encoder produced a zero vector")]
    ZeroEmbedding,
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {0} is not in the vocabulary")]
    UnknownToken(u32),
    #[error("encoder: {0}")]
    Encoder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Textual,
    Visual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveFeatures {
    pub kind: ObjectiveKind,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotMode {
    /// Each slot holds one single-character token.
    Letters,
    /// Each slot holds any token.
    Tokens,
}

impl std::str::FromStr for SlotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "letters" => Ok(SlotMode::Letters),
            "tokens" => Ok(SlotMode::Tokens),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    /// Number of gibberish slots.
    pub length: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    /// Frozen leading tokens, e.g. those of "a photo of <concept>".
    pub prefix_tokens: Vec<u32>,
    pub mode: SlotMode,
    pub projection: Projection,
}

impl OptimizationConfig {
    pub fn new(length: usize, rng_seed: u64) -> Self {
        Self {
            length,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            rng_seed,
            prefix_tokens: Vec::new(),
            mode: SlotMode::Letters,
            projection: Projection::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.length == 0 {
            return Err(OptimizerError::Config("length must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(OptimizerError::Config("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimizerError::Config(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub token_ids: Vec<u32>,
    pub gibberish_tokens: Vec<String>,
    /// Best projected loss; equals the last entry of `projected_loss_trace`.
    pub final_loss: f64,
    /// Best projected loss so far, one entry per step.
    pub loss_trace: Vec<f64>,
    /// Loss at the projected tokens of every step, followed by a final
    /// evaluation of the returned tokens.
    pub projected_loss_trace: Vec<f64>,
}

impl OptimizationResult {
    /// Surface text of the learned slots, concatenated.
    pub fn gibberish(&self) -> String {
        self.gibberish_tokens.concat()
    }

    pub fn final_cosine(&self) -> f64 {
        -self.final_loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-cos(e, o)` and its gradient with respect to `e`.
fn loss_and_grad(e: &[f64], o: &[f64]) -> Result<(f64, Vec<f64>), OptimizerError> {
    let ne = dot(e, e).sqrt();
    let no = dot(o, o).sqrt();
    if ne == 0.0 {
        return Err(OptimizerError::ZeroEmbedding);
    }
    let eo = dot(e, o);
    let cos = (eo / (ne * no)).clamp(-1.0, 1.0);
    let grad = e
        .iter()
        .zip(o)
        .map(|(ei, oi)| -(oi / (ne * no) - eo * ei / (ne.powi(3) * no)))
        .collect();
    Ok((-cos, grad))
}

/// Index of the candidate nearest to `row`; ties go to the lowest index.
fn project(row: &[f64], candidates: &TokenVocabulary, projection: Projection) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    let row_norm = dot(row, row).sqrt();
    for i in 0..candidates.len() {
        let c = candidates.row(i);
        let score = match projection {
            Projection::Euclidean => row.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            Projection::Cosine => {
                let denom = row_norm * dot(c, c).sqrt();
                if denom == 0.0 {
                    f64::INFINITY
                } else {
                    -dot(row, c) / denom
                }
            }
        };
        if score < best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

struct Evaluator<'a> {
    prefix: Vec<TokenRow<'a>>,
    candidates: &'a TokenVocabulary,
    objective: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn rows(&self, slots: &[usize]) -> Vec<TokenRow<'a>> {
        let mut rows = self.prefix.clone();
        rows.extend(slots.iter().map(|&i| TokenRow {
            id: self.candidates.tokens()[i].id,
            values: self.candidates.row(i),
        }));
        rows
    }

    fn loss(
        &self,
        encoder: &mut dyn TextEncoder,
        slots: &[usize],
        step: usize,
    ) -> Result<(f64, Vec<TokenRow<'a>>, Vec<f64>), OptimizerError> {
        let rows = self.rows(slots);
        let e = encoder.embed(&rows)?;
        if e.len() != self.objective.len() {
            return Err(OptimizerError::DimMismatch {
                expected: self.objective.len(),
                actual: e.len(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(OptimizerError::NonFinite {
                what: "embedding",
                step,
            });
        }
        let (loss, grad) = loss_and_grad(&e, &self.objective)?;
        if !loss.is_finite() {
            return Err(OptimizerError::NonFinite { what: "loss", step });
        }
        Ok((loss, rows, grad))
    }
}

/// Searches `length` slots after the frozen prefix to minimize the negative
/// cosine between the prompt embedding and the objective.
///
/// `vocab` resolves prefix ids; `candidates` (already alphabet-filtered) is
/// the pool slots are drawn from.
pub fn optimize(
    objective: &ObjectiveFeatures,
    encoder: &mut dyn TextEncoder,
    vocab: &TokenVocabulary,
    candidates: &TokenVocabulary,
    cfg: &OptimizationConfig,
) -> Result<OptimizationResult, OptimizerError> {
    cfg.validate()?;
    let candidates = match cfg.mode {
        SlotMode::Letters => candidates.single_characters()?,
        SlotMode::Tokens => candidates.clone(),
    };
    if candidates.token_dim() != vocab.token_dim() {
        return Err(OptimizerError::DimMismatch {
            expected: vocab.token_dim(),
            actual: candidates.token_dim(),
        });
    }
    let prefix = cfg
        .prefix_tokens
        .iter()
        .map(|&id| {
            vocab
                .position_of_id(id)
                .map(|p| TokenRow {
                    id,
                    values: vocab.row(p),
                })
                .ok_or(OptimizerError::UnknownToken(id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let eval = Evaluator {
        prefix,
        candidates: &candidates,
        objective: objective
            .vector
            .as_slice()
            .iter()
            .map(|&v| v as f64)
            .collect(),
    };
    let n_prefix = cfg.prefix_tokens.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut rows: Vec<Vec<f64>> = (0..cfg.length)
        .map(|_| {
            candidates
                .row(rng.random_range(0..candidates.len()))
                .to_vec()
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut projected_loss_trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let slots: Vec<usize> = rows
            .iter()
            .map(|r| project(r, &candidates, cfg.projection))
            .collect();
        let (loss, seq, grad_e) = eval.loss(encoder, &slots, step)?;
        projected_loss_trace.push(loss);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, slots));
        }
        loss_trace.push(best.as_ref().map(|b| b.0).unwrap_or(loss));

        let grads = encoder.gradient(&seq, &grad_e)?;
        if grads.len() != seq.len() {
            return Err(OptimizerError::Encoder(format!(
                "expected {} gradient rows, got {}",
                seq.len(),
                grads.len()
            )));
        }
        for (row, g) in rows.iter_mut().zip(&grads[n_prefix..]) {
            if g.len() != row.len() || g.iter().any(|v| !v.is_finite()) {
                return Err(OptimizerError::NonFinite {
                    what: "gradient",
                    step,
                });
            }
            for (r, gi) in row.iter_mut().zip(g) {
                *r -= cfg.learning_rate * gi;
            }
        }
    }
    let (_, slots) = best.expect("at least one step");
    let (final_loss, _, _) = eval.loss(encoder, &slots, cfg.steps)?;
    projected_loss_trace.push(final_loss);
    Ok(OptimizationResult {
        token_ids: slots.iter().map(|&i| candidates.tokens()[i].id).collect(),
        gibberish_tokens: slots
            .iter()
            .map(|&i| candidates.tokens()[i].text.clone())
            .collect(),
        final_loss,
        loss_trace,
        projected_loss_trace,
    })
}

/// One independent optimization problem.
#[derive(Debug, Clone)]
pub struct OptimizationJob {
    pub label: String,
    pub objective: ObjectiveFeatures,
    pub candidates: TokenVocabulary,
    pub config: OptimizationConfig,
}

/// Runs independent jobs, each with its own encoder from `make_encoder`.
/// Results come back in job order.
pub fn optimize_all<E, F>(
    jobs: &[OptimizationJob],
    vocab: &TokenVocabulary,
    make_encoder: F,
    exec: Execution,
) -> Vec<Result<OptimizationResult, OptimizerError>>
where
    E: TextEncoder,
    F: Fn(&OptimizationJob) -> Result<E, OptimizerError> + Sync + Send,
{
    exec.map(jobs, |job| {
        let mut enc = make_encoder(job)?;
        optimize(
            &job.objective,
            &mut enc,
            vocab,
            &job.candidates,
            &job.config,
        )
    })
}
