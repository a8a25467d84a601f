//! Encoder served by another process over line-delimited JSON on stdio.
//!
//! Each request is `{"token_ids": [...], "upstream_vector": [...] | null}` and
//! each response is `{"embedding": [...], "per_row_gradients": [[...], ...]}`.
//! A null upstream vector asks for the embedding only. A response may carry
//! an `"error"` string instead.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::encoder::{TextEncoder, TokenRow};
use super::OptimizerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRequest {
    pub token_ids: Vec<u32>,
    pub upstream_vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientResponse {
    #[serde(default)]
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub per_row_gradients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ExternalEncoder {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl ExternalEncoder {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Some(Box::new(writer)),
            child: None,
        }
    }

    /// Starts `command` with piped stdin and stdout.
    pub fn spawn(command: &mut Command) -> Result<Self, OptimizerError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| protocol("child has no stdin"))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| protocol("child has no stdout"))?;
        let mut enc = Self::new(BufReader::new(stdout), stdin);
        enc.child = Some(child);
        Ok(enc)
    }

    pub fn request(&mut self, req: &GradientRequest) -> Result<GradientResponse, OptimizerError> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| protocol("encoder is closed"))?;
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(protocol("encoder closed the stream"));
        }
        let resp: GradientResponse = serde_json::from_str(reply.trim_end())?;
        if let Some(e) = resp.error {
            return Err(OptimizerError::Encoder(e));
        }
        Ok(resp)
    }
}

fn protocol(msg: &str) -> OptimizerError {
    OptimizerError::Encoder(msg.to_string())
}

impl TextEncoder for ExternalEncoder {
    fn embed(&mut self, tokens: &[TokenRow<'_>]) -> Result<Vec<f64>, OptimizerError> {
        let resp = self.request(&GradientRequest {
            token_ids: tokens.iter().map(|t| t.id).collect(),
            upstream_vector: None,
        })?;
        if resp.embedding.is_empty() {
            return Err(protocol("empty embedding"));
        }
        Ok(resp.embedding)
    }

    fn gradient(
        &mut self,
        tokens: &[TokenRow<'_>],
        upstream: &[f64],
    ) -> Result<Vec<Vec<f64>>, OptimizerError> {
        let resp = self.request(&GradientRequest {
            token_ids: tokens.iter().map(|t| t.id).collect(),
            upstream_vector: Some(upstream.to_vec()),
        })?;
        if resp.per_row_gradients.len() != tokens.len() {
            return Err(protocol(&format!(
                "expected {} gradient rows, got {}",
                tokens.len(),
                resp.per_row_gradients.len()
            )));
        }
        Ok(resp.per_row_gradients)
    }
}

impl Drop for ExternalEncoder {
    fn drop(&mut self) {
        // Closing stdin tells the server to exit.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

/// Answers requests on `reader`/`writer` with `encoder` until end of input.
/// Token ids are resolved through `vocab`.
pub fn serve(
    encoder: &mut dyn TextEncoder,
    vocab: &super::TokenVocabulary,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<(), OptimizerError> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match handle(encoder, vocab, &line) {
            Ok(r) => r,
            Err(e) => GradientResponse {
                error: Some(e.to_string()),
                ..Default::default()
            },
        };
        writeln!(writer, "{}", serde_json::to_string(&resp)?)?;
        writer.flush()?;
    }
    Ok(())
}

fn handle(
    encoder: &mut dyn TextEncoder,
    vocab: &super::TokenVocabulary,
    line: &str,
) -> Result<GradientResponse, OptimizerError> {
    let req: GradientRequest = serde_json::from_str(line)?;
    let rows = req
        .token_ids
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
    let embedding = encoder.embed(&rows)?;
    let per_row_gradients = match &req.upstream_vector {
        Some(up) => encoder.gradient(&rows, up)?,
        None => Vec::new(),
    };
    Ok(GradientResponse {
        embedding,
        per_row_gradients,
        error: None,
    })
}
