use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoringMode {
    /// Log-probability of the variant's tokens given the preceding prompt.
    Continuation,
    /// Log-probability of every token of the filled prompt.
    FullSequence,
    /// Log-probability of the variant as the span at a sentinel position.
    SpanInfill,
}

impl ScoringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Continuation => "Continuation",
            ScoringMode::FullSequence => "FullSequence",
            ScoringMode::SpanInfill => "SpanInfill",
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Autoregressive,
    EncoderDecoder,
}

/// Pick the scoring mode for an item. Encoder-decoder models always infill;
/// autoregressive models score the continuation when the slot ends the
/// prompt and the whole sequence otherwise.
pub fn select_mode(slot_at_end: bool, architecture: Architecture) -> ScoringMode {
    match (architecture, slot_at_end) {
        (Architecture::EncoderDecoder, _) => ScoringMode::SpanInfill,
        (Architecture::Autoregressive, true) => ScoringMode::Continuation,
        (Architecture::Autoregressive, false) => ScoringMode::FullSequence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreRequest<'a> {
    pub mode: ScoringMode,
    pub prefix: &'a str,
    pub variant: &'a str,
    pub suffix: &'a str,
}

impl ScoreRequest<'_> {
    pub fn filled(&self) -> String {
        format!("{}{}{}", self.prefix, self.variant, self.suffix)
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("variant span {start}..{end} not recoverable from the echoed tokens")]
    TokenBoundary { start: usize, end: usize },
    #[error("backend does not support {0}")]
    Unsupported(ScoringMode),
    #[error("{0}")]
    Other(String),
}

/// Token log-probability source. Implementations must be deterministic for
/// a fixed configuration and return finite natural-log values.
#[async_trait]
pub trait ScoringBackend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn backend_id(&self) -> &str;

    fn architecture(&self) -> Architecture;

    fn capabilities(&self) -> &[ScoringMode];

    fn supports(&self, mode: ScoringMode) -> bool {
        self.capabilities().contains(&mode)
    }

    async fn log_prob(&self, request: &ScoreRequest<'_>) -> Result<f64, BackendError>;
}
