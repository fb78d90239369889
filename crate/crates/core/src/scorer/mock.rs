//! Deterministic offline backend.
//!
//! Tokens are bytes. The base table holds 256 weights drawn from a
//! `ChaCha8Rng` seeded with `seed`: `w[b] = 4 * u_b - 2` where `u_b` is the
//! `b`-th `f64` sample. A token's log-probability is its log-softmax entry.
//!
//! With `context_gain = 0` the score of a span is the sum of base
//! log-softmax entries over its bytes. A positive gain adds
//! `gain * h_b(context)` to each weight before the softmax, where `h_b` maps
//! byte `b` of the stream `SHA-256(context || [k])`, `k = 0..8`, to
//! `2 * byte / 255 - 1`. The context is the prefix for continuation
//! scoring, `prefix || 0x00 || suffix` for infilling and the filled
//! sentence for full-sequence scoring.

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::backend::{Architecture, BackendError, ScoreRequest, ScoringBackend, ScoringMode};

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    weights: [f64; 256],
    context_gain: f64,
    architecture: Architecture,
    capabilities: Vec<ScoringMode>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = [0.0; 256];
        for w in weights.iter_mut() {
            *w = 4.0 * rng.random::<f64>() - 2.0;
        }
        MockBackend {
            id: format!("mock-{seed}"),
            weights,
            context_gain: 0.0,
            architecture: Architecture::Autoregressive,
            capabilities: vec![ScoringMode::Continuation, ScoringMode::FullSequence],
        }
    }

    pub fn with_context_gain(mut self, gain: f64) -> Self {
        self.context_gain = gain;
        if gain != 0.0 {
            self.id = format!("{}-g{gain}", self.id);
        }
        self
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self.capabilities = match architecture {
            Architecture::Autoregressive => {
                vec![ScoringMode::Continuation, ScoringMode::FullSequence]
            }
            Architecture::EncoderDecoder => vec![ScoringMode::SpanInfill],
        };
        if architecture == Architecture::EncoderDecoder {
            self.id = format!("{}-s2s", self.id);
        }
        self
    }

    /// Replace one base weight (used to probe monotonicity).
    pub fn with_weight(mut self, byte: u8, weight: f64) -> Self {
        self.weights[byte as usize] = weight;
        self.id = format!("{}-w{byte}={weight}", self.id);
        self
    }

    pub fn weights(&self) -> &[f64; 256] {
        &self.weights
    }

    fn log_softmax(&self, context: Option<&str>) -> [f64; 256] {
        let mut table = self.weights;
        if let (Some(ctx), true) = (context, self.context_gain != 0.0) {
            for (k, chunk) in table.chunks_mut(32).enumerate() {
                let mut hasher = Sha256::new();
                hasher.update(ctx.as_bytes());
                hasher.update([k as u8]);
                let digest = hasher.finalize();
                for (w, byte) in chunk.iter_mut().zip(digest.iter()) {
                    *w += self.context_gain * (2.0 * f64::from(*byte) / 255.0 - 1.0);
                }
            }
        }
        let max = table.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + table.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
        table.map(|w| w - lse)
    }

    fn span_score(table: &[f64; 256], text: &str) -> f64 {
        text.bytes().map(|b| table[b as usize]).sum()
    }
}

#[async_trait]
impl ScoringBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn architecture(&self) -> Architecture {
        self.architecture
    }

    fn capabilities(&self) -> &[ScoringMode] {
        &self.capabilities
    }

    async fn log_prob(&self, request: &ScoreRequest<'_>) -> Result<f64, BackendError> {
        if !self.supports(request.mode) {
            return Err(BackendError::Unsupported(request.mode));
        }
        let score = match request.mode {
            ScoringMode::Continuation => {
                let table = self.log_softmax(Some(request.prefix));
                Self::span_score(&table, request.variant)
            }
            ScoringMode::SpanInfill => {
                let ctx = format!("{}\u{0}{}", request.prefix, request.suffix);
                let table = self.log_softmax(Some(&ctx));
                Self::span_score(&table, request.variant)
            }
            ScoringMode::FullSequence => {
                let filled = request.filled();
                let table = self.log_softmax(Some(&filled));
                Self::span_score(&table, &filled)
            }
        };
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap()
            .block_on(f)
    }

    #[test]
    fn unigram_closed_form() {
        let mock = MockBackend::new(7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..256).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let z: f64 = w.iter().map(|x| x.exp()).sum();
        let expected: f64 = "congressperson"
            .bytes()
            .map(|b| w[b as usize] - z.ln())
            .sum();
        let req = ScoreRequest {
            mode: ScoringMode::Continuation,
            prefix: "Casey is a ",
            variant: "congressperson",
            suffix: "",
        };
        let got = block(mock.log_prob(&req)).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn unsupported_mode() {
        let mock = MockBackend::new(1);
        let req = ScoreRequest {
            mode: ScoringMode::SpanInfill,
            prefix: "a",
            variant: "b",
            suffix: "",
        };
        assert!(matches!(
            block(mock.log_prob(&req)),
            Err(BackendError::Unsupported(_))
        ));
    }

    #[test]
    fn context_gain_changes_scores_deterministically() {
        let mock = MockBackend::new(3).with_context_gain(0.5);
        let a = ScoreRequest {
            mode: ScoringMode::Continuation,
            prefix: "x ",
            variant: "they",
            suffix: "",
        };
        let b = ScoreRequest { prefix: "y ", ..a };
        let sa = block(mock.log_prob(&a)).unwrap();
        assert_eq!(sa, block(mock.log_prob(&a)).unwrap());
        assert_ne!(sa, block(mock.log_prob(&b)).unwrap());
        assert!(sa < 0.0);
    }
}
