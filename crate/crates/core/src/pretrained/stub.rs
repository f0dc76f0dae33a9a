use sha2::{Digest, Sha256};

use super::{Encoder, EncoderDescriptor, FeatureMatrix};
use crate::error::{Error, Result};

/// Deterministic stand-in encoder: each whitespace token maps to a fixed
/// pseudo-random vector derived from its hash and the seed, wrapped in
/// `[CLS]` / `[SEP]` vectors like a BERT sequence.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    width: usize,
    seed: u64,
    max_tokens: usize,
}

pub fn encoder_stub(width: usize, seed: u64) -> Result<StubEncoder> {
    StubEncoder::new(width, seed)
}

impl StubEncoder {
    pub fn new(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidConfig(
                "stub encoder width must be positive".into(),
            ));
        }
        Ok(StubEncoder {
            width,
            seed,
            max_tokens: 128,
        })
    }

    /// Caps the sequence length, `[CLS]` and `[SEP]` included (minimum 2).
    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens.max(2);
        self
    }

    fn token_vector(&self, token: &str, out: &mut Vec<f32>) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut state = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        for _ in 0..self.width {
            // splitmix64
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let unit = (z >> 40) as f32 / (1u64 << 24) as f32;
            out.push(unit * 2.0 - 1.0);
        }
    }
}

impl Encoder for StubEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn cache_namespace(&self) -> String {
        format!("stub-w{}-s{}", self.width, self.seed)
    }

    fn checksum(&self) -> String {
        format!(
            "{:x}",
            Sha256::digest(format!("stub:{}:{}", self.width, self.seed))
        )
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor::Stub {
            width: self.width,
            seed: self.seed,
            max_tokens: self.max_tokens,
        }
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<FeatureMatrix>> {
        texts
            .iter()
            .map(|text| {
                let lower = text.to_lowercase();
                let mut tokens = vec!["[CLS]"];
                tokens.extend(lower.split_whitespace().take(self.max_tokens - 2));
                tokens.push("[SEP]");
                let mut data = Vec::with_capacity(tokens.len() * self.width);
                for t in &tokens {
                    self.token_vector(t, &mut data);
                }
                FeatureMatrix::new(tokens.len(), self.width, data)
            })
            .collect()
    }
}
