use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shape of a dual-stream MM-DiT.
///
/// `tokens` is the embedding-table vocabulary, one row per entry, so the
/// vocabulary size is `tokens.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub prompt_len: usize,
    pub mlp_ratio: usize,
    pub schedule_len: u32,
    pub tokens: Vec<String>,
}

/// Built-in token vocabulary: prompt filler words plus common concept nouns.
pub const DEFAULT_TOKENS: &[&str] = &[
    "a",
    "an",
    "the",
    "photo",
    "of",
    "in",
    "on",
    "with",
    "and",
    "near",
    "background",
    "grass",
    "sky",
    "ground",
    "water",
    "tree",
    "cloud",
    "road",
    "wall",
    "floor",
    "mountain",
    "sun",
    "sea",
    "sand",
    "snow",
    "field",
    "building",
    "house",
    "cat",
    "dog",
    "bird",
    "horse",
    "cow",
    "sheep",
    "person",
    "car",
    "bus",
    "train",
    "boat",
    "airplane",
    "bicycle",
    "motorbike",
    "bottle",
    "chair",
    "table",
    "sofa",
    "plant",
    "monitor",
    "flower",
    "rock",
    "fish",
    "bear",
];

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 6,
            img_h: 16,
            img_w: 16,
            prompt_len: 8,
            mlp_ratio: 4,
            schedule_len: 1000,
            tokens: DEFAULT_TOKENS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model < 2 {
            return bad(format!("d_model must be at least 2, got {}", self.d_model));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.img_h * self.img_w == 0 {
            return bad("image grid must hold at least one patch".into());
        }
        if self.prompt_len == 0 {
            return bad("prompt_len must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be at least 1".into());
        }
        if self.schedule_len == 0 {
            return bad("schedule_len must be at least 1".into());
        }
        if self.tokens.is_empty() {
            return bad("token vocabulary is empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tokens {
            if !seen.insert(t.as_str()) {
                return bad(format!("duplicate token {t:?}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_image_tokens(&self) -> usize {
        self.img_h * self.img_w
    }

    pub fn mlp_hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
