//! Parameter counts and pretraining compute.
//!
//! The backbone is fixed; only the input embedding (`V·d`) and the
//! next-token head (`V·d + V`, weights plus bias) depend on the vocabulary.
//! FLOPs follow the 6ND rule with `N` counting every parameter except the
//! input embedding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::Dataset;
use crate::tokenizer::{tokenize_timeline, TokenizerConfig};
use crate::vocab::Vocabulary;

pub const DEFAULT_HIDDEN: u64 = 768;
pub const DEFAULT_BACKBONE_PARAMS: u64 = 115_600_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    pub vocab_size: u64,
    pub hidden: u64,
    pub backbone_params: u64,
    pub embedding_params: u64,
    pub head_params: u64,
    pub total_params: u64,
    pub non_embedding_params: u64,
    pub percent_vocab_dependent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens_seen: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<f64>,
}

pub fn param_counts(vocab_size: u64, hidden: u64, backbone_params: u64) -> Result<ComputeProfile> {
    if vocab_size == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("vocab size and hidden size must be > 0".into()));
    }
    let embedding = vocab_size * hidden;
    let head = vocab_size * hidden + vocab_size;
    let total = embedding + backbone_params + head;
    Ok(ComputeProfile {
        vocab_size,
        hidden,
        backbone_params,
        embedding_params: embedding,
        head_params: head,
        total_params: total,
        non_embedding_params: backbone_params + head,
        percent_vocab_dependent: 100.0 * (embedding + head) as f64 / total as f64,
        tokens_seen: None,
        flops: None,
    })
}

/// `6 · N · D`.
pub fn flops_from_params(non_embedding_params: f64, tokens_seen: u64) -> f64 {
    6.0 * non_embedding_params * tokens_seen as f64
}

pub fn flops_6nd(profile: &ComputeProfile, tokens_seen: u64) -> f64 {
    flops_from_params(profile.non_embedding_params as f64, tokens_seen)
}

impl ComputeProfile {
    pub fn with_tokens_seen(mut self, tokens_seen: u64) -> Self {
        self.flops = Some(flops_6nd(&self, tokens_seen));
        self.tokens_seen = Some(tokens_seen);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub n_patients: usize,
    pub total_tokens: u64,
    pub mean_tokens_per_patient: f64,
}

/// Token totals without context truncation.
pub fn token_stats(dataset: &Dataset, config: &TokenizerConfig, vocab: &Vocabulary) -> Result<TokenStats> {
    let untruncated = TokenizerConfig {
        max_context_tokens: usize::MAX,
        ..config.clone()
    };
    let timelines: Vec<_> = dataset.timelines().collect();
    let total = timelines
        .par_iter()
        .map(|tl| tokenize_timeline(tl, &untruncated, vocab).map(|s| s.len() as u64))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let n = timelines.len();
    Ok(TokenStats {
        n_patients: n,
        total_tokens: total,
        mean_tokens_per_patient: if n == 0 { 0.0 } else { total as f64 / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        let p = param_counts(1, 1, 1000).unwrap();
        assert_eq!((p.embedding_params, p.head_params, p.total_params), (1, 2, 1003));
        assert_eq!(p.non_embedding_params, 1002);
        assert!(param_counts(0, 768, 1).is_err());
        assert!(param_counts(5, 0, 1).is_err());
    }

    #[test]
    fn joint_positions_row() {
        let p = param_counts(25_263, DEFAULT_HIDDEN, DEFAULT_BACKBONE_PARAMS).unwrap();
        assert!((p.embedding_params as f64 / 1e6 - 19.4).abs() < 0.05);
        assert!((p.total_params as f64 / 1e6 - 154.4).abs() < 0.05);
        assert!((p.percent_vocab_dependent - 25.1).abs() < 0.05);
    }

    #[test]
    fn factorized_positions_row() {
        let p = param_counts(10_889, DEFAULT_HIDDEN, DEFAULT_BACKBONE_PARAMS).unwrap();
        assert!((p.embedding_params as f64 / 1e6 - 8.36).abs() < 0.005);
        assert!((p.total_params as f64 / 1e6 - 132.4).abs() < 0.1);
    }

    #[test]
    fn flops_examples() {
        let f = flops_from_params(135.0e6, 680_615_416);
        assert!((f / 5.51e17 - 1.0).abs() < 0.01);
        // factorized head of 9.06M on the 115.6M backbone
        let f = flops_from_params(115.6e6 + 9.06e6, 1_831_385_376);
        assert!((f / 1.37e18 - 1.0).abs() < 0.01);
        assert_eq!(flops_from_params(135.0e6, 0), 0.0);
    }

    #[test]
    fn flops_linear_in_tokens_and_params() {
        let base = flops_from_params(1.0e8, 1000);
        assert_eq!(flops_from_params(1.0e8, 3000), 3.0 * base);
        assert_eq!(flops_from_params(2.0e8, 1000), 2.0 * base);
    }
}
