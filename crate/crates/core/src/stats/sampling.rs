use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k: usize,
    pub seed: u64,
    pub iteration: u32,
}

/// How many positives and negatives a k-shot draw takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    pub positives: usize,
    pub negatives: usize,
}

/// Half of `k` from each class; when positives are scarce, all of them plus
/// negatives for the remainder.
pub fn sample_plan(k: usize, n_pos: usize, n_neg: usize) -> Result<SamplePlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("shot size must be >= 2, got {k}")));
    }
    let positives = n_pos.min(k / 2);
    let negatives = k - positives;
    if negatives > n_neg {
        return Err(Error::InvalidArgument(format!(
            "k={k} with {positives} positives needs {negatives} negatives, only {n_neg} available"
        )));
    }
    Ok(SamplePlan { positives, negatives })
}

/// Draws a balanced k-shot training subset: selected positives followed by
/// selected negatives, each in pool order. Deterministic in
/// `(seed, k, iteration)`.
pub fn balanced_sample<T: Clone>(pos: &[T], neg: &[T], config: SamplerConfig) -> Result<Vec<T>> {
    let plan = sample_plan(config.k, pos.len(), neg.len())?;
    let label = format!("fewshot/k{}/iter{}", config.k, config.iteration);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &label));
    let mut out = Vec::with_capacity(config.k);
    for (pool, amount) in [(pos, plan.positives), (neg, plan.negatives)] {
        let mut picked = index::sample(&mut rng, pool.len(), amount).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}
