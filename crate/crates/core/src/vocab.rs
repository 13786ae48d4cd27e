//! Per-concept decile bins and vocabulary construction.
//!
//! A vocabulary is built per tokenization condition from training timelines.
//! Reserved tokens take the lowest IDs, followed by every observed token in
//! lexicographic order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Dataset, Sex};
use crate::tokenizer::{self, EventEncoding, TimeEncoding, TokenizerConfig};

pub const N_BINS: usize = 10;
pub const N_EDGES: usize = N_BINS - 1;
pub const VOCAB_FILE_VERSION: u32 = 1;

pub const PAD: &str = "[PAD]";
pub const OOV: &str = "[OOV]";

/// Interval token labels, shortest bin first. The last one is repeatable.
pub const INTERVAL_TOKENS: [&str; 13] = [
    "INT_5m_15m",
    "INT_15m_1h",
    "INT_1h_2h",
    "INT_2h_6h",
    "INT_6h_12h",
    "INT_12h_1d",
    "INT_1d_3d",
    "INT_3d_1w",
    "INT_1w_2w",
    "INT_2w_1mt",
    "INT_1mt_3mt",
    "INT_3mt_6mt",
    "INT_6mt",
];

pub const AGE_BIN_YEARS: u32 = 5;
pub const N_AGE_BINS: u32 = 18;

/// Token for the 5-year age bin containing `age_years` (85 and over share one).
pub fn age_token(age_years: u32) -> String {
    let bin = (age_years / AGE_BIN_YEARS).min(N_AGE_BINS - 1);
    if bin == N_AGE_BINS - 1 {
        format!("AGE_{}_PLUS", bin * AGE_BIN_YEARS)
    } else {
        format!("AGE_{}_{}", bin * AGE_BIN_YEARS, bin * AGE_BIN_YEARS + AGE_BIN_YEARS - 1)
    }
}

pub fn sex_token(sex: Sex) -> String {
    format!("SEX_{}", sex.as_str())
}

/// Reserved tokens for a vocabulary, in ID order.
pub fn special_tokens(time_tokens: bool) -> Vec<String> {
    let mut out = vec![PAD.to_string(), OOV.to_string()];
    if time_tokens {
        out.extend(INTERVAL_TOKENS.iter().map(|s| s.to_string()));
        out.extend((0..N_AGE_BINS).map(|b| age_token(b * AGE_BIN_YEARS)));
        out.extend(Sex::ALL.iter().map(|&s| sex_token(s)));
    }
    out
}

/// Nine cut points splitting a concept's training values into ten bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    pub concept: String,
    pub edges: [f64; N_EDGES],
}

impl QuantileBins {
    /// Bin index = number of edges strictly below `value`; ties go to the
    /// lower bin.
    pub fn assign_bin(&self, value: f64) -> Result<u8> {
        if value.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "NaN value for concept {}",
                self.concept
            )));
        }
        let below = self.edges.partition_point(|&e| e < value);
        Ok(below.min(N_BINS - 1) as u8)
    }
}

/// Fits decile edges by nearest rank: edge `p` is the `ceil(p/10 · n)`-th
/// smallest value, for `p = 1..=9`.
pub fn fit_quantile_bins(concept: &str, values: &[f64]) -> Result<QuantileBins> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no values to fit bins for concept {concept}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("NaN value for concept {concept}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = [0.0; N_EDGES];
    for (i, edge) in edges.iter_mut().enumerate() {
        // ceil((i+1) * n / 10) without going through floats
        let rank = ((i + 1) * n).div_ceil(N_BINS).max(1);
        *edge = sorted[rank - 1];
    }
    Ok(QuantileBins {
        concept: concept.to_string(),
        edges,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    mode: EventEncoding,
    specials: Vec<String>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    bins: BTreeMap<String, QuantileBins>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    mode: EventEncoding,
    specials: Vec<String>,
    tokens: Vec<String>,
    bins: BTreeMap<String, [f64; N_EDGES]>,
}

impl Vocabulary {
    fn from_parts(
        mode: EventEncoding,
        specials: Vec<String>,
        tokens: Vec<String>,
        bins: BTreeMap<String, QuantileBins>,
    ) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(specials.len() + tokens.len());
        for (id, tok) in specials.iter().chain(tokens.iter()).enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Vocab(format!("token {tok:?} appears more than once")));
            }
        }
        for required in [PAD, OOV] {
            if !specials.iter().any(|s| s == required) {
                return Err(Error::Vocab(format!("missing reserved token {required}")));
            }
        }
        Ok(Vocabulary {
            mode,
            specials,
            tokens,
            token_to_id,
            bins,
        })
    }

    pub fn mode(&self) -> EventEncoding {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.specials.len() + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    /// Observed (non-reserved) tokens in ID order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn bins(&self) -> &BTreeMap<String, QuantileBins> {
        &self.bins
    }

    pub fn supports_time_tokens(&self) -> bool {
        INTERVAL_TOKENS.iter().all(|t| self.token_to_id.contains_key(*t))
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_oov(&self, token: &str) -> u32 {
        self.id(token).unwrap_or_else(|| self.oov_id())
    }

    pub fn oov_id(&self) -> u32 {
        self.token_to_id[OOV]
    }

    pub fn pad_id(&self) -> u32 {
        self.token_to_id[PAD]
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < self.specials.len() {
            Some(&self.specials[id])
        } else {
            self.tokens.get(id - self.specials.len()).map(String::as_str)
        }
    }

    /// Fails unless this vocabulary can serve `config`.
    pub fn check_compatible(&self, config: &TokenizerConfig) -> Result<()> {
        if self.mode != config.event_encoding {
            return Err(Error::ModeMismatch {
                expected: config.event_encoding.to_string(),
                found: self.mode.to_string(),
            });
        }
        if config.time_encoding == TimeEncoding::TimeTokens && !self.supports_time_tokens() {
            return Err(Error::Vocab(
                "time_tokens encoding needs a vocabulary built with interval tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: VOCAB_FILE_VERSION,
            mode: self.mode,
            specials: self.specials.clone(),
            tokens: self.tokens.clone(),
            bins: self
                .bins
                .iter()
                .map(|(k, b)| (k.clone(), b.edges))
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&file)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Vocab(format!("malformed file: {e}")))?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::Vocab(format!(
                "unsupported version {} (expected {VOCAB_FILE_VERSION})",
                file.version
            )));
        }
        let mut bins = BTreeMap::new();
        for (concept, edges) in file.bins {
            if edges.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(Error::Vocab(format!("bin edges for {concept} are not ascending")));
            }
            bins.insert(
                concept.clone(),
                QuantileBins {
                    concept,
                    edges,
                },
            );
        }
        Self::from_parts(file.mode, file.specials, file.tokens, bins)
    }
}

pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    std::fs::write(path, vocab.to_json()?).map_err(|e| Error::io(path, e))
}

/// Loads a vocabulary, optionally requiring a particular event encoding.
pub fn load_vocab(path: &Path, expected: Option<EventEncoding>) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vocab = Vocabulary::from_json(&text)?;
    if let Some(expected) = expected {
        if vocab.mode != expected {
            return Err(Error::ModeMismatch {
                expected: expected.to_string(),
                found: vocab.mode.to_string(),
            });
        }
    }
    Ok(vocab)
}

/// Builds the vocabulary for one condition from training timelines.
///
/// Counting runs in parallel per patient and merges associatively; sorting
/// and ID assignment happen once at the end, so the result does not depend on
/// the thread count.
pub fn build_vocab(dataset: &Dataset, config: &TokenizerConfig) -> Result<Vocabulary> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a vocabulary from an empty dataset".into(),
        ));
    }
    config.validate()?;
    let timelines: Vec<_> = dataset.timelines().collect();

    let values: BTreeMap<String, Vec<f64>> = timelines
        .par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<String, Vec<f64>>, tl| {
            for ev in &tl.events {
                if let Some(v) = ev.numeric_value {
                    acc.entry(ev.code.clone()).or_default().push(v);
                }
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, mut v) in b {
                a.entry(k).or_default().append(&mut v);
            }
            a
        });
    let bins = values
        .iter()
        .map(|(code, vals)| Ok((code.clone(), fit_quantile_bins(code, vals)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let observed: BTreeSet<String> = timelines
        .par_iter()
        .fold(BTreeSet::new, |mut acc, tl| {
            let expanded = tokenizer::expand_workflow(tl, config.workflow);
            for ev in &expanded.timeline.events {
                acc.extend(tokenizer::encode_event_with_bins(ev, config, &bins));
            }
            acc
        })
        .reduce(BTreeSet::new, |mut a, mut b| {
            a.append(&mut b);
            a
        });

    let specials = special_tokens(config.time_encoding == TimeEncoding::TimeTokens);
    let tokens: Vec<String> = observed
        .into_iter()
        .filter(|t| !specials.contains(t))
        .collect();
    Vocabulary::from_parts(config.event_encoding, specials, tokens, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(b: &QuantileBins) -> Vec<f64> {
        b.edges.to_vec()
    }

    /// Sort-and-count oracle: the p-th decile edge is the smallest value v
    /// such that at least p·n/10 values are ≤ v.
    fn oracle_edges(values: &[f64]) -> Vec<f64> {
        let n = values.len() as f64;
        (1..=9)
            .map(|p| {
                let mut candidates: Vec<f64> = values.to_vec();
                candidates.sort_by(f64::total_cmp);
                *candidates
                    .iter()
                    .find(|&&v| values.iter().filter(|&&x| x <= v).count() as f64 >= p as f64 * n / 10.0)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let bins = fit_quantile_bins("c", &values).unwrap();
        let oracle = oracle_edges(&values);
        assert_eq!(edges(&bins), oracle);
        assert_eq!(edges(&bins), (1..=9).map(|i| f64::from(i * 10)).collect::<Vec<_>>());
        assert_eq!(bins.assign_bin(55.0).unwrap(), 5);
        assert_eq!(bins.assign_bin(10.0).unwrap(), 0);
        assert_eq!(bins.assign_bin(95.0).unwrap(), 9);
        assert_eq!(bins.assign_bin(-1e9).unwrap(), 0);
    }

    #[test]
    fn oracle_agrees_on_uneven_sizes() {
        for n in 1..40 {
            let values: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 * 0.5).collect();
            let bins = fit_quantile_bins("c", &values).unwrap();
            assert_eq!(edges(&bins), oracle_edges(&values), "n={n}");
        }
    }

    #[test]
    fn degenerate_distribution() {
        let bins = fit_quantile_bins("c", &[3.5; 17]).unwrap();
        assert!(bins.edges.iter().all(|&e| e == 3.5));
        assert_eq!(bins.assign_bin(3.5).unwrap(), 0);
    }

    #[test]
    fn empty_and_nan() {
        assert!(fit_quantile_bins("c", &[]).is_err());
        assert!(fit_quantile_bins("c", &[1.0, f64::NAN]).is_err());
        let bins = fit_quantile_bins("c", &[1.0, 2.0]).unwrap();
        assert!(bins.assign_bin(f64::NAN).is_err());
    }

    #[test]
    fn training_values_land_in_their_decile() {
        let values: Vec<f64> = (1..=1000).map(|i| (i as f64).ln()).collect();
        let bins = fit_quantile_bins("c", &values).unwrap();
        for (rank, v) in values.iter().enumerate() {
            let decile = rank * 10 / values.len();
            assert_eq!(bins.assign_bin(*v).unwrap() as usize, decile);
        }
    }

    #[test]
    fn age_and_special_tokens() {
        assert_eq!(age_token(0), "AGE_0_4");
        assert_eq!(age_token(7), "AGE_5_9");
        assert_eq!(age_token(84), "AGE_80_84");
        assert_eq!(age_token(85), "AGE_85_PLUS");
        assert_eq!(age_token(120), "AGE_85_PLUS");
        let s = special_tokens(true);
        assert_eq!(s.len(), 2 + 13 + 18 + 3);
        assert_eq!(&s[..2], &[PAD.to_string(), OOV.to_string()]);
        assert_eq!(special_tokens(false).len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn assign_bin_counts_smaller_edges(
                mut raw in proptest::collection::vec(-50.0f64..50.0, 9),
                value in -60.0f64..60.0,
            ) {
                raw.sort_by(f64::total_cmp);
                let bins = QuantileBins { concept: "c".into(), edges: raw.clone().try_into().unwrap() };
                let brute = raw.iter().filter(|&&e| e < value).count().min(9);
                prop_assert_eq!(bins.assign_bin(value).unwrap() as usize, brute);
            }

            #[test]
            fn assign_bin_is_monotone(
                values in proptest::collection::vec(-100.0f64..100.0, 1..60),
                a in -120.0f64..120.0,
                b in -120.0f64..120.0,
            ) {
                let bins = fit_quantile_bins("c", &values).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(bins.assign_bin(lo).unwrap() <= bins.assign_bin(hi).unwrap());
            }
        }
    }
}
