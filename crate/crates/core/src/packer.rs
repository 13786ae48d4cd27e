//! Token-budget packing of patient sequences.
//!
//! Sequences are appended greedily in stream order while they fit; a
//! sequence that does not fit closes the current batch. No sequence is split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub patient_id: String,
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PackedBatch {
    pub token_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    /// Patient ordinal within the batch, per token.
    pub segment_ids: Vec<u32>,
    pub boundaries: Vec<Boundary>,
}

impl PackedBatch {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn push(&mut self, seq: TokenizedSequence) {
        let start = self.token_ids.len();
        let segment = self.boundaries.len() as u32;
        self.segment_ids.extend(std::iter::repeat_n(segment, seq.token_ids.len()));
        self.boundaries.push(Boundary {
            patient_id: seq.patient_id,
            start,
            length: seq.token_ids.len(),
        });
        self.token_ids.extend(seq.token_ids);
        self.position_ids.extend(seq.position_ids);
    }

    /// Whether token `i` may attend to token `j`.
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        j <= i && self.segment_ids[i] == self.segment_ids[j]
    }
}

/// Iterator adaptor produced by [`pack`].
pub struct Packer<I> {
    inner: I,
    budget: usize,
    current: PackedBatch,
    failed: bool,
}

impl<I: Iterator<Item = TokenizedSequence>> Iterator for Packer<I> {
    type Item = Result<PackedBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        for seq in self.inner.by_ref() {
            let len = seq.token_ids.len();
            if len > self.budget {
                self.failed = true;
                return Some(Err(Error::InvalidData(format!(
                    "sequence for patient {} has {len} tokens, over the {} token budget",
                    seq.patient_id, self.budget
                ))));
            }
            if seq.position_ids.len() != len {
                self.failed = true;
                return Some(Err(Error::InvalidData(format!(
                    "sequence for patient {} has {len} tokens but {} positions",
                    seq.patient_id,
                    seq.position_ids.len()
                ))));
            }
            if !self.current.boundaries.is_empty() && self.current.len() + len > self.budget {
                let full = std::mem::take(&mut self.current);
                self.current.push(seq);
                return Some(Ok(full));
            }
            self.current.push(seq);
        }
        if self.current.boundaries.is_empty() {
            None
        } else {
            Some(Ok(std::mem::take(&mut self.current)))
        }
    }
}

/// Packs a stream of sequences into batches of at most `budget` tokens.
pub fn pack<I>(sequences: I, budget: usize) -> Result<Packer<I::IntoIter>>
where
    I: IntoIterator<Item = TokenizedSequence>,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be > 0".into()));
    }
    Ok(Packer {
        inner: sequences.into_iter(),
        budget,
        current: PackedBatch::default(),
        failed: false,
    })
}

/// Per-token attention span `(segment_start, i)`, inclusive on both ends:
/// token `i` may attend to tokens `segment_start..=i`.
pub fn boundary_mask_spec(batch: &PackedBatch) -> Vec<(usize, usize)> {
    let mut spans = Vec::with_capacity(batch.len());
    for b in &batch.boundaries {
        spans.extend((b.start..b.start + b.length).map(|i| (b.start, i)));
    }
    spans
}
