//! Synthetic word datasets.
//!
//! A dataset is described by a [`DatasetSpec`]: `total_words` words drawn
//! uniformly from a vocabulary of `unique_words` fixed-width words. Words are
//! generated per rank with a counter-based PRNG, so any rank's chunk can be
//! rebuilt in isolation from `(seed, rank, position)` alone.
//!
//! The PRNG is SplitMix64 used in random-access form: each rank owns a stream
//! key derived from the seed and rank, and the word at local position `p` is
//! the `p`-th SplitMix64 output of that stream. The 64-bit output is mapped to
//! a vocabulary index with a 128-bit multiply-shift (bias below 2^-40 for any
//! vocabulary that fits in memory). Changing any of this changes every CSV, so
//! it is fixed.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHABET_SIZE: u64 = 26;
pub const DEFAULT_WORD_LEN: usize = 6;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const RANK_SALT: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub total_words: u64,
    pub unique_words: u64,
    pub seed: u64,
    #[serde(default = "default_word_len")]
    pub word_len: usize,
}

fn default_word_len() -> usize {
    DEFAULT_WORD_LEN
}

impl DatasetSpec {
    pub fn new(total_words: u64, unique_words: u64, seed: u64) -> Self {
        DatasetSpec {
            total_words,
            unique_words,
            seed,
            word_len: DEFAULT_WORD_LEN,
        }
    }

    pub fn with_word_len(mut self, word_len: usize) -> Self {
        self.word_len = word_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.unique_words < 1 {
            return Err(Error::Config("unique_words must be at least 1".into()));
        }
        if self.unique_words > self.total_words {
            return Err(Error::Config(format!(
                "unique_words ({}) exceeds total_words ({})",
                self.unique_words, self.total_words
            )));
        }
        if self.word_len == 0 {
            return Err(Error::Config("word_len must be positive".into()));
        }
        if !encodable(self.unique_words, self.word_len) {
            return Err(Error::Config(format!(
                "{} distinct words do not fit in {} letters",
                self.unique_words, self.word_len
            )));
        }
        Ok(())
    }
}

/// True when `26^word_len >= count`.
fn encodable(count: u64, word_len: usize) -> bool {
    let mut capacity: u64 = 1;
    for _ in 0..word_len {
        capacity = match capacity.checked_mul(ALPHABET_SIZE) {
            Some(c) => c,
            None => return true,
        };
        if capacity >= count {
            return true;
        }
    }
    capacity >= count
}

/// Writes the fixed-width base-26 rendering of `index` into `out`.
pub(crate) fn encode_word(mut index: u64, out: &mut [u8]) {
    for slot in out.iter_mut().rev() {
        *slot = b'a' + (index % ALPHABET_SIZE) as u8;
        index /= ALPHABET_SIZE;
    }
}

/// The `unique_words` vocabulary in index order (which is also lexicographic order).
pub fn vocabulary(spec: &DatasetSpec) -> Result<Vec<Vec<u8>>> {
    spec.validate()?;
    Ok((0..spec.unique_words)
        .map(|i| {
            let mut word = vec![0u8; spec.word_len];
            encode_word(i, &mut word);
            word
        })
        .collect())
}

/// Per-rank input: a run of equal-length words stored back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordChunk {
    pub rank: usize,
    word_len: usize,
    bytes: Vec<u8>,
}

impl WordChunk {
    /// Builds a chunk from explicit words. All words must share one length.
    pub fn from_words<I, W>(rank: usize, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = W>,
        W: AsRef<[u8]>,
    {
        let mut word_len = None;
        let mut bytes = Vec::new();
        for word in words {
            let word = word.as_ref();
            match word_len {
                None => word_len = Some(word.len()),
                Some(len) if len != word.len() => {
                    return Err(Error::Config(format!(
                        "chunk words must share one length (got {} and {})",
                        len,
                        word.len()
                    )))
                }
                Some(_) => {}
            }
            bytes.extend_from_slice(word);
        }
        Ok(WordChunk {
            rank,
            word_len: word_len.unwrap_or(0),
            bytes,
        })
    }

    pub fn len(&self) -> usize {
        self.bytes.len().checked_div(self.word_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn word_len(&self) -> usize {
        self.word_len
    }

    pub fn get(&self, index: usize) -> Option<&[u8]> {
        if index >= self.len() {
            return None;
        }
        let start = index * self.word_len;
        Some(&self.bytes[start..start + self.word_len])
    }

    pub fn words(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        // chunks_exact panics on a zero size; an empty chunk has no bytes anyway.
        self.bytes.chunks_exact(self.word_len.max(1))
    }

    /// Raw concatenated word bytes.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[inline]
fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, rank: u64) -> u64 {
    splitmix64_mix(seed ^ splitmix64_mix(rank.wrapping_mul(RANK_SALT).wrapping_add(GOLDEN_GAMMA)))
}

/// Vocabulary index of the word at `position` in `rank`'s chunk.
#[inline]
pub fn word_index(seed: u64, rank: u64, position: u64, unique_words: u64) -> u64 {
    let key = stream_key(seed, rank);
    let draw =
        splitmix64_mix(key.wrapping_add(position.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
    ((draw as u128 * unique_words as u128) >> 64) as u64
}

/// Number of words assigned to `rank` under the block split (first `N mod R` ranks get one extra).
pub fn chunk_len(total_words: u64, rank: usize, num_ranks: usize) -> u64 {
    let r = num_ranks as u64;
    let base = total_words / r;
    if (rank as u64) < total_words % r {
        base + 1
    } else {
        base
    }
}

pub fn generate_chunk(spec: &DatasetSpec, rank: usize, num_ranks: usize) -> Result<WordChunk> {
    spec.validate()?;
    if num_ranks == 0 {
        return Err(Error::Usage("num_ranks must be at least 1".into()));
    }
    if rank >= num_ranks {
        return Err(Error::Usage(format!(
            "rank {rank} out of range for {num_ranks} ranks"
        )));
    }
    if num_ranks as u64 > spec.total_words {
        return Err(Error::Usage(format!(
            "{num_ranks} ranks exceed {} total words",
            spec.total_words
        )));
    }

    let len = chunk_len(spec.total_words, rank, num_ranks) as usize;
    let width = spec.word_len;
    let key = stream_key(spec.seed, rank as u64);
    let mut bytes = vec![0u8; len * width];
    for (position, slot) in bytes.chunks_exact_mut(width).enumerate() {
        let draw = splitmix64_mix(
            key.wrapping_add((position as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        );
        let index = ((draw as u128 * spec.unique_words as u128) >> 64) as u64;
        encode_word(index, slot);
    }
    Ok(WordChunk {
        rank,
        word_len: width,
        bytes,
    })
}

/// Serial brute-force word counts over every rank's chunk.
pub fn expected_counts(spec: &DatasetSpec, num_ranks: usize) -> Result<HashMap<Vec<u8>, u64>> {
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for rank in 0..num_ranks.max(1) {
        let chunk = generate_chunk(spec, rank, num_ranks)?;
        for word in chunk.words() {
            match counts.get_mut(word) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(word.to_vec(), 1);
                }
            }
        }
    }
    Ok(counts)
}

pub fn distinct_words(chunk: &WordChunk) -> usize {
    chunk.words().collect::<HashSet<_>>().len()
}

/// Fraction of the chunk a perfect pre-shuffle combiner eliminates: `(len - distinct) / len`.
pub fn combinability(chunk: &WordChunk) -> f64 {
    let len = chunk.len();
    if len == 0 {
        return 0.0;
    }
    (len - distinct_words(chunk)) as f64 / len as f64
}
