//! In-memory MapReduce engine over in-process ranks.
//!
//! A run is `map -> [combine] -> exchange -> [group_by_key -> reduce]`, with
//! one worker thread per rank. The exchange is the only point where ranks
//! synchronize. Every ordered output (combiner output, groups, reduced KVs)
//! follows first-appearance order, never hash-map iteration order, so results
//! and counted metrics are identical from run to run.

use std::time::Instant;

use indexmap::map::Entry;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dataset::{generate_chunk, DatasetSpec, WordChunk};
use crate::error::{Error, Result};

pub mod exchange;
pub mod partition;

pub use exchange::{exchange, ExchangeOutput, FlushStats, InProcessTransport, Transport};
pub use partition::{fnv1a64, partition};

/// KV key bytes. Words up to 16 bytes stay inline.
pub type Key = SmallVec<[u8; 16]>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyValue {
    pub key: Key,
    pub value: u64,
}

impl KeyValue {
    pub fn new(key: &[u8], value: u64) -> Self {
        KeyValue {
            key: Key::from_slice(key),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMultiValue {
    pub key: Key,
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub num_ranks: usize,
    pub buffer_capacity_kvs: usize,
    pub combiner_enabled: bool,
    pub run_reduce: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ranks < 1 {
            return Err(Error::Config("num_ranks must be at least 1".into()));
        }
        if self.buffer_capacity_kvs < 1 {
            return Err(Error::Config(
                "buffer_capacity_kvs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    /// Wall-clock stage times, maximum over ranks.
    pub map_ms: f64,
    pub shuffle_ms: f64,
    pub reduce_ms: f64,
    /// KVs emitted by the map stage (one per input word).
    pub map_kv_count: u64,
    /// KVs delivered by the exchange, all ranks.
    pub shuffle_kv_count: u64,
    pub shuffle_bytes: u64,
    pub flush_count: u64,
    pub avg_buffer_fill_ratio: f64,
    /// KVs produced by the reduce stage; zero when reduce is off.
    pub reduce_kv_count: u64,
}

/// Wordcount map: one `(word, 1)` per word.
pub fn wordcount_map(word: &[u8], emit: &mut dyn FnMut(KeyValue)) {
    emit(KeyValue::new(word, 1));
}

/// Wordcount reduce: addition.
pub fn wordcount_reduce(acc: u64, value: u64) -> u64 {
    acc + value
}

pub fn map_stage<F>(chunk: &WordChunk, mut map_fn: F) -> Vec<KeyValue>
where
    F: FnMut(&[u8], &mut dyn FnMut(KeyValue)),
{
    let mut out = Vec::with_capacity(chunk.len());
    for word in chunk.words() {
        map_fn(word, &mut |kv| out.push(kv));
    }
    out
}

/// Local combiner: folds same-key values, keys in first-appearance order.
pub fn combine_local<F>(kvs: Vec<KeyValue>, reduce_fn: F) -> Vec<KeyValue>
where
    F: Fn(u64, u64) -> u64,
{
    let mut folded: IndexMap<Key, u64> = IndexMap::new();
    for kv in kvs {
        match folded.entry(kv.key) {
            Entry::Occupied(mut e) => {
                let acc = e.get_mut();
                *acc = reduce_fn(*acc, kv.value);
            }
            Entry::Vacant(e) => {
                e.insert(kv.value);
            }
        }
    }
    folded
        .into_iter()
        .map(|(key, value)| KeyValue { key, value })
        .collect()
}

pub fn group_by_key(received: Vec<KeyValue>) -> Vec<KeyMultiValue> {
    let mut groups: IndexMap<Key, Vec<u64>> = IndexMap::new();
    for kv in received {
        groups.entry(kv.key).or_default().push(kv.value);
    }
    groups
        .into_iter()
        .map(|(key, values)| KeyMultiValue { key, values })
        .collect()
}

pub fn reduce_stage<F>(kmvs: Vec<KeyMultiValue>, reduce_fn: F) -> Result<Vec<KeyValue>>
where
    F: Fn(u64, u64) -> u64,
{
    kmvs.into_iter()
        .map(|kmv| {
            let mut values = kmv.values.into_iter();
            let first = values.next().ok_or_else(|| {
                Error::Invariant(format!(
                    "KMV for {:?} has no values",
                    String::from_utf8_lossy(&kmv.key)
                ))
            })?;
            Ok(KeyValue {
                key: kmv.key,
                value: values.fold(first, &reduce_fn),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    /// Reduced KVs held by each rank; empty when reduce is off.
    pub per_rank: Vec<Vec<KeyValue>>,
    /// KVs each rank received from the exchange.
    pub delivered_per_rank: Vec<u64>,
    pub metrics: RunMetrics,
}

impl PipelineOutput {
    /// All reduced KVs, rank 0 first.
    pub fn results(&self) -> impl Iterator<Item = &KeyValue> {
        self.per_rank.iter().flatten()
    }
}

struct RankOutcome {
    results: Vec<KeyValue>,
    delivered: u64,
    map_kvs: u64,
    stats: FlushStats,
    map_ms: f64,
    shuffle_ms: f64,
    reduce_ms: f64,
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Runs wordcount over `spec` with the stages selected by `cfg`.
pub fn run_pipeline(cfg: &PipelineConfig, spec: &DatasetSpec) -> Result<PipelineOutput> {
    cfg.validate()?;
    spec.validate()?;
    let ranks = cfg.num_ranks;
    let chunks = (0..ranks)
        .map(|rank| generate_chunk(spec, rank, ranks))
        .collect::<Result<Vec<_>>>()?;

    let transport = InProcessTransport::new(ranks);
    let outcomes =
        exchange::run_ranks(chunks, |rank, chunk| run_rank(cfg, &transport, rank, chunk))?;

    let mut metrics = RunMetrics::default();
    let mut stats = FlushStats::default();
    let mut output = PipelineOutput::default();
    for outcome in outcomes {
        metrics.map_ms = metrics.map_ms.max(outcome.map_ms);
        metrics.shuffle_ms = metrics.shuffle_ms.max(outcome.shuffle_ms);
        metrics.reduce_ms = metrics.reduce_ms.max(outcome.reduce_ms);
        metrics.map_kv_count += outcome.map_kvs;
        metrics.reduce_kv_count += outcome.results.len() as u64;
        stats.merge(&outcome.stats);
        output.delivered_per_rank.push(outcome.delivered);
        output.per_rank.push(outcome.results);
    }
    metrics.shuffle_kv_count = stats.kv_count;
    metrics.shuffle_bytes = stats.bytes;
    metrics.flush_count = stats.flush_count;
    metrics.avg_buffer_fill_ratio = stats.avg_fill_ratio();

    let delivered: u64 = output.delivered_per_rank.iter().sum();
    if delivered != metrics.shuffle_kv_count {
        return Err(Error::Invariant(format!(
            "{} KVs sent but {delivered} delivered",
            metrics.shuffle_kv_count
        )));
    }
    output.metrics = metrics;
    Ok(output)
}

fn run_rank(
    cfg: &PipelineConfig,
    transport: &InProcessTransport,
    rank: usize,
    chunk: WordChunk,
) -> Result<RankOutcome> {
    let started = Instant::now();
    let mut kvs = map_stage(&chunk, wordcount_map);
    drop(chunk);
    let map_kvs = kvs.len() as u64;
    if cfg.combiner_enabled {
        kvs = combine_local(kvs, wordcount_reduce);
    }
    let map_ms = elapsed_ms(started);

    let started = Instant::now();
    let mut sender = exchange::ShuffleSender::new(rank, cfg.buffer_capacity_kvs, transport);
    let sent = kvs
        .into_iter()
        .try_for_each(|kv| sender.push(kv))
        .and_then(|_| sender.finish());
    // Every rank must reach the barrier, even after a send failure.
    transport.barrier();
    let stats = sent?;
    let received = exchange::receive(transport, rank)?;
    let shuffle_ms = elapsed_ms(started);
    let delivered = received.len() as u64;

    let started = Instant::now();
    let results = if cfg.run_reduce {
        reduce_stage(group_by_key(received), wordcount_reduce)?
    } else {
        Vec::new()
    };
    let reduce_ms = if cfg.run_reduce {
        elapsed_ms(started)
    } else {
        0.0
    };

    Ok(RankOutcome {
        results,
        delivered,
        map_kvs,
        stats,
        map_ms,
        shuffle_ms,
        reduce_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{distinct_words, expected_counts};
    use std::collections::HashMap;

    fn kvs(pairs: &[(&str, u64)]) -> Vec<KeyValue> {
        pairs
            .iter()
            .map(|(k, v)| KeyValue::new(k.as_bytes(), *v))
            .collect()
    }

    fn counts(out: &PipelineOutput) -> HashMap<Vec<u8>, u64> {
        out.results()
            .map(|kv| (kv.key.to_vec(), kv.value))
            .collect()
    }

    #[test]
    fn map_emits_one_per_word() {
        let chunk = WordChunk::from_words(0, ["a", "b", "a"]).unwrap();
        assert_eq!(
            map_stage(&chunk, wordcount_map),
            kvs(&[("a", 1), ("b", 1), ("a", 1)])
        );
        let empty = WordChunk::from_words(0, Vec::<&str>::new()).unwrap();
        assert!(map_stage(&empty, wordcount_map).is_empty());
    }

    #[test]
    fn combine_examples() {
        assert_eq!(
            combine_local(kvs(&[("a", 1), ("b", 1), ("a", 1)]), wordcount_reduce),
            kvs(&[("a", 2), ("b", 1)])
        );
        assert!(combine_local(vec![], wordcount_reduce).is_empty());
        let distinct = kvs(&[("c", 1), ("a", 4), ("b", 2)]);
        assert_eq!(combine_local(distinct.clone(), wordcount_reduce), distinct);
    }

    #[test]
    fn group_examples() {
        let g = group_by_key(kvs(&[("a", 1), ("b", 1), ("a", 1)]));
        assert_eq!(
            g,
            vec![
                KeyMultiValue {
                    key: Key::from_slice(b"a"),
                    values: vec![1, 1]
                },
                KeyMultiValue {
                    key: Key::from_slice(b"b"),
                    values: vec![1]
                },
            ]
        );
        assert!(group_by_key(vec![]).is_empty());
        let g = group_by_key(kvs(&[("z", 3); 9]));
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].values, vec![3; 9]);
    }

    #[test]
    fn reduce_examples() {
        let g = group_by_key(kvs(&[("a", 1), ("b", 1), ("a", 1)]));
        assert_eq!(
            reduce_stage(g, wordcount_reduce).unwrap(),
            kvs(&[("a", 2), ("b", 1)])
        );
        let single = vec![KeyMultiValue {
            key: Key::from_slice(b"a"),
            values: vec![5],
        }];
        assert_eq!(
            reduce_stage(single, wordcount_reduce).unwrap(),
            kvs(&[("a", 5)])
        );
        let empty = vec![KeyMultiValue {
            key: Key::from_slice(b"a"),
            values: vec![],
        }];
        assert!(matches!(
            reduce_stage(empty, wordcount_reduce),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn tiny_dataset_reduces_to_single_key() {
        let spec = DatasetSpec::new(10, 1, 3);
        for ranks in [1, 2, 5] {
            let cfg = PipelineConfig {
                num_ranks: ranks,
                buffer_capacity_kvs: 4,
                combiner_enabled: false,
                run_reduce: true,
            };
            let out = run_pipeline(&cfg, &spec).unwrap();
            assert_eq!(
                out.results().cloned().collect::<Vec<_>>(),
                kvs(&[("aaaaaa", 10)])
            );
        }
    }

    #[test]
    fn pipeline_matches_oracle_both_modes() {
        let spec = DatasetSpec::new(20_000, 300, 17);
        for ranks in [1, 2, 4, 8] {
            let oracle = expected_counts(&spec, ranks).unwrap();
            for combiner in [false, true] {
                let cfg = PipelineConfig {
                    num_ranks: ranks,
                    buffer_capacity_kvs: 64,
                    combiner_enabled: combiner,
                    run_reduce: true,
                };
                let out = run_pipeline(&cfg, &spec).unwrap();
                assert_eq!(counts(&out), oracle);
                assert_eq!(out.metrics.map_kv_count, 20_000);
                for (rank, results) in out.per_rank.iter().enumerate() {
                    assert!(results.iter().all(|kv| partition(&kv.key, ranks) == rank));
                }
                let expect_shuffled = if combiner {
                    (0..ranks)
                        .map(|r| distinct_words(&generate_chunk(&spec, r, ranks).unwrap()) as u64)
                        .sum()
                } else {
                    20_000
                };
                assert_eq!(out.metrics.shuffle_kv_count, expect_shuffled);
                assert_eq!(out.metrics.shuffle_bytes, expect_shuffled * (6 + 8));
            }
        }
    }

    #[test]
    fn map_shuffle_mode_discards_after_delivery() {
        let spec = DatasetSpec::new(5_000, 50, 1);
        let cfg = PipelineConfig {
            num_ranks: 3,
            buffer_capacity_kvs: 100,
            combiner_enabled: false,
            run_reduce: false,
        };
        let out = run_pipeline(&cfg, &spec).unwrap();
        assert!(out.results().next().is_none());
        assert_eq!(out.delivered_per_rank.iter().sum::<u64>(), 5_000);
        assert_eq!(out.metrics.reduce_ms, 0.0);
        assert_eq!(out.metrics.reduce_kv_count, 0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let spec = DatasetSpec::new(50_000, 1000, 99);
        let cfg = PipelineConfig {
            num_ranks: 4,
            buffer_capacity_kvs: 37,
            combiner_enabled: true,
            run_reduce: true,
        };
        let first = run_pipeline(&cfg, &spec).unwrap();
        for _ in 0..3 {
            let again = run_pipeline(&cfg, &spec).unwrap();
            assert_eq!(again.per_rank, first.per_rank);
            assert_eq!(
                again.metrics.shuffle_kv_count,
                first.metrics.shuffle_kv_count
            );
            assert_eq!(again.metrics.flush_count, first.metrics.flush_count);
            assert_eq!(
                again.metrics.avg_buffer_fill_ratio,
                first.metrics.avg_buffer_fill_ratio
            );
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = DatasetSpec::new(10, 2, 0);
        let mut cfg = PipelineConfig {
            num_ranks: 0,
            buffer_capacity_kvs: 1,
            combiner_enabled: false,
            run_reduce: true,
        };
        assert!(run_pipeline(&cfg, &spec).is_err());
        cfg.num_ranks = 1;
        cfg.buffer_capacity_kvs = 0;
        assert!(run_pipeline(&cfg, &spec).is_err());
        cfg.buffer_capacity_kvs = 1;
        cfg.num_ranks = 11;
        assert!(matches!(run_pipeline(&cfg, &spec), Err(Error::Usage(_))));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_kvs() -> impl Strategy<Value = Vec<KeyValue>> {
            prop::collection::vec(("[a-d]{1,2}", 1u64..5), 0..60).prop_map(|v| {
                v.into_iter()
                    .map(|(k, n)| KeyValue::new(k.as_bytes(), n))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn combine_preserves_sum_and_keys(kvs in arb_kvs()) {
                let total: u64 = kvs.iter().map(|kv| kv.value).sum();
                let distinct: std::collections::HashSet<_> = kvs.iter().map(|kv| kv.key.clone()).collect();
                let combined = combine_local(kvs, wordcount_reduce);
                prop_assert_eq!(combined.iter().map(|kv| kv.value).sum::<u64>(), total);
                prop_assert_eq!(combined.len(), distinct.len());
            }

            #[test]
            fn group_preserves_length(kvs in arb_kvs()) {
                let n = kvs.len();
                let groups = group_by_key(kvs);
                prop_assert_eq!(groups.iter().map(|g| g.values.len()).sum::<usize>(), n);
                prop_assert!(groups.iter().all(|g| !g.values.is_empty()));
            }
        }
    }
}
