//! The three wordcount-derived mini-apps, as fixed pipeline configurations.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::runtime::{run_pipeline, PipelineConfig, RunMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiniApp {
    /// Map and shuffle only; delivered KVs are counted and dropped.
    MapShuffle,
    /// Full MapReduce without a combiner.
    GroupByKey,
    /// Full MapReduce with a local combiner before the shuffle.
    ReduceByKey,
}

impl MiniApp {
    pub const ALL: [MiniApp; 3] = [
        MiniApp::MapShuffle,
        MiniApp::GroupByKey,
        MiniApp::ReduceByKey,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MiniApp::MapShuffle => "map_shuffle",
            MiniApp::GroupByKey => "group_by_key",
            MiniApp::ReduceByKey => "reduce_by_key",
        }
    }

    pub fn combiner_enabled(self) -> bool {
        matches!(self, MiniApp::ReduceByKey)
    }

    pub fn runs_reduce(self) -> bool {
        !matches!(self, MiniApp::MapShuffle)
    }

    pub fn pipeline_config(self, num_ranks: usize, buffer_capacity_kvs: usize) -> PipelineConfig {
        PipelineConfig {
            num_ranks,
            buffer_capacity_kvs,
            combiner_enabled: self.combiner_enabled(),
            run_reduce: self.runs_reduce(),
        }
    }
}

impl fmt::Display for MiniApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MiniApp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MiniApp::ALL
            .into_iter()
            .find(|app| app.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown app {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct AppRun {
    /// Global word counts; `None` for map_shuffle.
    pub counts: Option<HashMap<Vec<u8>, u64>>,
    pub delivered_kvs: u64,
    pub metrics: RunMetrics,
}

pub fn run_app(
    app: MiniApp,
    spec: &DatasetSpec,
    num_ranks: usize,
    buffer_capacity_kvs: usize,
) -> Result<AppRun> {
    let cfg = app.pipeline_config(num_ranks, buffer_capacity_kvs);
    let output = run_pipeline(&cfg, spec)?;
    let counts = app.runs_reduce().then(|| {
        output
            .results()
            .map(|kv| (kv.key.to_vec(), kv.value))
            .collect::<HashMap<_, _>>()
    });
    Ok(AppRun {
        counts,
        delivered_kvs: output.delivered_per_rank.iter().sum(),
        metrics: output.metrics,
    })
}

/// Shuffle volume without the combiner divided by shuffle volume with it.
pub fn movement_reduction(
    spec: &DatasetSpec,
    num_ranks: usize,
    buffer_capacity_kvs: usize,
) -> Result<f64> {
    let plain = run_app(MiniApp::GroupByKey, spec, num_ranks, buffer_capacity_kvs)?;
    let combined = run_app(MiniApp::ReduceByKey, spec, num_ranks, buffer_capacity_kvs)?;
    ratio_of_volumes(
        plain.metrics.shuffle_kv_count,
        combined.metrics.shuffle_kv_count,
    )
}

pub(crate) fn ratio_of_volumes(plain: u64, combined: u64) -> Result<f64> {
    if combined == 0 {
        return Err(Error::Invariant(
            "combiner shuffled zero KVs; movement reduction undefined".into(),
        ));
    }
    Ok(plain as f64 / combined as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{distinct_words, expected_counts, generate_chunk};

    #[test]
    fn flags_follow_app() {
        assert!(!MiniApp::MapShuffle.combiner_enabled() && !MiniApp::MapShuffle.runs_reduce());
        assert!(!MiniApp::GroupByKey.combiner_enabled() && MiniApp::GroupByKey.runs_reduce());
        assert!(MiniApp::ReduceByKey.combiner_enabled() && MiniApp::ReduceByKey.runs_reduce());
    }

    #[test]
    fn names_round_trip() {
        for app in MiniApp::ALL {
            assert_eq!(app.as_str().parse::<MiniApp>().unwrap(), app);
        }
        assert!("wordcount".parse::<MiniApp>().is_err());
    }

    #[test]
    fn group_and_reduce_by_key_agree_with_oracle() {
        let spec = DatasetSpec::new(10_000, 72, 5);
        let oracle = expected_counts(&spec, 4).unwrap();
        let gbk = run_app(MiniApp::GroupByKey, &spec, 4, 256).unwrap();
        assert_eq!(gbk.counts.as_ref().unwrap(), &oracle);
        assert_eq!(gbk.metrics.shuffle_kv_count, 10_000);

        let rbk = run_app(MiniApp::ReduceByKey, &spec, 4, 256).unwrap();
        assert_eq!(rbk.counts.as_ref().unwrap(), &oracle);
        let distinct: u64 = (0..4)
            .map(|r| distinct_words(&generate_chunk(&spec, r, 4).unwrap()) as u64)
            .sum();
        assert_eq!(rbk.metrics.shuffle_kv_count, distinct);
        assert!(distinct <= 288);
    }

    #[test]
    fn map_shuffle_delivers_everything() {
        let spec = DatasetSpec::new(7_777, 900, 2);
        let ms = run_app(MiniApp::MapShuffle, &spec, 3, 50).unwrap();
        assert!(ms.counts.is_none());
        assert_eq!(ms.delivered_kvs, 7_777);
        assert_eq!(ms.metrics.reduce_ms, 0.0);
    }

    #[test]
    fn movement_reduction_examples() {
        assert_eq!(
            movement_reduction(&DatasetSpec::new(10, 1, 0), 1, 8).unwrap(),
            10.0
        );
        assert!(ratio_of_volumes(10, 0).is_err());
    }

    #[test]
    fn all_distinct_words_cannot_combine() {
        // Independent construction: a one-rank chunk is all-distinct exactly when
        // the generated words are pairwise different; pick a seed where that holds.
        let spec = (0..1000u64)
            .map(|seed| DatasetSpec::new(4, 4, seed))
            .find(|s| distinct_words(&generate_chunk(s, 0, 1).unwrap()) == 4)
            .unwrap();
        assert_eq!(movement_reduction(&spec, 1, 4).unwrap(), 1.0);
    }

    #[test]
    fn movement_reduction_nonincreasing_in_vocabulary() {
        let ratios: Vec<f64> = [72u64, 1_000, 10_000, 100_000]
            .iter()
            .map(|&u| movement_reduction(&DatasetSpec::new(1_000_000, u, 8), 4, 4096).unwrap())
            .collect();
        assert!(ratios.windows(2).all(|w| w[0] >= w[1]), "{ratios:?}");
        assert!(ratios.iter().all(|&r| r > 1.0));
    }
}
