//! Deterministic power model.
//!
//! Each stage has a nominal processor draw. Under a processor cap below that
//! draw the stage runs at the cap and takes proportionally longer, so the
//! stage's processor energy is unchanged:
//!
//! ```text
//! effective = min(nominal, cap)
//! duration  = base_duration * nominal / effective
//! dram      = effective * f / (1 - f)      (f = stage DRAM fraction)
//! ```
//!
//! Base durations come from counted work (KVs mapped, combined, shuffled,
//! reduced, and buffer flushes) times per-unit costs, never from wall-clock
//! time, so a simulated run is reproducible bit for bit.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DomainWatts, PowerBackend, PowerCapConfig, PowerDomain, PowerLimit, PowerSample, PowerTrace,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Map,
    Shuffle,
    Reduce,
    Idle,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Map => "map",
            Stage::Shuffle => "shuffle",
            Stage::Reduce => "reduce",
            Stage::Idle => "idle",
        })
    }
}

/// One value per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerStage {
    pub map: f64,
    pub shuffle: f64,
    pub reduce: f64,
    pub idle: f64,
}

impl PerStage {
    pub fn get(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Map => self.map,
            Stage::Shuffle => self.shuffle,
            Stage::Reduce => self.reduce,
            Stage::Idle => self.idle,
        }
    }

    fn iter(&self) -> impl Iterator<Item = (Stage, f64)> {
        [
            (Stage::Map, self.map),
            (Stage::Shuffle, self.shuffle),
            (Stage::Reduce, self.reduce),
            (Stage::Idle, self.idle),
        ]
        .into_iter()
    }
}

/// Simulated cost of one unit of work, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkCosts {
    pub map_ns_per_kv: f64,
    pub combine_ns_per_kv: f64,
    pub shuffle_ns_per_kv: f64,
    pub reduce_ns_per_kv: f64,
}

impl Default for WorkCosts {
    // Map+shuffle : reduce is about 1 : 3.4, and a combiner that removes
    // almost all traffic saves roughly 45% against no combiner.
    fn default() -> Self {
        WorkCosts {
            map_ns_per_kv: 500.0,
            combine_ns_per_kv: 5500.0,
            shuffle_ns_per_kv: 2000.0,
            reduce_ns_per_kv: 8500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimPowerModel {
    /// Nominal processor watts per stage.
    pub watts: PerStage,
    /// DRAM share of combined processor + DRAM power, per stage.
    pub dram_fraction: PerStage,
    /// Extra shuffle time per buffer flush. Zero unless requested.
    pub flush_latency_ms: f64,
    pub costs: WorkCosts,
}

impl Default for SimPowerModel {
    fn default() -> Self {
        SimPowerModel {
            watts: PerStage {
                map: 160.0,
                shuffle: 160.0,
                reduce: 160.0,
                idle: 60.0,
            },
            dram_fraction: PerStage {
                map: 0.10,
                shuffle: 0.13,
                reduce: 0.06,
                idle: 0.05,
            },
            flush_latency_ms: 0.0,
            costs: WorkCosts::default(),
        }
    }
}

impl SimPowerModel {
    pub fn validate(&self) -> Result<()> {
        for (stage, w) in self.watts.iter() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!(
                    "{stage} nominal watts must be positive, got {w}"
                )));
            }
        }
        for (stage, f) in self.dram_fraction.iter() {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "{stage} DRAM fraction must be in [0, 1), got {f}"
                )));
            }
        }
        let costs = [
            self.flush_latency_ms,
            self.costs.map_ns_per_kv,
            self.costs.combine_ns_per_kv,
            self.costs.shuffle_ns_per_kv,
            self.costs.reduce_ns_per_kv,
        ];
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("model costs must be nonnegative".into()));
        }
        Ok(())
    }

    /// Reads a TOML model; absent fields keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: SimPowerModel =
            toml::from_str(text).map_err(|e| Error::Config(format!("sim model: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Processor and DRAM watts for `stage` under `cap`.
    pub fn stage_watts(&self, stage: Stage, cap: &PowerCapConfig) -> (f64, f64) {
        let processor = cap.processor.clamp(self.watts.get(stage));
        let f = self.dram_fraction.get(stage);
        let dram = cap.dram.clamp(processor * f / (1.0 - f));
        (processor, dram)
    }

    /// Runtime stretch factor for `stage` under a processor limit.
    pub fn dilation(&self, stage: Stage, limit: PowerLimit) -> f64 {
        let nominal = self.watts.get(stage);
        nominal / limit.clamp(nominal)
    }

    /// Undilated stage durations for a run's counted work.
    pub fn base_durations(&self, work: &SimWork) -> [(Stage, f64); 3] {
        let ms = |kvs: u64, ns: f64| kvs as f64 * ns / 1e6;
        let mut map = ms(work.map_kvs, self.costs.map_ns_per_kv);
        if work.combined {
            map += ms(work.map_kvs, self.costs.combine_ns_per_kv);
        }
        let shuffle = ms(work.shuffle_kvs, self.costs.shuffle_ns_per_kv)
            + work.flushes as f64 * self.flush_latency_ms;
        let reduce = ms(work.reduce_kvs, self.costs.reduce_ns_per_kv);
        [
            (Stage::Map, map),
            (Stage::Shuffle, shuffle),
            (Stage::Reduce, reduce),
        ]
    }
}

/// Counted work of one run, as the model consumes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimWork {
    pub map_kvs: u64,
    pub combined: bool,
    pub shuffle_kvs: u64,
    pub flushes: u64,
    /// KVs entering the reduce stage; zero when there is none.
    pub reduce_kvs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStageRun {
    pub stage: Stage,
    pub duration_ms: f64,
    pub processor_watts: f64,
    pub dram_watts: f64,
    /// Samples on the stage's own clock, one per domain per interval.
    pub samples: Vec<PowerSample>,
}

pub fn sim_execute_stage(
    model: &SimPowerModel,
    stage: Stage,
    base_duration_ms: f64,
    cap: &PowerCapConfig,
    interval_ms: u64,
) -> Result<SimStageRun> {
    if !(base_duration_ms > 0.0 && base_duration_ms.is_finite()) {
        return Err(Error::Usage(format!(
            "stage base duration must be positive, got {base_duration_ms}"
        )));
    }
    let timeline = SimTimeline::build(model, &[(stage, base_duration_ms)], cap);
    let segment = timeline.segments[0].clone();
    Ok(SimStageRun {
        stage,
        duration_ms: segment.duration_ms,
        processor_watts: segment.processor_watts,
        dram_watts: segment.dram_watts,
        samples: timeline.sample(interval_ms)?.samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub stage: Stage,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub processor_watts: f64,
    pub dram_watts: f64,
}

/// Back-to-back stage segments of one simulated run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTimeline {
    pub segments: Vec<Segment>,
}

impl SimTimeline {
    /// Lays out `stages` in order, dilated under `cap`. Zero-length stages are dropped.
    pub fn build(model: &SimPowerModel, stages: &[(Stage, f64)], cap: &PowerCapConfig) -> Self {
        let mut start_ms = 0.0;
        let mut segments = Vec::with_capacity(stages.len());
        for &(stage, base) in stages {
            if base <= 0.0 {
                continue;
            }
            let duration_ms = base * model.dilation(stage, cap.processor);
            let (processor_watts, dram_watts) = model.stage_watts(stage, cap);
            segments.push(Segment {
                stage,
                start_ms,
                duration_ms,
                processor_watts,
                dram_watts,
            });
            start_ms += duration_ms;
        }
        SimTimeline { segments }
    }

    pub fn duration_ms(&self) -> f64 {
        self.segments
            .last()
            .map_or(0.0, |s| s.start_ms + s.duration_ms)
    }

    pub fn stage_duration_ms(&self, stage: Stage) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| s.duration_ms)
            .sum()
    }

    pub fn segment_at(&self, t_ms: f64) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| t_ms >= s.start_ms && t_ms < s.start_ms + s.duration_ms)
    }

    /// Point-samples the timeline at `0, interval, 2*interval, ...` while inside it.
    pub fn sample(&self, interval_ms: u64) -> Result<PowerTrace> {
        if interval_ms == 0 {
            return Err(Error::Usage("sample interval must be positive".into()));
        }
        let mut trace = PowerTrace::new(interval_ms);
        let end = self.duration_ms();
        let mut k = 0u64;
        loop {
            let t = k * interval_ms;
            if t as f64 >= end {
                break;
            }
            if let Some(seg) = self.segment_at(t as f64) {
                trace.push(t, PowerDomain::Processor, seg.processor_watts);
                trace.push(t, PowerDomain::Dram, seg.dram_watts);
            }
            k += 1;
        }
        Ok(trace)
    }
}

/// Live backend that reports the model's watts for whichever stage is current.
#[derive(Debug, Clone)]
pub struct SimBackend {
    model: SimPowerModel,
    caps: PowerCapConfig,
    stage: Stage,
}

impl SimBackend {
    pub fn new(model: SimPowerModel) -> Result<Self> {
        model.validate()?;
        Ok(SimBackend {
            model,
            caps: PowerCapConfig::default(),
            stage: Stage::Idle,
        })
    }

    pub fn model(&self) -> &SimPowerModel {
        &self.model
    }

    pub fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }
}

impl PowerBackend for SimBackend {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn set_power_cap(&mut self, domain: PowerDomain, limit: PowerLimit) -> Result<()> {
        limit.validate()?;
        self.caps.set(domain, limit);
        Ok(())
    }

    fn power_caps(&self) -> PowerCapConfig {
        self.caps
    }

    fn begin(&mut self) -> Result<()> {
        Ok(())
    }

    fn read_watts(&mut self, _elapsed_ms: f64) -> DomainWatts {
        let (processor, dram) = self.model.stage_watts(self.stage, &self.caps);
        DomainWatts {
            processor: Some(processor),
            dram: Some(dram),
        }
    }
}
