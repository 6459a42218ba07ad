//! Power-cap control and power/energy measurement.
//!
//! Two backends implement [`PowerBackend`]: [`rapl::RaplBackend`] talks to the
//! Linux powercap sysfs tree, and [`sim::SimBackend`] plays back a
//! deterministic stage model. A [`sampler::Sampler`] polls a backend at a fixed
//! interval; [`integrate_energy`] turns the resulting trace into joules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod rapl;
pub mod sampler;
pub mod sim;

pub use sampler::Sampler;

pub const DEFAULT_SAMPLE_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerDomain {
    Processor,
    Dram,
}

impl PowerDomain {
    pub const ALL: [PowerDomain; 2] = [PowerDomain::Processor, PowerDomain::Dram];

    pub fn as_str(self) -> &'static str {
        match self {
            PowerDomain::Processor => "processor",
            PowerDomain::Dram => "dram",
        }
    }
}

impl fmt::Display for PowerDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PowerDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "processor" => Ok(PowerDomain::Processor),
            "dram" => Ok(PowerDomain::Dram),
            other => Err(Error::Parse(format!("unknown power domain {other:?}"))),
        }
    }
}

/// A power limit for one domain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerLimit {
    #[default]
    Unlimited,
    Watts(f64),
}

impl PowerLimit {
    pub fn watts(watts: f64) -> Result<Self> {
        let limit = PowerLimit::Watts(watts);
        limit.validate()?;
        Ok(limit)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PowerLimit::Watts(w) if !(w.is_finite() && w > 0.0) => Err(Error::Config(format!(
                "power limit must be a positive number of watts, got {w}"
            ))),
            _ => Ok(()),
        }
    }

    /// `min(watts, limit)`.
    pub fn clamp(&self, watts: f64) -> f64 {
        match *self {
            PowerLimit::Unlimited => watts,
            PowerLimit::Watts(limit) => watts.min(limit),
        }
    }

    pub fn as_watts(&self) -> Option<f64> {
        match *self {
            PowerLimit::Unlimited => None,
            PowerLimit::Watts(w) => Some(w),
        }
    }
}

/// Renders as `none` or the watt value (`140`, `137.5`).
impl fmt::Display for PowerLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerLimit::Unlimited => f.write_str("none"),
            PowerLimit::Watts(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for PowerLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("unlimited") {
            return Ok(PowerLimit::Unlimited);
        }
        let watts: f64 = s.parse().map_err(|_| {
            Error::Parse(format!("power cap {s:?} is neither a number nor \"none\""))
        })?;
        PowerLimit::watts(watts)
    }
}

/// Limits for both domains.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerCapConfig {
    #[serde(default)]
    pub processor: PowerLimit,
    #[serde(default)]
    pub dram: PowerLimit,
}

impl PowerCapConfig {
    pub fn processor(limit: PowerLimit) -> Self {
        PowerCapConfig {
            processor: limit,
            dram: PowerLimit::Unlimited,
        }
    }

    pub fn get(&self, domain: PowerDomain) -> PowerLimit {
        match domain {
            PowerDomain::Processor => self.processor,
            PowerDomain::Dram => self.dram,
        }
    }

    pub fn set(&mut self, domain: PowerDomain, limit: PowerLimit) {
        match domain {
            PowerDomain::Processor => self.processor = limit,
            PowerDomain::Dram => self.dram = limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Start of the interval the sample covers, relative to run start.
    pub t_ms: u64,
    pub domain: PowerDomain,
    pub watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub interval_ms: u64,
    pub samples: Vec<PowerSample>,
}

impl PowerTrace {
    pub fn new(interval_ms: u64) -> Self {
        PowerTrace {
            interval_ms,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, t_ms: u64, domain: PowerDomain, watts: f64) {
        self.samples.push(PowerSample {
            t_ms,
            domain,
            watts,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain(&self, domain: PowerDomain) -> impl Iterator<Item = &PowerSample> + '_ {
        self.samples.iter().filter(move |s| s.domain == domain)
    }

    /// Appends `other` shifted to start where this trace ends.
    pub fn concat(&mut self, other: &PowerTrace) -> Result<()> {
        if other.interval_ms != self.interval_ms && !other.is_empty() {
            return Err(Error::Usage(format!(
                "cannot join traces sampled at {} ms and {} ms",
                self.interval_ms, other.interval_ms
            )));
        }
        let offset = self.end_ms();
        self.samples
            .extend(other.samples.iter().map(|s| PowerSample {
                t_ms: s.t_ms + offset,
                ..*s
            }));
        Ok(())
    }

    /// Last sample time plus one interval; zero for an empty trace.
    pub fn end_ms(&self) -> u64 {
        self.samples
            .iter()
            .map(|s| s.t_ms)
            .max()
            .map_or(0, |t| t + self.interval_ms)
    }

    /// Checks watts are nonnegative and per-domain times strictly increase.
    pub fn validate(&self) -> Result<()> {
        for domain in PowerDomain::ALL {
            let mut last: Option<u64> = None;
            for s in self.domain(domain) {
                if s.watts.is_nan() || s.watts < 0.0 {
                    return Err(Error::Invariant(format!(
                        "{domain} sample at {} ms has negative power {}",
                        s.t_ms, s.watts
                    )));
                }
                if last.is_some_and(|t| s.t_ms <= t) {
                    return Err(Error::Invariant(format!(
                        "{domain} samples not strictly increasing at {} ms",
                        s.t_ms
                    )));
                }
                last = Some(s.t_ms);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyReport {
    pub processor_j: f64,
    pub dram_j: f64,
    pub total_j: f64,
    pub runtime_ms: f64,
    pub dram_fraction: f64,
}

impl EnergyReport {
    pub fn from_parts(processor_j: f64, dram_j: f64, runtime_ms: f64) -> Self {
        let total_j = processor_j + dram_j;
        EnergyReport {
            processor_j,
            dram_j,
            total_j,
            runtime_ms,
            dram_fraction: if total_j > 0.0 { dram_j / total_j } else { 0.0 },
        }
    }
}

/// Rectangle rule at the sample interval. A missing sample contributes nothing.
pub fn integrate_energy(trace: &PowerTrace) -> EnergyReport {
    let joules = |domain| {
        trace.domain(domain).map(|s| s.watts).sum::<f64>() * trace.interval_ms as f64 / 1000.0
    };
    EnergyReport::from_parts(
        joules(PowerDomain::Processor),
        joules(PowerDomain::Dram),
        trace.end_ms() as f64,
    )
}

/// Power drawn per domain over the most recent interval. `None` marks a failed read.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DomainWatts {
    pub processor: Option<f64>,
    pub dram: Option<f64>,
}

impl DomainWatts {
    pub fn get(&self, domain: PowerDomain) -> Option<f64> {
        match domain {
            PowerDomain::Processor => self.processor,
            PowerDomain::Dram => self.dram,
        }
    }
}

/// A source of power readings that can also enforce caps.
pub trait PowerBackend: Send {
    fn name(&self) -> &'static str;

    fn set_power_cap(&mut self, domain: PowerDomain, limit: PowerLimit) -> Result<()>;

    /// Current limits as the backend sees them.
    fn power_caps(&self) -> PowerCapConfig;

    /// Establishes the baseline for the next [`read_watts`](Self::read_watts).
    fn begin(&mut self) -> Result<()>;

    /// Average power since the previous read (or `begin`), `elapsed_ms` ago.
    fn read_watts(&mut self, elapsed_ms: f64) -> DomainWatts;
}

/// Applies both limits of `cap` to `backend`.
pub fn set_power_cap(backend: &mut dyn PowerBackend, cap: &PowerCapConfig) -> Result<()> {
    for domain in PowerDomain::ALL {
        let limit = cap.get(domain);
        limit.validate()?;
        backend.set_power_cap(domain, limit)?;
    }
    Ok(())
}
