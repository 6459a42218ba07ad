//! Intel RAPL through the Linux powercap sysfs interface.
//!
//! Layout under `<root>` (default `/sys/class/powercap`):
//!
//! ```text
//! intel-rapl:<P>/energy_uj                      package energy counter, µJ
//! intel-rapl:<P>/max_energy_range_uj            counter wrap point
//! intel-rapl:<P>/constraint_0_power_limit_uw    package limit, µW
//! intel-rapl:<P>:<S>/name                       "dram" for the DRAM subzone
//! ```
//!
//! Energy counters wrap at `max_energy_range_uj`; see [`wrap_delta`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{DomainWatts, PowerBackend, PowerCapConfig, PowerDomain, PowerLimit};
use crate::error::{Error, Result};

pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";
pub const POWERCAP_ROOT_ENV: &str = "MRCAP_POWERCAP_ROOT";

const ENERGY_FILE: &str = "energy_uj";
const MAX_ENERGY_FILE: &str = "max_energy_range_uj";
const LIMIT_FILE: &str = "constraint_0_power_limit_uw";

/// `$MRCAP_POWERCAP_ROOT` if set, else the standard sysfs location.
pub fn default_root() -> PathBuf {
    std::env::var_os(POWERCAP_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_POWERCAP_ROOT))
}

/// Energy consumed between two counter readings, allowing one wrap.
pub fn wrap_delta(prev_uj: u64, curr_uj: u64, max_range_uj: u64) -> u64 {
    if curr_uj >= prev_uj {
        curr_uj - prev_uj
    } else {
        max_range_uj.saturating_sub(prev_uj).saturating_add(curr_uj)
    }
}

/// Average watts for `delta_uj` microjoules over `dt_ms` milliseconds.
pub fn watts_from_delta(delta_uj: u64, dt_ms: f64) -> f64 {
    if dt_ms <= 0.0 {
        return 0.0;
    }
    delta_uj as f64 / dt_ms / 1000.0
}

/// Microwatt string written to a limit file: `140.0` becomes `"140000000"`.
pub fn limit_uw_string(watts: f64) -> String {
    format!("{}", (watts * 1e6).round() as u64)
}

fn read_u64(path: &Path) -> Result<u64> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::capability(format!("cannot read {}: {e}", path.display())))?;
    text.trim().parse().map_err(|_| {
        Error::capability(format!(
            "{} does not hold an integer: {:?}",
            path.display(),
            text.trim()
        ))
    })
}

// Never creates the file: a zone without one cannot be capped.
fn write_limit(path: &Path, value: &str) -> Result<()> {
    fs::OpenOptions::new()
        .write(true)
        .truncate(true)
        .open(path)
        .and_then(|mut f| f.write_all(value.as_bytes()))
        .map_err(|e| Error::capability(format!("cannot write {}: {e}", path.display())))
}

/// A zone's energy counter, turned into a stream of wrap-corrected deltas.
#[derive(Debug, Clone)]
pub struct EnergyCounter {
    zone: PathBuf,
    max_range_uj: u64,
    last_uj: Option<u64>,
}

impl EnergyCounter {
    pub fn open(zone: impl Into<PathBuf>) -> Result<Self> {
        let zone = zone.into();
        let max_range_uj = read_u64(&zone.join(MAX_ENERGY_FILE))?;
        Ok(EnergyCounter {
            zone,
            max_range_uj,
            last_uj: None,
        })
    }

    pub fn zone(&self) -> &Path {
        &self.zone
    }

    pub fn read_uj(&self) -> Result<u64> {
        read_u64(&self.zone.join(ENERGY_FILE))
    }

    /// Reads the counter. Returns the delta since the previous read, or `None` on the first.
    pub fn next_delta(&mut self) -> Result<Option<u64>> {
        let curr = self.read_uj()?;
        let delta = self
            .last_uj
            .map(|prev| wrap_delta(prev, curr, self.max_range_uj));
        self.last_uj = Some(curr);
        Ok(delta)
    }
}

/// Same as [`EnergyCounter::next_delta`] applied to a fresh counter `reads` times.
pub fn rapl_read_energy_uj(zone: &Path, reads: usize) -> Result<Vec<u64>> {
    let mut counter = EnergyCounter::open(zone)?;
    let mut deltas = Vec::with_capacity(reads.saturating_sub(1));
    for _ in 0..reads {
        if let Some(d) = counter.next_delta()? {
            deltas.push(d);
        }
    }
    Ok(deltas)
}

#[derive(Debug)]
struct Zone {
    counter: EnergyCounter,
    /// Limit found at open; restored for an unlimited cap.
    original_limit_uw: Option<String>,
}

impl Zone {
    fn open(path: PathBuf) -> Result<Self> {
        let original_limit_uw = fs::read_to_string(path.join(LIMIT_FILE))
            .ok()
            .map(|s| s.trim().to_string());
        Ok(Zone {
            counter: EnergyCounter::open(path)?,
            original_limit_uw,
        })
    }

    fn limit_path(&self) -> PathBuf {
        self.counter.zone.join(LIMIT_FILE)
    }

    fn apply(&self, limit: PowerLimit) -> Result<()> {
        let value = match limit {
            PowerLimit::Watts(w) => limit_uw_string(w),
            PowerLimit::Unlimited => match &self.original_limit_uw {
                Some(v) => v.clone(),
                None => return Ok(()),
            },
        };
        write_limit(&self.limit_path(), &value)
    }
}

#[derive(Debug)]
struct Package {
    zone: Zone,
    dram: Option<Zone>,
}

/// Sums every package (and its DRAM subzone) found under the powercap root.
#[derive(Debug)]
pub struct RaplBackend {
    root: PathBuf,
    packages: Vec<Package>,
    caps: PowerCapConfig,
}

fn zone_indices(name: &str) -> Option<Vec<u32>> {
    let rest = name.strip_prefix("intel-rapl:")?;
    rest.split(':').map(|p| p.parse().ok()).collect()
}

impl RaplBackend {
    /// Opens the default root (see [`default_root`]).
    pub fn open_default() -> Result<Self> {
        Self::open(default_root())
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let entries = fs::read_dir(&root).map_err(|e| {
            Error::capability(format!("cannot list powercap root {}: {e}", root.display()))
        })?;
        let mut zones: Vec<(Vec<u32>, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                zone_indices(&name).map(|idx| (idx, e.path()))
            })
            .collect();
        zones.sort();

        let mut packages = Vec::new();
        for (idx, path) in zones.iter().filter(|(idx, _)| idx.len() == 1) {
            let dram = zones
                .iter()
                .filter(|(sub, _)| sub.len() == 2 && sub[0] == idx[0])
                .find(|(_, p)| fs::read_to_string(p.join("name")).is_ok_and(|n| n.trim() == "dram"))
                .map(|(_, p)| Zone::open(p.clone()))
                .transpose()?;
            packages.push(Package {
                zone: Zone::open(path.clone())?,
                dram,
            });
        }
        if packages.is_empty() {
            return Err(Error::capability(format!(
                "no intel-rapl zones under {}",
                root.display()
            )));
        }
        Ok(RaplBackend {
            root,
            packages,
            caps: PowerCapConfig::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn has_dram(&self) -> bool {
        self.packages.iter().any(|p| p.dram.is_some())
    }

    fn read_domain(&mut self, domain: PowerDomain, elapsed_ms: f64) -> Option<f64> {
        let mut total_uj = 0u64;
        let mut any = false;
        let mut failed = false;
        for package in &mut self.packages {
            let zone = match domain {
                PowerDomain::Processor => Some(&mut package.zone),
                PowerDomain::Dram => package.dram.as_mut(),
            };
            let Some(zone) = zone else { continue };
            match zone.counter.next_delta() {
                Ok(Some(delta)) => {
                    total_uj += delta;
                    any = true;
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("{e}");
                    failed = true;
                }
            }
        }
        (any && !failed).then(|| watts_from_delta(total_uj, elapsed_ms))
    }
}

impl PowerBackend for RaplBackend {
    fn name(&self) -> &'static str {
        "rapl"
    }

    fn set_power_cap(&mut self, domain: PowerDomain, limit: PowerLimit) -> Result<()> {
        limit.validate()?;
        for package in &self.packages {
            match domain {
                PowerDomain::Processor => package.zone.apply(limit)?,
                PowerDomain::Dram => match &package.dram {
                    Some(zone) => zone.apply(limit)?,
                    None if limit == PowerLimit::Unlimited => {}
                    None => {
                        return Err(Error::capability(format!(
                            "no DRAM zone under {} to cap",
                            self.root.display()
                        )))
                    }
                },
            }
        }
        self.caps.set(domain, limit);
        Ok(())
    }

    fn power_caps(&self) -> PowerCapConfig {
        self.caps
    }

    fn begin(&mut self) -> Result<()> {
        for package in &mut self.packages {
            package.zone.counter.next_delta()?;
            if let Some(dram) = &mut package.dram {
                dram.counter.next_delta()?;
            }
        }
        Ok(())
    }

    fn read_watts(&mut self, elapsed_ms: f64) -> DomainWatts {
        DomainWatts {
            processor: self.read_domain(PowerDomain::Processor, elapsed_ms),
            dram: self.read_domain(PowerDomain::Dram, elapsed_ms),
        }
    }
}

/// Writes a minimal powercap tree for tests and demos.
#[doc(hidden)]
pub mod fixture {
    use std::fs;
    use std::path::Path;

    pub fn write_zone(
        root: &Path,
        dir: &str,
        name: &str,
        energy_uj: u64,
        max_uj: u64,
        limit_uw: Option<u64>,
    ) {
        let zone = root.join(dir);
        fs::create_dir_all(&zone).unwrap();
        fs::write(zone.join("name"), format!("{name}\n")).unwrap();
        fs::write(zone.join("energy_uj"), format!("{energy_uj}\n")).unwrap();
        fs::write(zone.join("max_energy_range_uj"), format!("{max_uj}\n")).unwrap();
        if let Some(limit) = limit_uw {
            fs::write(
                zone.join("constraint_0_power_limit_uw"),
                format!("{limit}\n"),
            )
            .unwrap();
        }
    }

    pub fn set_energy(root: &Path, dir: &str, energy_uj: u64) {
        fs::write(root.join(dir).join("energy_uj"), format!("{energy_uj}\n")).unwrap();
    }
}
