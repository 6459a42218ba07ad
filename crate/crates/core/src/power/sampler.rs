//! Fixed-rate power sampler.
//!
//! A background thread polls the backend at `start + k * interval` for
//! `k = 1, 2, ...`. The reading taken at tick `k` covers the interval that
//! began at `(k - 1) * interval` and is stamped with that start time. Ticks
//! are scheduled against the start instant, so a slow read does not shift
//! later ticks. The backend sits behind a mutex: cap changes and reads never
//! interleave.

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, RecvTimeoutError, Sender};

use super::{PowerBackend, PowerDomain, PowerTrace};
use crate::error::{Error, Result};

pub type SharedBackend = Arc<Mutex<dyn PowerBackend>>;

pub fn shared<B: PowerBackend + 'static>(backend: B) -> SharedBackend {
    Arc::new(Mutex::new(backend))
}

struct Finished {
    trace: PowerTrace,
    failures: u64,
}

pub struct Sampler {
    stop_tx: Option<Sender<()>>,
    handle: Option<JoinHandle<Finished>>,
    finished: Option<Finished>,
}

impl Sampler {
    pub fn start(backend: SharedBackend, interval_ms: u64) -> Result<Sampler> {
        if interval_ms == 0 {
            return Err(Error::Usage("sample interval must be positive".into()));
        }
        lock(&backend).begin()?;
        let (stop_tx, stop_rx) = channel::bounded::<()>(1);
        let handle = std::thread::Builder::new()
            .name("power-sampler".into())
            .spawn(move || {
                let start = Instant::now();
                let mut trace = PowerTrace::new(interval_ms);
                let mut failures = 0;
                let mut last = start;
                for k in 1u64.. {
                    let deadline = start + Duration::from_millis(interval_ms * k);
                    match stop_rx.recv_deadline(deadline) {
                        Err(RecvTimeoutError::Timeout) => {}
                        _ => break,
                    }
                    let now = Instant::now();
                    let elapsed_ms = (now - last).as_secs_f64() * 1000.0;
                    last = now;
                    let watts = lock(&backend).read_watts(elapsed_ms);
                    let t_ms = (k - 1) * interval_ms;
                    for domain in PowerDomain::ALL {
                        match watts.get(domain) {
                            Some(w) => trace.push(t_ms, domain, w),
                            None => failures += 1,
                        }
                    }
                }
                Finished { trace, failures }
            })
            .map_err(|e| Error::io("power-sampler thread", e))?;
        Ok(Sampler {
            stop_tx: Some(stop_tx),
            handle: Some(handle),
            finished: None,
        })
    }

    /// Stops sampling and returns the trace. Later calls return the same trace.
    pub fn stop(&mut self) -> PowerTrace {
        self.finish();
        self.finished
            .as_ref()
            .map(|f| f.trace.clone())
            .unwrap_or_else(|| PowerTrace::new(0))
    }

    /// Domain readings that failed and were left out of the trace.
    pub fn failures(&mut self) -> u64 {
        self.finish();
        self.finished.as_ref().map_or(0, |f| f.failures)
    }

    fn finish(&mut self) {
        if let Some(tx) = self.stop_tx.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.handle.take() {
            match handle.join() {
                Ok(finished) => self.finished = Some(finished),
                Err(panic) => std::panic::resume_unwind(panic),
            }
        }
    }
}

impl Drop for Sampler {
    fn drop(&mut self) {
        self.finish();
    }
}

fn lock(backend: &SharedBackend) -> std::sync::MutexGuard<'_, dyn PowerBackend + 'static> {
    // A panic inside a backend read leaves no partial state worth refusing.
    backend
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::sim::{SimBackend, SimPowerModel, Stage};
    use crate::power::{DomainWatts, PowerCapConfig, PowerLimit};

    #[test]
    fn one_second_gives_ten_samples() {
        let mut backend = SimBackend::new(SimPowerModel::default()).unwrap();
        backend.set_stage(Stage::Map);
        let mut sampler = Sampler::start(shared(backend), 100).unwrap();
        std::thread::sleep(Duration::from_millis(1050));
        let trace = sampler.stop();
        for domain in PowerDomain::ALL {
            let times: Vec<u64> = trace.domain(domain).map(|s| s.t_ms).collect();
            assert_eq!(times, (0..10).map(|k| k * 100).collect::<Vec<_>>());
        }
        assert!(trace
            .domain(PowerDomain::Processor)
            .all(|s| s.watts == 160.0));
        assert_eq!(sampler.stop(), trace);
    }

    #[test]
    fn immediate_stop_is_empty() {
        let backend = SimBackend::new(SimPowerModel::default()).unwrap();
        let mut sampler = Sampler::start(shared(backend), 10_000).unwrap();
        assert!(sampler.stop().is_empty());
        assert!(sampler.stop().is_empty());
        assert_eq!(sampler.failures(), 0);
    }

    #[test]
    fn cap_applies_to_later_samples() {
        let mut backend = SimBackend::new(SimPowerModel::default()).unwrap();
        backend.set_stage(Stage::Map);
        let backend = shared(backend);
        lock(&backend)
            .set_power_cap(PowerDomain::Processor, PowerLimit::Watts(120.0))
            .unwrap();
        let mut sampler = Sampler::start(backend.clone(), 20).unwrap();
        std::thread::sleep(Duration::from_millis(110));
        let trace = sampler.stop();
        assert!(!trace.is_empty());
        assert!(trace
            .domain(PowerDomain::Processor)
            .all(|s| s.watts == 120.0));
        assert_eq!(
            lock(&backend).power_caps(),
            PowerCapConfig::processor(PowerLimit::Watts(120.0))
        );
    }

    struct Flaky {
        calls: u32,
    }

    impl PowerBackend for Flaky {
        fn name(&self) -> &'static str {
            "flaky"
        }
        fn set_power_cap(&mut self, _: PowerDomain, _: PowerLimit) -> Result<()> {
            Ok(())
        }
        fn power_caps(&self) -> PowerCapConfig {
            PowerCapConfig::default()
        }
        fn begin(&mut self) -> Result<()> {
            Ok(())
        }
        fn read_watts(&mut self, _: f64) -> DomainWatts {
            self.calls += 1;
            DomainWatts {
                processor: self.calls.is_multiple_of(2).then_some(50.0),
                dram: Some(5.0),
            }
        }
    }

    #[test]
    fn failed_reads_leave_gaps() {
        let mut sampler = Sampler::start(shared(Flaky { calls: 0 }), 20).unwrap();
        std::thread::sleep(Duration::from_millis(130));
        let trace = sampler.stop();
        let dram = trace.domain(PowerDomain::Dram).count() as u64;
        let proc = trace.domain(PowerDomain::Processor).count() as u64;
        assert!(dram >= 4);
        assert_eq!(sampler.failures(), dram - proc);
        assert!(trace.validate().is_ok());
    }
}
