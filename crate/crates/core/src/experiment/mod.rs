//! Sweep runner: executes (app x unique_words x cap x rep) matrices, writes
//! result rows and per-run power traces, and feeds the summarizer and plotter.
//!
//! Cells run one at a time. With the `rapl` backend a live sampler polls the
//! hardware counters while the workload runs. With the `sim` backend the
//! workload still runs for real (its counts and shuffle volume are genuine),
//! but time and power come from the model: counted work is turned into stage
//! durations, dilated by the cap, and sampled on the same grid a live sampler
//! would use.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::miniapps::{run_app, AppRun, MiniApp};
use crate::power::rapl::RaplBackend;
use crate::power::sampler::{shared, Sampler};
use crate::power::sim::{SimPowerModel, SimTimeline, SimWork, Stage};
use crate::power::{
    integrate_energy, set_power_cap, PowerCapConfig, PowerLimit, PowerTrace, DEFAULT_SAMPLE_MS,
};

pub mod plot;
pub mod results;
pub mod summary;

pub use results::{ResultRow, TraceFile, TraceMeta};

pub const DEFAULT_BUFFER_KVS: usize = 4096;
pub const DEFAULT_REPS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Sim,
    Rapl,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Sim => "sim",
            BackendKind::Rapl => "rapl",
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "rapl" => Ok(BackendKind::Rapl),
            other => Err(Error::Usage(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub apps: Vec<MiniApp>,
    pub spec: DatasetSpec,
    /// Replaces `spec.unique_words` with each value in turn.
    #[serde(default)]
    pub unique_words_sweep: Option<Vec<u64>>,
    pub ranks: usize,
    #[serde(default = "default_buffer")]
    pub buffer_capacity: usize,
    pub caps: Vec<PowerCapConfig>,
    pub backend: BackendKind,
    #[serde(default)]
    pub sim_model: SimPowerModel,
    /// Overrides the powercap root for the rapl backend.
    #[serde(default)]
    pub powercap_root: Option<PathBuf>,
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default = "default_sample_ms")]
    pub sample_ms: u64,
    pub out: PathBuf,
    /// Defaults to `<out without extension>_traces`.
    #[serde(default)]
    pub trace_dir: Option<PathBuf>,
}

fn default_buffer() -> usize {
    DEFAULT_BUFFER_KVS
}

fn default_reps() -> u32 {
    DEFAULT_REPS
}

fn default_sample_ms() -> u64 {
    DEFAULT_SAMPLE_MS
}

impl ExperimentConfig {
    /// A sim-backend config with the defaults for everything optional.
    pub fn new(
        apps: Vec<MiniApp>,
        spec: DatasetSpec,
        ranks: usize,
        caps: Vec<PowerLimit>,
        out: impl Into<PathBuf>,
    ) -> Self {
        ExperimentConfig {
            apps,
            spec,
            unique_words_sweep: None,
            ranks,
            buffer_capacity: DEFAULT_BUFFER_KVS,
            caps: caps.into_iter().map(PowerCapConfig::processor).collect(),
            backend: BackendKind::Sim,
            sim_model: SimPowerModel::default(),
            powercap_root: None,
            reps: DEFAULT_REPS,
            sample_ms: DEFAULT_SAMPLE_MS,
            out: out.into(),
            trace_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.apps.is_empty() {
            return Err(Error::Config("no apps selected".into()));
        }
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.caps.is_empty() {
            return Err(Error::Config(
                "at least one cap (possibly none) is required".into(),
            ));
        }
        for cap in &self.caps {
            cap.processor.validate()?;
            cap.dram.validate()?;
        }
        if self.ranks < 1 {
            return Err(Error::Config("ranks must be at least 1".into()));
        }
        if self.buffer_capacity < 1 {
            return Err(Error::Config("buffer capacity must be at least 1".into()));
        }
        if self.sample_ms < 1 {
            return Err(Error::Config(
                "sample interval must be at least 1 ms".into(),
            ));
        }
        if matches!(&self.unique_words_sweep, Some(s) if s.is_empty()) {
            return Err(Error::Config("unique-words sweep is empty".into()));
        }
        for unique_words in self.unique_words_values() {
            DatasetSpec {
                unique_words,
                ..self.spec
            }
            .validate()?;
        }
        if self.spec.total_words < self.ranks as u64 {
            return Err(Error::Config(format!(
                "total_words ({}) is smaller than ranks ({})",
                self.spec.total_words, self.ranks
            )));
        }
        self.sim_model.validate()
    }

    pub fn unique_words_values(&self) -> Vec<u64> {
        self.unique_words_sweep
            .clone()
            .unwrap_or_else(|| vec![self.spec.unique_words])
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.trace_dir.clone().unwrap_or_else(|| {
            let stem = self
                .out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".into());
            self.out.with_file_name(format!("{stem}_traces"))
        })
    }
}

/// One run's measurements before they are flattened into a row.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: ResultRow,
    pub trace: PowerTrace,
    pub run: AppRun,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub app: MiniApp,
    pub unique_words: u64,
    pub cap: PowerLimit,
    pub rep: u32,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixReport {
    pub rows: Vec<ResultRow>,
    pub trace_files: Vec<PathBuf>,
    pub failures: Vec<CellFailure>,
}

/// Live power source for one matrix.
enum Backend {
    Sim(SimPowerModel),
    Rapl(crate::power::sampler::SharedBackend),
}

impl Backend {
    fn open(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.backend {
            BackendKind::Sim => Ok(Backend::Sim(cfg.sim_model)),
            BackendKind::Rapl => {
                let opened = match &cfg.powercap_root {
                    Some(root) => RaplBackend::open(root),
                    None => RaplBackend::open_default(),
                };
                match opened {
                    Ok(backend) => Ok(Backend::Rapl(shared(backend))),
                    Err(Error::Capability { message }) => Err(Error::Capability {
                        message: format!("{message} (use --backend sim to run without RAPL)"),
                    }),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

/// Runs every cell of the matrix and writes the CSV and trace files.
///
/// Backend problems abort before the first run; a failing cell is recorded
/// in the report and the remaining cells still run.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixReport> {
    cfg.validate()?;
    let backend = Backend::open(cfg)?;
    let trace_dir = cfg.trace_dir();
    let mut writer = results::ResultWriter::create(&cfg.out)?;
    let mut report = MatrixReport::default();

    for &app in &cfg.apps {
        for unique_words in cfg.unique_words_values() {
            let spec = DatasetSpec {
                unique_words,
                ..cfg.spec
            };
            for cap in &cfg.caps {
                for rep in 1..=cfg.reps {
                    match run_cell(cfg, &backend, app, &spec, cap, rep) {
                        Ok(cell) => {
                            writer.write(&cell.row)?;
                            let file = TraceFile {
                                meta: TraceMeta {
                                    app,
                                    backend: cfg.backend.as_str().into(),
                                    unique_words,
                                    cap: cap.processor,
                                    rep,
                                    plot: rep == 1,
                                },
                                trace: cell.trace,
                            };
                            report
                                .trace_files
                                .push(results::write_trace_file(&trace_dir, &file)?);
                            report.rows.push(cell.row);
                        }
                        Err(e) => {
                            log::error!(
                                "{app} U={unique_words} cap={} rep={rep}: {e}",
                                cap.processor
                            );
                            report.failures.push(CellFailure {
                                app,
                                unique_words,
                                cap: cap.processor,
                                rep,
                                message: e.to_string(),
                            });
                        }
                    }
                }
            }
        }
    }
    writer.flush()?;

    if let Backend::Rapl(shared) = &backend {
        let mut guard = shared.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = set_power_cap(&mut *guard, &PowerCapConfig::default()) {
            log::warn!("could not restore power limits: {e}");
        }
    }
    Ok(report)
}

fn run_cell(
    cfg: &ExperimentConfig,
    backend: &Backend,
    app: MiniApp,
    spec: &DatasetSpec,
    cap: &PowerCapConfig,
    rep: u32,
) -> Result<CellResult> {
    match backend {
        Backend::Sim(model) => {
            let run = run_app(app, spec, cfg.ranks, cfg.buffer_capacity)?;
            let timeline = sim_timeline(model, app, &run, cap);
            let trace = timeline.sample(cfg.sample_ms)?;
            let energy = integrate_energy(&trace);
            let row = ResultRow {
                app,
                backend: cfg.backend.as_str().into(),
                total_words: spec.total_words,
                unique_words: spec.unique_words,
                seed: spec.seed,
                ranks: cfg.ranks,
                cap_w: cap.processor.to_string(),
                rep,
                runtime_ms: timeline.duration_ms(),
                map_ms: timeline.stage_duration_ms(Stage::Map),
                shuffle_ms: timeline.stage_duration_ms(Stage::Shuffle),
                reduce_ms: timeline.stage_duration_ms(Stage::Reduce),
                proc_energy_j: energy.processor_j,
                dram_energy_j: energy.dram_j,
                dram_fraction: energy.dram_fraction,
                shuffle_kvs: run.metrics.shuffle_kv_count,
                shuffle_bytes: run.metrics.shuffle_bytes,
                flush_count: run.metrics.flush_count,
                avg_fill_ratio: run.metrics.avg_buffer_fill_ratio,
            };
            Ok(CellResult { row, trace, run })
        }
        Backend::Rapl(shared_backend) => {
            {
                let mut guard = shared_backend.lock().unwrap_or_else(|p| p.into_inner());
                set_power_cap(&mut *guard, cap)?;
            }
            let mut sampler = Sampler::start(shared_backend.clone(), cfg.sample_ms)?;
            let started = Instant::now();
            let run = run_app(app, spec, cfg.ranks, cfg.buffer_capacity);
            let runtime_ms = started.elapsed().as_secs_f64() * 1000.0;
            let trace = sampler.stop();
            let failures = sampler.failures();
            if failures > 0 {
                log::warn!("{app} rep {rep}: {failures} power readings failed");
            }
            let run = run?;
            let energy = integrate_energy(&trace);
            let row = ResultRow {
                app,
                backend: cfg.backend.as_str().into(),
                total_words: spec.total_words,
                unique_words: spec.unique_words,
                seed: spec.seed,
                ranks: cfg.ranks,
                cap_w: cap.processor.to_string(),
                rep,
                runtime_ms,
                map_ms: run.metrics.map_ms,
                shuffle_ms: run.metrics.shuffle_ms,
                reduce_ms: run.metrics.reduce_ms,
                proc_energy_j: energy.processor_j,
                dram_energy_j: energy.dram_j,
                dram_fraction: energy.dram_fraction,
                shuffle_kvs: run.metrics.shuffle_kv_count,
                shuffle_bytes: run.metrics.shuffle_bytes,
                flush_count: run.metrics.flush_count,
                avg_fill_ratio: run.metrics.avg_buffer_fill_ratio,
            };
            Ok(CellResult { row, trace, run })
        }
    }
}

/// Stage timeline the sim model assigns to a finished run.
pub fn sim_timeline(
    model: &SimPowerModel,
    app: MiniApp,
    run: &AppRun,
    cap: &PowerCapConfig,
) -> SimTimeline {
    let m = &run.metrics;
    let work = SimWork {
        map_kvs: m.map_kv_count,
        combined: app.combiner_enabled(),
        shuffle_kvs: m.shuffle_kv_count,
        flushes: m.flush_count,
        reduce_kvs: if app.runs_reduce() {
            m.shuffle_kv_count
        } else {
            0
        },
    };
    SimTimeline::build(model, &model.base_durations(&work), cap)
}

/// Runs one sim-backend cell without touching the filesystem.
pub fn run_sim_cell(
    cfg: &ExperimentConfig,
    app: MiniApp,
    spec: &DatasetSpec,
    cap: &PowerCapConfig,
    rep: u32,
) -> Result<CellResult> {
    cfg.validate()?;
    run_cell(cfg, &Backend::Sim(cfg.sim_model), app, spec, cap, rep)
}
