use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrcap::dataset::DatasetSpec;
use mrcap::experiment::plot::render_power_plot;
use mrcap::experiment::results::{read_results_file, read_trace_dir};
use mrcap::experiment::summary::{render_table, summarize};
use mrcap::experiment::{run_matrix, BackendKind, ExperimentConfig};
use mrcap::miniapps::MiniApp;
use mrcap::power::sim::SimPowerModel;
use mrcap::power::{PowerCapConfig, PowerLimit, DEFAULT_SAMPLE_MS};
use mrcap::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mrcap",
    version,
    about = "MapReduce mini-app power-cap benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an (app x unique_words x cap x rep) matrix and write a result CSV.
    Run(RunArgs),
    /// Print reduce-overhead and combiner-savings comparisons for a result CSV.
    Summarize { csv: PathBuf },
    /// Render power traces to an SVG file.
    Plot {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only plot this app.
        #[arg(long)]
        app: Option<MiniApp>,
        /// Plot every replication, not just the first.
        #[arg(long)]
        all_reps: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// map_shuffle, group_by_key, reduce_by_key or all.
    #[arg(long, default_value = "all")]
    app: String,
    #[arg(long, default_value_t = 1_000_000)]
    total_words: u64,
    #[arg(long, default_value_t = 72, conflicts_with = "unique_words_sweep")]
    unique_words: u64,
    #[arg(long, value_delimiter = ',')]
    unique_words_sweep: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    ranks: usize,
    #[arg(long, default_value_t = mrcap::experiment::DEFAULT_BUFFER_KVS)]
    buffer_kvs: usize,
    /// Processor caps in watts, or `none`.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    caps: Vec<PowerLimit>,
    #[arg(long, default_value = "sim")]
    backend: BackendKind,
    /// TOML file overriding the sim power model.
    #[arg(long)]
    sim_model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_MS)]
    sample_ms: u64,
    #[arg(long, default_value_t = mrcap::experiment::DEFAULT_REPS)]
    reps: u32,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

fn parse_apps(arg: &str) -> Result<Vec<MiniApp>> {
    if arg == "all" {
        return Ok(MiniApp::ALL.to_vec());
    }
    arg.split(',').map(str::parse).collect()
}

fn run(args: RunArgs) -> Result<()> {
    let sim_model = match &args.sim_model {
        Some(path) => SimPowerModel::load(path)?,
        None => SimPowerModel::default(),
    };
    let cfg = ExperimentConfig {
        apps: parse_apps(&args.app)?,
        spec: DatasetSpec::new(args.total_words, args.unique_words, args.seed),
        unique_words_sweep: args.unique_words_sweep,
        ranks: args.ranks,
        buffer_capacity: args.buffer_kvs,
        caps: args
            .caps
            .into_iter()
            .map(PowerCapConfig::processor)
            .collect(),
        backend: args.backend,
        sim_model,
        // RaplBackend::open_default honours MRCAP_POWERCAP_ROOT.
        powercap_root: None,
        reps: args.reps,
        sample_ms: args.sample_ms,
        out: args.out,
        trace_dir: args.trace_dir,
    };
    let report = run_matrix(&cfg)?;
    eprintln!(
        "wrote {} rows to {} and {} traces to {}",
        report.rows.len(),
        cfg.out.display(),
        report.trace_files.len(),
        cfg.trace_dir().display()
    );
    if report.failures.is_empty() {
        return Ok(());
    }
    for f in &report.failures {
        eprintln!(
            "failed: {} U={} cap={} rep={}: {}",
            f.app, f.unique_words, f.cap, f.rep, f.message
        );
    }
    Err(Error::Invariant(format!(
        "{} of {} runs failed",
        report.failures.len(),
        report.failures.len() + report.rows.len()
    )))
}

fn plot(traces: PathBuf, out: PathBuf, app: Option<MiniApp>, all_reps: bool) -> Result<()> {
    let files: Vec<_> = read_trace_dir(&traces)?
        .into_iter()
        .filter(|t| all_reps || t.meta.plot)
        .filter(|t| app.is_none_or(|a| t.meta.app == a))
        .collect();
    if files.is_empty() {
        eprintln!("warning: no traces selected from {}", traces.display());
    }
    std::fs::write(&out, render_power_plot(&files)).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Summarize { csv } => {
            print!("{}", render_table(&summarize(&read_results_file(&csv)?)));
            Ok(())
        }
        Command::Plot {
            traces,
            out,
            app,
            all_reps,
        } => plot(traces, out, app, all_reps),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mrcap: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
