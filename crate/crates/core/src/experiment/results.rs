//! CSV persistence for result rows and power traces.
//!
//! Both file kinds start with a `# schema=1` comment line. Trace files carry
//! further `# key=value` comment lines describing the run they belong to.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miniapps::MiniApp;
use crate::power::{PowerDomain, PowerLimit, PowerTrace};

pub const SCHEMA_LINE: &str = "# schema=1";

pub const RESULT_HEADER: [&str; 19] = [
    "app",
    "backend",
    "total_words",
    "unique_words",
    "seed",
    "ranks",
    "cap_w",
    "rep",
    "runtime_ms",
    "map_ms",
    "shuffle_ms",
    "reduce_ms",
    "proc_energy_j",
    "dram_energy_j",
    "dram_fraction",
    "shuffle_kvs",
    "shuffle_bytes",
    "flush_count",
    "avg_fill_ratio",
];

/// One CSV row: a single (app, dataset, cap, rep) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub app: MiniApp,
    pub backend: String,
    pub total_words: u64,
    pub unique_words: u64,
    pub seed: u64,
    pub ranks: usize,
    /// `none` or watts.
    pub cap_w: String,
    pub rep: u32,
    pub runtime_ms: f64,
    pub map_ms: f64,
    pub shuffle_ms: f64,
    pub reduce_ms: f64,
    pub proc_energy_j: f64,
    pub dram_energy_j: f64,
    pub dram_fraction: f64,
    pub shuffle_kvs: u64,
    pub shuffle_bytes: u64,
    pub flush_count: u64,
    pub avg_fill_ratio: f64,
}

impl ResultRow {
    pub fn total_energy_j(&self) -> f64 {
        self.proc_energy_j + self.dram_energy_j
    }

    pub fn cap(&self) -> Result<PowerLimit> {
        self.cap_w.parse()
    }
}

pub struct ResultWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl ResultWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        ResultWriter::new(BufWriter::new(file))
    }
}

impl<W: Write> ResultWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{SCHEMA_LINE}").map_err(|e| Error::io("result csv", e))?;
        let mut inner = csv_writer(out);
        inner.write_record(RESULT_HEADER)?;
        Ok(ResultWriter { inner })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("result csv", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::io("result csv", e.into_error()))
    }
}

// Headers are written explicitly; serialize must not add its own.
fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out)
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_HEADER {
        return Err(Error::Parse(format!("unexpected result header {header:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_results(BufReader::new(file))
}

/// Which run a trace file belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub app: MiniApp,
    pub backend: String,
    pub unique_words: u64,
    pub cap: PowerLimit,
    pub rep: u32,
    /// Set on the first replication; only flagged traces are plotted by default.
    pub plot: bool,
}

impl TraceMeta {
    pub fn file_name(&self) -> String {
        format!(
            "{}_u{}_cap{}_rep{}.csv",
            self.app, self.unique_words, self.cap, self.rep
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub meta: TraceMeta,
    pub trace: PowerTrace,
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    t_ms: u64,
    domain: PowerDomain,
    watts: f64,
}

pub fn write_trace<W: Write>(mut out: W, file: &TraceFile) -> Result<()> {
    let m = &file.meta;
    let io = |e| Error::io("trace csv", e);
    writeln!(out, "{SCHEMA_LINE}").map_err(io)?;
    writeln!(out, "# app={}", m.app).map_err(io)?;
    writeln!(out, "# backend={}", m.backend).map_err(io)?;
    writeln!(out, "# unique_words={}", m.unique_words).map_err(io)?;
    writeln!(out, "# cap_w={}", m.cap).map_err(io)?;
    writeln!(out, "# rep={}", m.rep).map_err(io)?;
    writeln!(out, "# plot={}", u8::from(m.plot)).map_err(io)?;
    writeln!(out, "# interval_ms={}", file.trace.interval_ms).map_err(io)?;
    let mut writer = csv_writer(out);
    writer.write_record(["t_ms", "domain", "watts"])?;
    for s in &file.trace.samples {
        writer.serialize(TraceRecord {
            t_ms: s.t_ms,
            domain: s.domain,
            watts: s.watts,
        })?;
    }
    writer.flush().map_err(io)?;
    Ok(())
}

pub fn write_trace_file(dir: &Path, file: &TraceFile) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(file.meta.file_name());
    let out = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_trace(BufWriter::new(out), file)?;
    Ok(path)
}

pub fn read_trace<R: Read>(input: R) -> Result<TraceFile> {
    let mut text = String::new();
    let mut reader = BufReader::new(input);
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io("trace csv", e))?;

    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines() {
        let Some(comment) = line.strip_prefix('#') else {
            continue;
        };
        if let Some((k, v)) = comment.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let field = |key: &str| {
        meta.get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("trace is missing `# {key}=`")))
    };
    let number = |key: &str| -> Result<u64> {
        field(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("trace field {key} is not an integer")))
    };
    if field("schema")? != "1" {
        return Err(Error::Parse("unsupported trace schema".into()));
    }
    let trace_meta = TraceMeta {
        app: field("app")?.parse()?,
        backend: field("backend")?.to_string(),
        unique_words: number("unique_words")?,
        cap: field("cap_w")?.parse()?,
        rep: number("rep")? as u32,
        plot: field("plot")? == "1",
    };
    let mut trace = PowerTrace::new(number("interval_ms")?);
    for record in csv_reader(text.as_bytes()).deserialize::<TraceRecord>() {
        let r = record?;
        trace.push(r.t_ms, r.domain, r.watts);
    }
    Ok(TraceFile {
        meta: trace_meta,
        trace,
    })
}

pub fn read_trace_file(path: &Path) -> Result<TraceFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(file)
}

/// Reads every `*.csv` trace in `dir`, sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<TraceFile>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trace_file(p)).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn row(app: MiniApp, cap: &str, rep: u32) -> ResultRow {
        ResultRow {
            app,
            backend: "sim".into(),
            total_words: 1000,
            unique_words: 72,
            seed: 1,
            ranks: 4,
            cap_w: cap.into(),
            rep,
            runtime_ms: 1234.5,
            map_ms: 100.0,
            shuffle_ms: 200.25,
            reduce_ms: 0.0,
            proc_energy_j: 16.0,
            dram_energy_j: 1.5,
            dram_fraction: 1.5 / 17.5,
            shuffle_kvs: 1000,
            shuffle_bytes: 14000,
            flush_count: 8,
            avg_fill_ratio: 0.5,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut w = ResultWriter::new(Vec::new()).unwrap();
        w.write(&row(MiniApp::GroupByKey, "none", 1)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema=1"));
        assert_eq!(lines.next(), Some(RESULT_HEADER.join(",").as_str()));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("group_by_key,sim,1000,72,1,4,none,1,"));
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            row(MiniApp::MapShuffle, "none", 1),
            row(MiniApp::ReduceByKey, "140", 2),
        ];
        let mut w = ResultWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        assert_eq!(read_results(&bytes[..]).unwrap(), rows);
        assert_eq!(rows[1].cap().unwrap(), PowerLimit::Watts(140.0));
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "# schema=1\napp,backend\nx,y\n";
        assert!(matches!(
            read_results(text.as_bytes()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn trace_round_trip() {
        let mut trace = PowerTrace::new(100);
        trace.push(0, PowerDomain::Processor, 160.0);
        trace.push(0, PowerDomain::Dram, 17.5);
        trace.push(100, PowerDomain::Processor, 120.25);
        let file = TraceFile {
            meta: TraceMeta {
                app: MiniApp::GroupByKey,
                backend: "sim".into(),
                unique_words: 72,
                cap: PowerLimit::Watts(120.0),
                rep: 1,
                plot: true,
            },
            trace,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &file).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema=1\n"));
        assert!(text.contains("t_ms,domain,watts\n0,processor,160.0\n"));
        assert_eq!(read_trace(&buf[..]).unwrap(), file);
        assert_eq!(file.meta.file_name(), "group_by_key_u72_cap120_rep1.csv");
    }
}
