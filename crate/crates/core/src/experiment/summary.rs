//! Pairwise comparisons over result rows.
//!
//! Rows are grouped by dataset and cap. Within a group each app is reduced to
//! the median of its replications, then:
//!
//! * reduce-stage overhead = (group_by_key - map_shuffle) / map_shuffle
//! * combiner savings      = (group_by_key - reduce_by_key) / group_by_key
//! * movement reduction    = shuffle_kvs(group_by_key) / shuffle_kvs(reduce_by_key)
//!
//! for runtime and total (processor + DRAM) energy. A missing comparator
//! leaves the dependent columns empty instead of failing the summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::results::ResultRow;
use crate::miniapps::MiniApp;

/// Rows sharing one dataset and cap.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub backend: String,
    pub total_words: u64,
    pub unique_words: u64,
    pub seed: u64,
    pub ranks: usize,
    pub cap_w: String,
}

impl GroupKey {
    fn of(row: &ResultRow) -> Self {
        GroupKey {
            backend: row.backend.clone(),
            total_words: row.total_words,
            unique_words: row.unique_words,
            seed: row.seed,
            ranks: row.ranks,
            cap_w: row.cap_w.clone(),
        }
    }
}

/// Median runtime, energy and shuffle volume of one app within a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppStats {
    pub runtime_ms: f64,
    pub energy_j: f64,
    pub shuffle_kvs: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: GroupKey,
    pub map_shuffle: Option<AppStats>,
    pub group_by_key: Option<AppStats>,
    pub reduce_by_key: Option<AppStats>,
    pub reduce_overhead_runtime_pct: Option<f64>,
    pub reduce_overhead_energy_pct: Option<f64>,
    pub combiner_savings_runtime_pct: Option<f64>,
    pub combiner_savings_energy_pct: Option<f64>,
    pub joules_saved: Option<f64>,
    pub movement_reduction: Option<f64>,
    pub dram_fraction_min: f64,
    pub dram_fraction_max: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

fn app_stats(rows: &[&ResultRow], app: MiniApp) -> Option<AppStats> {
    let mine: Vec<&&ResultRow> = rows.iter().filter(|r| r.app == app).collect();
    let med = |f: &dyn Fn(&ResultRow) -> f64| {
        let mut v: Vec<f64> = mine.iter().map(|r| f(r)).collect();
        median(&mut v)
    };
    Some(AppStats {
        runtime_ms: med(&|r| r.runtime_ms)?,
        energy_j: med(&|r| r.total_energy_j())?,
        shuffle_kvs: med(&|r| r.shuffle_kvs as f64)?,
        reps: mine.len(),
    })
}

/// `(larger - base) / base` as a percentage.
pub fn overhead_pct(base: f64, larger: f64) -> Option<f64> {
    (base != 0.0).then(|| (larger - base) / base * 100.0)
}

/// `(reference - improved) / reference` as a percentage.
pub fn savings_pct(reference: f64, improved: f64) -> Option<f64> {
    (reference != 0.0).then(|| (reference - improved) / reference * 100.0)
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups.entry(GroupKey::of(row)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(key, rows)| {
            let ms = app_stats(&rows, MiniApp::MapShuffle);
            let gbk = app_stats(&rows, MiniApp::GroupByKey);
            let rbk = app_stats(&rows, MiniApp::ReduceByKey);
            let pair = |a: Option<AppStats>, b: Option<AppStats>| a.zip(b);
            let fractions = rows.iter().map(|r| r.dram_fraction);
            SummaryRow {
                reduce_overhead_runtime_pct: pair(ms, gbk)
                    .and_then(|(m, g)| overhead_pct(m.runtime_ms, g.runtime_ms)),
                reduce_overhead_energy_pct: pair(ms, gbk)
                    .and_then(|(m, g)| overhead_pct(m.energy_j, g.energy_j)),
                combiner_savings_runtime_pct: pair(gbk, rbk)
                    .and_then(|(g, r)| savings_pct(g.runtime_ms, r.runtime_ms)),
                combiner_savings_energy_pct: pair(gbk, rbk)
                    .and_then(|(g, r)| savings_pct(g.energy_j, r.energy_j)),
                joules_saved: pair(gbk, rbk).map(|(g, r)| g.energy_j - r.energy_j),
                movement_reduction: pair(gbk, rbk).and_then(|(g, r)| {
                    (r.shuffle_kvs > 0.0).then(|| g.shuffle_kvs / r.shuffle_kvs)
                }),
                dram_fraction_min: fractions.clone().fold(f64::INFINITY, f64::min),
                dram_fraction_max: fractions.fold(f64::NEG_INFINITY, f64::max),
                key,
                map_shuffle: ms,
                group_by_key: gbk,
                reduce_by_key: rbk,
            }
        })
        .collect()
}

fn cell(value: Option<f64>, precision: usize) -> String {
    match value {
        Some(v) => format!("{v:.precision$}"),
        None => "-".to_string(),
    }
}

/// Fixed-width text table, one line per group.
pub fn render_table(summary: &[SummaryRow]) -> String {
    let header = [
        "backend",
        "N",
        "U",
        "seed",
        "R",
        "cap_w",
        "reduce_ovh_rt%",
        "reduce_ovh_E%",
        "comb_save_rt%",
        "comb_save_E%",
        "joules_saved",
        "move_red",
        "dram_frac",
    ];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for s in summary {
        lines.push(vec![
            s.key.backend.clone(),
            s.key.total_words.to_string(),
            s.key.unique_words.to_string(),
            s.key.seed.to_string(),
            s.key.ranks.to_string(),
            s.key.cap_w.clone(),
            cell(s.reduce_overhead_runtime_pct, 1),
            cell(s.reduce_overhead_energy_pct, 1),
            cell(s.combiner_savings_runtime_pct, 1),
            cell(s.combiner_savings_energy_pct, 1),
            cell(s.joules_saved, 1),
            cell(s.movement_reduction, 2),
            format!("{:.3}-{:.3}", s.dram_fraction_min, s.dram_fraction_max),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    }
    out
}
