//! SVG power-over-time plots.
//!
//! One panel per (app, unique_words). Each trace adds a processor curve
//! (solid) and a DRAM curve (dashed) in the colour of its cap. A sample is
//! drawn as a flat step across the interval it covers; missing samples break
//! the curve rather than being interpolated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::results::TraceFile;
use crate::miniapps::MiniApp;
use crate::power::{PowerDomain, PowerLimit, PowerTrace};

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// A flat run of power: `(start_s, end_s, watts)`.
pub type Step = (f64, f64, f64);

/// Contiguous step runs of one domain. A gap in the samples starts a new run.
pub fn step_runs(trace: &PowerTrace, domain: PowerDomain) -> Vec<Vec<Step>> {
    let mut samples: Vec<_> = trace.domain(domain).collect();
    samples.sort_by_key(|s| s.t_ms);
    let interval = trace.interval_ms;
    let mut runs: Vec<Vec<Step>> = Vec::new();
    let mut next_t: Option<u64> = None;
    for s in samples {
        let step = (
            s.t_ms as f64 / 1000.0,
            (s.t_ms + interval) as f64 / 1000.0,
            s.watts,
        );
        match runs.last_mut() {
            Some(run) if next_t == Some(s.t_ms) => run.push(step),
            _ => runs.push(vec![step]),
        }
        next_t = Some(s.t_ms + interval);
    }
    runs
}

fn nice_step(span: f64) -> f64 {
    if span.is_nan() || span <= 0.0 {
        return 1.0;
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn cap_label(cap: PowerLimit) -> String {
    match cap {
        PowerLimit::Unlimited => "uncapped".into(),
        PowerLimit::Watts(w) => format!("cap {} W", fmt_num(w)),
    }
}

fn cap_order(cap: PowerLimit) -> f64 {
    // Uncapped first, then descending watts.
    match cap {
        PowerLimit::Unlimited => f64::NEG_INFINITY,
        PowerLimit::Watts(w) => -w,
    }
}

fn app_order(app: MiniApp) -> usize {
    MiniApp::ALL
        .iter()
        .position(|a| *a == app)
        .unwrap_or(usize::MAX)
}

struct Scale {
    x_max: f64,
    y_max: f64,
    top: f64,
}

impl Scale {
    fn x(&self, t_s: f64) -> f64 {
        LEFT + t_s / self.x_max * (PANEL_W - LEFT - RIGHT)
    }
    fn y(&self, watts: f64) -> f64 {
        self.top + TOP + (1.0 - watts / self.y_max) * (PANEL_H - TOP - BOTTOM)
    }
}

fn step_path(runs: &[Vec<Step>], scale: &Scale) -> String {
    let mut d = String::new();
    for run in runs {
        let mut level: Option<f64> = None;
        for &(t0, t1, w) in run {
            let y = fmt_num(scale.y(w));
            match level {
                None => {
                    let _ = write!(d, "M{} {}", fmt_num(scale.x(t0)), y);
                }
                Some(prev) if prev != w => {
                    let _ = write!(d, "V{y}");
                }
                Some(_) => {}
            }
            level = Some(w);
            let _ = write!(d, "H{}", fmt_num(scale.x(t1)));
        }
    }
    d
}

/// Renders the traces as a standalone SVG document. Output depends only on
/// the input, so identical traces give identical bytes.
pub fn render_power_plot(traces: &[TraceFile]) -> String {
    let mut panels: BTreeMap<(usize, u64), Vec<&TraceFile>> = BTreeMap::new();
    for t in traces {
        panels
            .entry((app_order(t.meta.app), t.meta.unique_words))
            .or_default()
            .push(t);
    }
    for list in panels.values_mut() {
        list.sort_by(|a, b| {
            cap_order(a.meta.cap)
                .total_cmp(&cap_order(b.meta.cap))
                .then(a.meta.rep.cmp(&b.meta.rep))
        });
    }

    let height = PANEL_H * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{h}" viewBox="0 0 {PANEL_W} {h}" font-family="sans-serif" font-size="11">"#,
        h = fmt_num(height)
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if panels.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text class="warning" x="{}" y="{}" text-anchor="middle">no traces to plot</text>"#,
            PANEL_W / 2.0,
            PANEL_H / 2.0
        );
    }
    for (i, list) in panels.values().enumerate() {
        render_panel(&mut svg, list, i as f64 * PANEL_H);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, traces: &[&TraceFile], top: f64) {
    let first = &traces[0].meta;
    let end_s = traces
        .iter()
        .map(|t| t.trace.end_ms() as f64 / 1000.0)
        .fold(0.0, f64::max);
    let peak = traces
        .iter()
        .flat_map(|t| t.trace.samples.iter().map(|s| s.watts))
        .fold(0.0, f64::max);
    let x_step = nice_step(end_s);
    let y_step = nice_step(peak * 1.1);
    let scale = Scale {
        x_max: ((end_s / x_step).ceil() * x_step).max(x_step),
        y_max: ((peak * 1.1 / y_step).ceil() * y_step).max(y_step),
        top,
    };
    let (x0, x1) = (LEFT, PANEL_W - RIGHT);
    let (y0, y1) = (scale.y(0.0), scale.y(scale.y_max));

    let _ = writeln!(
        svg,
        r#"<g class="panel" data-app="{}" data-unique-words="{}">"#,
        first.app, first.unique_words
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13">{} (U={})</text>"#,
        fmt_num(LEFT),
        fmt_num(top + 20.0),
        first.app,
        first.unique_words
    );
    let _ = writeln!(
        svg,
        r##"<path class="axis" d="M{a} {b}V{c}H{d}" fill="none" stroke="#333"/>"##,
        a = fmt_num(x0),
        b = fmt_num(y1),
        c = fmt_num(y0),
        d = fmt_num(x1)
    );
    let mut t = 0.0;
    while t <= scale.x_max + x_step * 1e-9 {
        let x = fmt_num(scale.x(t));
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_num(y0 + 14.0),
            fmt_num(t)
        );
        t += x_step;
    }
    let mut w = 0.0;
    while w <= scale.y_max + y_step * 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt_num(x0 - 6.0),
            fmt_num(scale.y(w) + 4.0),
            fmt_num(w)
        );
        w += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        fmt_num((x0 + x1) / 2.0),
        fmt_num(y0 + 32.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">power (W)</text>"#,
        y = fmt_num((y0 + y1) / 2.0)
    );

    let mut legend_y = top + TOP + 4.0;
    for (i, tf) in traces.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let label = cap_label(tf.meta.cap);
        if tf.trace.is_empty() {
            let _ = writeln!(
                svg,
                r#"<text class="warning" x="{}" y="{}" fill="{colour}">no samples for {label} (rep {})</text>"#,
                fmt_num(x0 + 8.0),
                fmt_num(y1 + 14.0 * (i as f64 + 1.0)),
                tf.meta.rep
            );
            continue;
        }
        for (domain, dash) in [
            (PowerDomain::Processor, ""),
            (PowerDomain::Dram, r#" stroke-dasharray="6 4""#),
        ] {
            let runs = step_runs(&tf.trace, domain);
            if runs.is_empty() {
                continue;
            }
            let _ = writeln!(
                svg,
                r#"<path class="curve" data-domain="{domain}" data-cap="{}" d="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
                tf.meta.cap,
                step_path(&runs, &scale)
            );
            let lx = x1 + 12.0;
            let _ = writeln!(
                svg,
                r#"<path d="M{} {y}H{}" stroke="{colour}" stroke-width="1.5"{dash}/><text class="legend" x="{}" y="{}">{label} {domain}</text>"#,
                fmt_num(lx),
                fmt_num(lx + 24.0),
                fmt_num(lx + 30.0),
                fmt_num(legend_y + 4.0),
                y = fmt_num(legend_y),
            );
            legend_y += 16.0;
        }
    }
    svg.push_str("</g>\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::results::TraceMeta;
    use crate::power::sim::{SimPowerModel, SimTimeline, Stage};
    use crate::power::PowerCapConfig;

    fn file(app: MiniApp, cap: PowerLimit, trace: PowerTrace) -> TraceFile {
        TraceFile {
            meta: TraceMeta {
                app,
                backend: "sim".into(),
                unique_words: 72,
                cap,
                rep: 1,
                plot: true,
            },
            trace,
        }
    }

    fn constant(interval: u64, n: u64, proc_w: f64, dram_w: f64) -> PowerTrace {
        let mut t = PowerTrace::new(interval);
        for k in 0..n {
            t.push(k * interval, PowerDomain::Processor, proc_w);
            t.push(k * interval, PowerDomain::Dram, dram_w);
        }
        t
    }

    fn curves(svg: &str) -> Vec<&str> {
        svg.lines()
            .filter(|l| l.contains(r#"class="curve""#))
            .collect()
    }

    fn path_d(line: &str) -> &str {
        let start = line.find(" d=\"").unwrap() + 4;
        let end = start + line[start..].find('"').unwrap();
        &line[start..end]
    }

    #[test]
    fn constant_trace_draws_two_horizontal_lines() {
        let svg = render_power_plot(&[file(
            MiniApp::MapShuffle,
            PowerLimit::Unlimited,
            constant(100, 10, 100.0, 10.0),
        )]);
        let lines = curves(&svg);
        assert_eq!(lines.len(), 2);
        for line in &lines {
            let d = path_d(line);
            assert_eq!(d.matches('M').count(), 1, "{d}");
            // A constant level never changes height.
            assert!(!d.contains('V'), "{d}");
        }
        assert!(lines[1].contains("stroke-dasharray"));
        assert!(!lines[0].contains("stroke-dasharray"));
    }

    #[test]
    fn three_caps_give_six_curves() {
        let traces: Vec<TraceFile> = [
            PowerLimit::Watts(120.0),
            PowerLimit::Unlimited,
            PowerLimit::Watts(140.0),
        ]
        .into_iter()
        .map(|cap| {
            file(
                MiniApp::GroupByKey,
                cap,
                constant(100, 5, cap.as_watts().unwrap_or(160.0), 12.0),
            )
        })
        .collect();
        let svg = render_power_plot(&traces);
        let lines = curves(&svg);
        assert_eq!(lines.len(), 6);
        assert!(lines[0].contains(r#"data-cap="none""#));
        assert!(lines[2].contains(r#"data-cap="140""#));
        assert!(lines[4].contains(r#"data-cap="120""#));
        for label in [
            "uncapped processor",
            "cap 140 W dram",
            "cap 120 W processor",
        ] {
            assert!(svg.contains(label), "missing legend {label}");
        }
    }

    #[test]
    fn sim_run_steps_follow_model() {
        let model = SimPowerModel::default();
        let cap = PowerCapConfig::processor(PowerLimit::Watts(140.0));
        let timeline = SimTimeline::build(
            &model,
            &[
                (Stage::Map, 300.0),
                (Stage::Shuffle, 200.0),
                (Stage::Reduce, 500.0),
            ],
            &cap,
        );
        let trace = timeline.sample(100).unwrap();
        let runs = step_runs(&trace, PowerDomain::Dram);
        assert_eq!(runs.len(), 1);
        for &(t0, t1, w) in &runs[0] {
            assert!((t1 - t0 - 0.1).abs() < 1e-12);
            let seg = timeline.segment_at(t0 * 1000.0).unwrap();
            assert_eq!(w, seg.dram_watts);
        }
        let levels: Vec<f64> = runs[0].iter().map(|s| s.2).collect();
        let mut distinct = levels.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 3, "{levels:?}");
        let svg = render_power_plot(&[file(MiniApp::GroupByKey, PowerLimit::Watts(140.0), trace)]);
        let dram = curves(&svg)[1];
        assert_eq!(path_d(dram).matches('V').count(), distinct.len() - 1);
    }

    #[test]
    fn gaps_break_curve() {
        let mut t = PowerTrace::new(100);
        for k in [0, 1, 3, 4] {
            t.push(k * 100, PowerDomain::Processor, 50.0);
        }
        let runs = step_runs(&t, PowerDomain::Processor);
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1][0], (0.3, 0.4, 50.0));
        let svg = render_power_plot(&[file(MiniApp::MapShuffle, PowerLimit::Unlimited, t)]);
        assert_eq!(path_d(curves(&svg)[0]).matches('M').count(), 2);
    }

    #[test]
    fn empty_inputs_are_annotated() {
        let svg = render_power_plot(&[file(
            MiniApp::MapShuffle,
            PowerLimit::Unlimited,
            PowerTrace::new(100),
        )]);
        assert!(svg.contains(r#"class="warning""#));
        assert!(curves(&svg).is_empty());
        assert!(render_power_plot(&[]).contains("no traces"));
    }

    #[test]
    fn deterministic_bytes_and_panels() {
        let traces = vec![
            file(
                MiniApp::ReduceByKey,
                PowerLimit::Unlimited,
                constant(100, 3, 90.0, 9.0),
            ),
            file(
                MiniApp::MapShuffle,
                PowerLimit::Unlimited,
                constant(100, 4, 80.0, 8.0),
            ),
        ];
        let a = render_power_plot(&traces);
        assert_eq!(a, render_power_plot(&traces));
        assert_eq!(a.matches(r#"<g class="panel""#).count(), 2);
        assert!(a.find("map_shuffle (U=72)").unwrap() < a.find("reduce_by_key (U=72)").unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(nice_step(176.0), 50.0);
        assert_eq!(nice_step(0.0), 1.0);
    }
}
