use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use framechain::engine::{parse_log, LogEvent, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// One timed span of one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRow {
    pub worker: usize,
    pub plugin_index: usize,
    pub plugin_name: String,
    pub phase: Phase,
    pub start_us: u64,
    pub duration_us: u64,
}

pub fn execute(path: &Path, format: Format) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let events = parse_log(&text).map_err(|e| anyhow!("malformed log: {e}"))?;
    if events.is_empty() {
        println!("no events");
        return Ok(());
    }
    let rows = rows(&events);
    match format {
        Format::Csv => print!("{}", csv(&rows)),
        Format::Text => print!("{}", gantt(&rows, 60)),
    }
    Ok(())
}

/// Rows grouped by worker, each group in time order.
pub fn rows(events: &[LogEvent]) -> Vec<ProfileRow> {
    let mut rows: Vec<ProfileRow> = events
        .iter()
        .map(|e| ProfileRow {
            worker: e.worker,
            plugin_index: e.plugin_index,
            plugin_name: e.plugin_name.clone(),
            phase: e.phase,
            start_us: e.timestamp_us,
            duration_us: e.duration_us,
        })
        .collect();
    rows.sort_by_key(|r| (r.worker, r.start_us, r.plugin_index, r.phase.rank()));
    rows
}

pub fn csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("worker,plugin_index,plugin_name,phase,start_us,duration_us\n");
    for r in rows {
        let name = if r.plugin_name.contains([',', '"']) {
            format!("\"{}\"", r.plugin_name.replace('"', "\"\""))
        } else {
            r.plugin_name.clone()
        };
        let _ = writeln!(out, "{},{},{},{},{},{}", r.worker, r.plugin_index, name, r.phase, r.start_us, r.duration_us);
    }
    out
}

fn glyph(phase: Phase) -> char {
    match phase {
        Phase::Setup => 's',
        Phase::Pre => '<',
        Phase::Load => 'L',
        Phase::Process => 'P',
        Phase::Write => 'W',
        Phase::Post => '>',
    }
}

fn fmt_us(us: u64) -> String {
    if us >= 1_000_000 {
        format!("{:.2} s", us as f64 / 1e6)
    } else if us >= 1_000 {
        format!("{:.2} ms", us as f64 / 1e3)
    } else {
        format!("{us} us")
    }
}

/// Text timeline: one lane per worker, one bar per plugin, scaled to the
/// full run span.
pub fn gantt(rows: &[ProfileRow], width: usize) -> String {
    let start = rows.iter().map(|r| r.start_us).min().unwrap_or(0);
    let end = rows.iter().map(|r| r.start_us + r.duration_us).max().unwrap_or(0);
    let span = (end - start).max(1);
    let col = |t: u64| (((t - start) as u128 * width as u128) / span as u128).min(width as u128 - 1) as usize;

    let mut lanes: BTreeMap<usize, BTreeMap<usize, (String, Vec<&ProfileRow>)>> = BTreeMap::new();
    for r in rows {
        lanes
            .entry(r.worker)
            .or_default()
            .entry(r.plugin_index)
            .or_insert_with(|| (r.plugin_name.clone(), Vec::new()))
            .1
            .push(r);
    }
    let name_w = rows.iter().map(|r| r.plugin_name.len()).max().unwrap_or(0);

    let mut out = String::new();
    let _ = writeln!(out, "total {}  (s setup, < pre, L load, P process, W write, > post)", fmt_us(span));
    for (worker, plugins) in &lanes {
        let _ = writeln!(out, "worker {worker}");
        for (index, (name, spans)) in plugins {
            let mut bar = vec![' '; width];
            let mut totals: BTreeMap<u8, (Phase, u64)> = BTreeMap::new();
            for r in spans {
                let (a, b) = (col(r.start_us), col(r.start_us + r.duration_us));
                for c in &mut bar[a..=b] {
                    if *c == ' ' || r.duration_us > 0 {
                        *c = glyph(r.phase);
                    }
                }
                totals.entry(r.phase.rank() * 8 + r.phase as u8).or_insert((r.phase, 0)).1 += r.duration_us;
            }
            let busy: u64 = totals.values().map(|t| t.1).sum();
            let detail: Vec<String> = totals.values().filter(|t| t.1 > 0).map(|(p, d)| format!("{p} {}", fmt_us(*d))).collect();
            let bar: String = bar.into_iter().collect();
            let _ = writeln!(out, "  {index:>3} {name:<name_w$} |{bar}| {}  [{}]", fmt_us(busy), detail.join(", "));
        }
    }
    out
}
