//! CSV export of simulation traces and comparison reports.
//!
//! A trace file holds three tables, each introduced by a marker line:
//!
//! ```text
//! # samples
//! t,x1,..,xn,u1,..,um
//! # events
//! k,t_k,i_k,interval,J_1,..,J_M,cond_a_1,..,cond_a_M,cond_b_1,..,cond_b_M
//! # summary
//! mode,transmissions,cumulative_stage_cost
//! ```
//!
//! Reals use scientific notation with 12 significant digits. A `J_i` cell
//! is empty when pattern `i` was infeasible or not solved; condition cells
//! are `1`/`0`, or empty when not evaluated.

use std::io::Write;

use crate::error::{Error, Result};
use crate::simulator::SimulationTrace;

pub const SAMPLES_MARKER: &str = "# samples";
pub const EVENTS_MARKER: &str = "# events";
pub const SUMMARY_MARKER: &str = "# summary";

pub fn fmt_real(v: f64) -> String {
    // −0 prints as 0 so that equal traces are byte-identical
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.11e}")
}

fn fmt_flag(v: Option<bool>) -> String {
    match v {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    }
}

pub fn samples_header(n: usize, m: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|j| format!("x{j}")))
        .chain((1..=m).map(|j| format!("u{j}")))
        .collect()
}

pub fn events_header(patterns: usize) -> Vec<String> {
    ["k", "t_k", "i_k", "interval"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=patterns).map(|i| format!("J_{i}")))
        .chain((1..=patterns).map(|i| format!("cond_a_{i}")))
        .chain((1..=patterns).map(|i| format!("cond_b_{i}")))
        .collect()
}

pub fn summary_header() -> Vec<String> {
    vec!["mode".into(), "transmissions".into(), "cumulative_stage_cost".into()]
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(out)
}

pub fn write_trace<W: Write>(trace: &SimulationTrace, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record([SAMPLES_MARKER])?;
    w.write_record(samples_header(trace.state_dim, trace.input_dim))?;
    for s in &trace.samples {
        let row: Vec<String> = std::iter::once(s.t)
            .chain(s.x.iter().copied())
            .chain(s.u.iter().copied())
            .map(fmt_real)
            .collect();
        w.write_record(&row)?;
    }

    w.write_record([EVENTS_MARKER])?;
    w.write_record(events_header(trace.patterns))?;
    for e in &trace.events {
        let mut row = vec![
            e.k.to_string(),
            fmt_real(e.t),
            e.pattern.to_string(),
            fmt_real(e.interval),
        ];
        row.extend(e.costs.iter().map(|c| c.map(fmt_real).unwrap_or_default()));
        row.extend(e.conditions.iter().map(|c| fmt_flag(c.map(|c| c.cost_slack))));
        row.extend(e.conditions.iter().map(|c| fmt_flag(c.map(|c| c.decrease))));
        w.write_record(&row)?;
    }

    w.write_record([SUMMARY_MARKER])?;
    w.write_record(summary_header())?;
    w.write_record([
        trace.mode.label().to_string(),
        trace.transmissions.to_string(),
        fmt_real(trace.cumulative_stage_cost),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(trace: &SimulationTrace) -> Result<String> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
}

/// Raw tables of a trace file: header followed by rows, all as strings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceTables {
    pub samples: Vec<Vec<String>>,
    pub events: Vec<Vec<String>>,
    pub summary: Vec<Vec<String>>,
}

pub fn read_trace_tables(text: &str) -> Result<TraceTables> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut tables = TraceTables::default();
    let mut current: Option<&mut Vec<Vec<String>>> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        match fields.first().map(String::as_str) {
            Some(SAMPLES_MARKER) => current = Some(&mut tables.samples),
            Some(EVENTS_MARKER) => current = Some(&mut tables.events),
            Some(SUMMARY_MARKER) => current = Some(&mut tables.summary),
            _ => match current.as_mut() {
                Some(t) => t.push(fields),
                None => return Err(Error::invalid("trace data before the first marker")),
            },
        }
    }
    Ok(tables)
}

/// One line of a comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    /// `None` for the periodic baseline.
    pub beta: Option<f64>,
    pub transmissions: usize,
    pub cumulative_stage_cost: f64,
    /// First time after which `‖x‖` stays below the threshold.
    pub settling_time: Option<f64>,
}

pub fn compare_header() -> Vec<String> {
    ["label", "beta", "transmissions", "cumulative_stage_cost", "settling_time"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn write_comparison<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(compare_header())?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.beta.map(fmt_real).unwrap_or_default(),
            r.transmissions.to_string(),
            fmt_real(r.cumulative_stage_cost),
            r.settling_time.map(fmt_real).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn comparison_text(rows: &[CompareRow], threshold: f64) -> String {
    let mut s = format!(
        "{:<16} {:>10} {:>14} {:>22} {:>18}\n",
        "run",
        "beta",
        "transmissions",
        "cumulative cost",
        format!("t(|x|<{threshold})")
    );
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>10} {:>14} {:>22.10} {:>18}\n",
            r.label,
            r.beta.map(|b| format!("{b}")).unwrap_or_else(|| "-".into()),
            r.transmissions,
            r.cumulative_stage_cost,
            r.settling_time
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "never".into()),
        ));
    }
    s
}
