//! CSV and JSON artifacts.
//!
//! Every CSV starts with a `#` comment line carrying the swarm size and the
//! diameter bound, followed by a header row. Awareness values are written as
//! `C` (confused), `U` (unaware) or the radius.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use swarm_core::adversary::ViolationEvent;
use swarm_core::async_sim::AsyncTrace;
use swarm_core::protocol::{Announce, Awareness, Subject};
use swarm_core::sync::{HistogramRow, TurnTrace};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("missing `# gnomes=N d_bound=D` comment line")]
    NoPreamble,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn preamble(w: &mut dyn Write, n: usize, d: u32) -> io::Result<()> {
    writeln!(w, "# gnomes={n} d_bound={d}")
}

fn parse_preamble(line: &str) -> Option<(usize, u32)> {
    let rest = line.trim().strip_prefix('#')?;
    let mut n = None;
    let mut d = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("gnomes", v)) => n = v.parse().ok(),
            Some(("d_bound", v)) => d = v.parse().ok(),
            _ => {}
        }
    }
    Some((n?, d?))
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Streams a per-gnome trace, one row per gnome and turn. Gnomes outside
/// the swarm on a turn get no row.
pub struct TraceWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut w: W, n: usize, d: u32) -> io::Result<Self> {
        preamble(&mut w, n, d)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["turn", "gnome", "alpha"]).map_err(csv_err)?;
        Ok(TraceWriter { csv })
    }

    pub fn push(&mut self, turn: &TurnTrace) -> io::Result<()> {
        let t = turn.turn.to_string();
        for (g, a) in turn.participants() {
            self.csv
                .write_record([t.as_str(), &g.to_string(), &a.to_string()])
                .map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.csv.flush()?;
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

/// A trace read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub gnomes: usize,
    pub d_bound: u32,
    /// Turn number and the awareness of each gnome present on that turn.
    pub turns: Vec<(i64, Vec<(u32, Awareness)>)>,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    turn: i64,
    gnome: u32,
    alpha: String,
}

pub fn read_trace(mut r: impl BufRead) -> Result<TraceFile, FormatError> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let (gnomes, d_bound) = parse_preamble(&first).ok_or(FormatError::NoPreamble)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut turns: Vec<(i64, Vec<(u32, Awareness)>)> = Vec::new();
    let headers = rdr.headers()?.clone();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let row: TraceRow = rec.deserialize(Some(&headers))?;
        // `line` counts the preamble the csv reader never saw
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        let alpha: Awareness = row.alpha.parse().map_err(|_| FormatError::Malformed {
            line,
            msg: format!("bad awareness `{}`", row.alpha),
        })?;
        if row.gnome as usize >= gnomes {
            return Err(FormatError::Malformed {
                line,
                msg: format!("gnome {} outside 0..{gnomes}", row.gnome),
            });
        }
        match turns.last_mut() {
            Some((t, rows)) if *t == row.turn => rows.push((row.gnome, alpha)),
            Some((t, _)) if *t > row.turn => {
                return Err(FormatError::Malformed {
                    line,
                    msg: format!("turn {} after turn {t}", row.turn),
                })
            }
            _ => turns.push((row.turn, vec![(row.gnome, alpha)])),
        }
    }
    Ok(TraceFile { gnomes, d_bound, turns })
}

impl TraceFile {
    pub fn histogram(&self) -> Vec<HistogramRow> {
        self.turns
            .iter()
            .map(|(t, rows)| {
                HistogramRow::from_alphas(*t, rows.iter().map(|r| r.1), self.d_bound, 0)
            })
            .collect()
    }
}

pub fn histogram_header(d: u32) -> Vec<String> {
    let mut h = vec!["turn".to_string(), "pct_confused".into(), "pct_unaware".into()];
    h.extend((0..d).map(|k| format!("pct_alpha_{k}")));
    h.push("pct_alpha_ge_d".into());
    h.push("bottom_count".into());
    h
}

/// Per-turn histogram writer, fed incrementally.
pub struct HistogramWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> HistogramWriter<W> {
    pub fn new(mut w: W, n: usize, d: u32) -> io::Result<Self> {
        preamble(&mut w, n, d)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(histogram_header(d)).map_err(csv_err)?;
        Ok(HistogramWriter { csv })
    }

    pub fn push(&mut self, row: &HistogramRow) -> io::Result<()> {
        let mut rec = vec![row.turn.to_string()];
        rec.extend(row.percentages().iter().map(|p| format!("{p:.4}")));
        rec.push(row.bottom_count.to_string());
        self.csv.write_record(&rec).map_err(csv_err)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.csv.flush()?;
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

pub fn write_histogram(w: &mut dyn Write, n: usize, d: u32, rows: &[HistogramRow]) -> io::Result<()> {
    let mut hw = HistogramWriter::new(w, n, d)?;
    for r in rows {
        hw.push(r)?;
    }
    hw.finish()?;
    Ok(())
}

/// One parsed histogram row: turn, percentages, bottom count.
pub type HistogramLine = (i64, Vec<f64>, usize);

/// Reads a histogram CSV and checks it is well formed: the header matches
/// the declared bound and each row's percentages sum to 100.
pub fn read_histogram(mut r: impl BufRead) -> Result<(usize, u32, Vec<HistogramLine>), FormatError> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let (n, d) = parse_preamble(&first).ok_or(FormatError::NoPreamble)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != histogram_header(d) {
        return Err(FormatError::Malformed { line: 2, msg: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        let bad = |msg: &str| FormatError::Malformed { line, msg: msg.into() };
        let turn = rec[0].parse().map_err(|_| bad("bad turn"))?;
        let pct: Vec<f64> = (1..rec.len() - 1)
            .map(|i| rec[i].parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad percentage"))?;
        let sum: f64 = pct.iter().sum();
        if (sum - 100.0).abs() > 0.01 * pct.len() as f64 {
            return Err(bad("percentages do not sum to 100"));
        }
        let bottom = rec[rec.len() - 1].parse().map_err(|_| bad("bad bottom count"))?;
        rows.push((turn, pct, bottom));
    }
    Ok((n, d, rows))
}

pub fn write_announces(w: &mut dyn Write, n: usize, d: u32, announces: &[Announce]) -> io::Result<()> {
    preamble(w, n, d)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["turn", "sender", "pid", "alpha"]).map_err(csv_err)?;
    for a in announces {
        let (pid, alpha) = match a.subject {
            Subject::Proposal(p) => (p.0.to_string(), a.alpha.to_string()),
            Subject::Confusion => ("confusion".to_string(), Awareness::Confused.to_string()),
        };
        csv.write_record([a.turn.to_string(), a.sender.to_string(), pid, alpha])
            .map_err(csv_err)?;
    }
    csv.flush()
}

pub fn write_violations(w: &mut dyn Write, n: usize, d: u32, v: &[ViolationEvent]) -> io::Result<()> {
    preamble(w, n, d)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["turn", "detector", "violator", "rule"]).map_err(csv_err)?;
    for e in v {
        csv.write_record([
            e.turn.to_string(),
            e.detector.to_string(),
            e.violator.to_string(),
            e.rule.label().to_string(),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()
}

/// Event log of an asynchronous run: `tau,gnome,alpha`.
pub fn write_async_events(w: &mut dyn Write, tr: &AsyncTrace) -> io::Result<()> {
    preamble(w, tr.n, tr.d)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["tau", "gnome", "alpha"]).map_err(csv_err)?;
    for e in &tr.events {
        csv.write_record([format!("{}", e.tau), e.gnome.to_string(), e.alpha.to_string()])
            .map_err(csv_err)?;
    }
    csv.flush()
}

/// Bottom time sampled on the trace's grid: `tau,mu`.
pub fn write_mu_table(w: &mut dyn Write, tr: &AsyncTrace) -> io::Result<()> {
    preamble(w, tr.n, tr.d)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["tau", "mu"]).map_err(csv_err)?;
    for (tau, mu) in tr.mu_table() {
        let mu = if mu == i64::MIN { "C".to_string() } else { mu.to_string() };
        csv.write_record([format!("{tau}"), mu]).map_err(csv_err)?;
    }
    csv.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramJson {
    pub turn: i64,
    pub confused: usize,
    pub unaware: usize,
    pub radius: Vec<usize>,
    pub at_least_d: usize,
    pub bottom_count: usize,
    pub cumulative_messages: u64,
}

impl From<&HistogramRow> for HistogramJson {
    fn from(r: &HistogramRow) -> Self {
        HistogramJson {
            turn: r.turn,
            confused: r.confused,
            unaware: r.unaware,
            radius: r.radius.clone(),
            at_least_d: r.at_least_d,
            bottom_count: r.bottom_count,
            cumulative_messages: r.cumulative_messages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundJson {
    pub index: u32,
    pub start_turn: i64,
    pub resolved_turn: Option<i64>,
    pub verdict: String,
    pub consensus_turn: Option<i64>,
    pub actors: usize,
    pub confused: usize,
}

/// Compact run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub gnomes: usize,
    pub d_bound: u32,
    pub engine: String,
    pub mode: String,
    pub outcome: String,
    pub consensus_turn: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_tau: Option<f64>,
    pub total_messages: u64,
    pub max_alpha_spread: i64,
    pub violations: BTreeMap<String, usize>,
    pub rounds: Vec<RoundJson>,
    pub histogram: Vec<HistogramJson>,
}

pub fn write_summary(w: &mut dyn Write, s: &Summary) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, s)?;
    writeln!(w)
}
