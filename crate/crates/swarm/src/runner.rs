//! `run`: build a topology and scenario, simulate, write artifacts.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_core::async_sim::{run_async, AsyncError, AsyncScenario, DelayKind, DelayModel, DEFAULT_EVENT_CAP};
use swarm_core::protocol::{Awareness, ConflictMode};
use swarm_core::sync::{run_observed, HistogramRow, RoundOutcome, RoundVerdict, RunResult, SimError};
use swarm_core::topology::{generate, GnomeId, GraphKind, Topology, TopologyError, EXACT_DIAMETER_LIMIT};

use crate::atomic::{write_atomic, AtomicFile};
use crate::edgelist::{read_edge_list, EdgeListError};
use crate::formats::{self, HistogramJson, HistogramWriter, RoundJson, Summary, TraceWriter};
use crate::scenario::{ScenarioError, ScenarioFile};

/// Where the topology comes from when no scenario file provides one.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Generate { kind: GraphKind, n: usize, d: u32, seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposerSel {
    Id(u32),
    Random,
    MaxEccentricity,
}

impl std::str::FromStr for ProposerSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(ProposerSel::Random),
            "max-eccentricity" => Ok(ProposerSel::MaxEccentricity),
            id => id
                .parse()
                .map(ProposerSel::Id)
                .map_err(|_| format!("proposer must be a gnome id, `random` or `max-eccentricity`, not `{id}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: Option<TopologySource>,
    pub scenario: Option<PathBuf>,
    pub engine: Engine,
    pub tau_max: Option<f64>,
    pub delay: Option<DelayKind>,
    pub duration: Option<f64>,
    pub proposer: ProposerSel,
    pub mode: ConflictMode,
    pub format: OutputFormat,
    pub out: PathBuf,
    pub max_turns: Option<i64>,
    pub trace: bool,
    /// Seeds proposer selection and message delays.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(out: PathBuf) -> Self {
        RunConfig {
            topology: None,
            scenario: None,
            engine: Engine::Sync,
            tau_max: None,
            delay: None,
            duration: None,
            proposer: ProposerSel::Id(0),
            mode: ConflictMode::Plain,
            format: OutputFormat::Csv,
            out,
            max_turns: None,
            trace: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let usage = |m: &str| Err(RunError::Config(m.to_string()));
        if self.engine == Engine::Sync {
            if self.tau_max.is_some() || self.delay.is_some() || self.duration.is_some() {
                return usage("--tau-max, --delay and --duration only apply to --engine async");
            }
        } else if self.max_turns.is_some() {
            return usage("--max-turns only applies to --engine sync");
        }
        if let Some(t) = self.tau_max {
            if !(t > 0.0 && t.is_finite()) {
                return usage("--tau-max must be a positive number of seconds");
            }
        }
        if self.topology.is_none() && self.scenario.is_none() {
            return usage("give a topology (--kind/--n/--d or --topology) or a --scenario");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    EdgeList { path: PathBuf, source: EdgeListError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Async(#[from] AsyncError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Confused = 2,
    Timeout = 3,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub line: String,
    pub exit: Exit,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

pub fn load_topology(src: &TopologySource) -> Result<Topology, RunError> {
    match src {
        TopologySource::Generate { kind, n, d, seed } => Ok(generate(*kind, *n, *d, *seed)?),
        TopologySource::File(path) => {
            let f = std::fs::File::open(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            read_edge_list(io::BufReader::new(f))
                .map_err(|source| RunError::EdgeList { path: path.clone(), source })
        }
    }
}

/// Exact farthest gnome for small swarms; for large ones a double sweep:
/// the gnome farthest from the gnome farthest from 0.
pub fn pick_proposer(topo: &Topology, sel: ProposerSel, seed: u64) -> Result<GnomeId, RunError> {
    match sel {
        ProposerSel::Id(i) => {
            topo.check(GnomeId(i))?;
            Ok(GnomeId(i))
        }
        ProposerSel::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(GnomeId(rng.random_range(0..topo.len() as u32)))
        }
        ProposerSel::MaxEccentricity if topo.len() <= EXACT_DIAMETER_LIMIT => Ok(topo.most_eccentric()),
        ProposerSel::MaxEccentricity => {
            let far = |from: GnomeId| {
                let dist = topo.distances_from(from);
                let mut best = 0;
                for (i, &x) in dist.iter().enumerate() {
                    if x != u32::MAX && x > dist[best] {
                        best = i;
                    }
                }
                GnomeId(best as u32)
            };
            Ok(far(far(GnomeId(0))))
        }
    }
}

/// Spread of the levels of non-confused participants, unaware counting `-1`.
fn spread(alphas: impl Iterator<Item = Awareness>) -> i64 {
    let (lo, hi) = alphas
        .filter(|a| *a != Awareness::Confused)
        .map(Awareness::level)
        .fold((i64::MAX, i64::MIN), |(lo, hi), l| (lo.min(l), hi.max(l)));
    if lo > hi {
        0
    } else {
        hi - lo
    }
}

fn verdict_name(v: &RoundVerdict) -> &'static str {
    match v {
        RoundVerdict::Consensus { .. } => "consensus",
        RoundVerdict::Confused => "confused",
        RoundVerdict::Split => "split",
        RoundVerdict::NoAction => "no-action",
        RoundVerdict::Timeout => "timeout",
    }
}

fn consensus_of(r: &RoundOutcome) -> Option<i64> {
    match r.verdict {
        RoundVerdict::Consensus { turn, .. } => Some(turn),
        _ => None,
    }
}

/// Headline and exit status from a synchronous result.
pub fn sync_outcome(res: &RunResult) -> (String, Exit, &'static str) {
    let Some(first) = res.first_round() else {
        return ("TIMEOUT (no proposal)".into(), Exit::Timeout, "timeout");
    };
    match first.verdict {
        RoundVerdict::Consensus { turn, .. } => (format!("consensus at turn {turn}"), Exit::Ok, "consensus"),
        RoundVerdict::Timeout => ("TIMEOUT".into(), Exit::Timeout, "timeout"),
        RoundVerdict::Split => ("SPLIT".into(), Exit::Confused, "split"),
        RoundVerdict::Confused | RoundVerdict::NoAction => {
            let head = if first.verdict == RoundVerdict::Confused { "CONFUSED" } else { "NO ACTION" };
            let retry = res.rounds.iter().skip(1).find_map(|r| consensus_of(r).map(|t| (t, t - r.start_turn)));
            match retry {
                Some((t, k)) => (
                    format!("{head}; retry round consensus at turn {t} (+{k})"),
                    Exit::Confused,
                    "confused",
                ),
                None => (format!("{head}; no retry consensus"), Exit::Confused, "confused"),
            }
        }
    }
}

fn resolve(cfg: &RunConfig) -> Result<(Topology, ScenarioFile), RunError> {
    let file = match &cfg.scenario {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    let base = cfg
        .scenario
        .as_ref()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let topo = match (&file.topology, &cfg.topology) {
        (Some(spec), _) => spec.build(&base)?,
        (None, Some(src)) => load_topology(src)?,
        (None, None) => return Err(RunError::Config("the scenario names no topology; pass one on the command line".into())),
    };
    Ok((topo, file))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let (topo, file) = resolve(cfg)?;
    execute(cfg, &topo, &file)
}

/// `run` on a topology already in memory; `cfg.topology` and
/// `cfg.scenario` are ignored.
pub fn run_on(cfg: &RunConfig, topo: &Topology) -> Result<RunReport, RunError> {
    let mut c = cfg.clone();
    c.topology = None;
    c.scenario = Some(PathBuf::new());
    c.validate()?;
    execute(cfg, topo, &ScenarioFile::default())
}

fn execute(cfg: &RunConfig, topo: &Topology, file: &ScenarioFile) -> Result<RunReport, RunError> {
    let proposer = pick_proposer(topo, cfg.proposer, cfg.seed)?;
    match cfg.engine {
        Engine::Sync => run_sync(cfg, topo, file, proposer),
        Engine::Async => run_async_cmd(cfg, topo, file, proposer),
    }
}

fn run_sync(cfg: &RunConfig, topo: &Topology, file: &ScenarioFile, proposer: GnomeId) -> Result<RunReport, RunError> {
    let mut sc = file.apply(topo, proposer, cfg.mode).map_err(RunError::Config)?;
    if let Some(m) = cfg.max_turns {
        sc.max_turns = m;
    }
    let mode = sc.mode;
    let (n, d) = (topo.len(), topo.d_bound());
    let mut files = Vec::new();
    let trace_path = cfg.out.join("trace.csv");
    let hist_path = cfg.out.join("histogram.csv");
    let mut trace = if cfg.trace {
        Some(TraceWriter::new(AtomicFile::create(&trace_path)?, n, d)?)
    } else {
        None
    };
    let mut hist = match cfg.format {
        OutputFormat::Csv => Some(HistogramWriter::new(AtomicFile::create(&hist_path)?, n, d)?),
        OutputFormat::Json => None,
    };
    let mut rows: Vec<HistogramRow> = Vec::new();
    let mut max_spread = 0;
    let mut cumulative = 0;
    let mut failed: Option<io::Error> = None;
    // nothing is kept in memory: every turn goes straight to disk
    let res = run_observed(sc, |t| {
        cumulative += t.messages_sent;
        let row = HistogramRow::from_alphas(t.turn, t.participants().map(|p| p.1), d, cumulative);
        max_spread = max_spread.max(spread(t.participants().map(|p| p.1)));
        if failed.is_none() {
            let r = trace
                .as_mut()
                .map_or(Ok(()), |w| w.push(t))
                .and_then(|_| hist.as_mut().map_or(Ok(()), |w| w.push(&row)));
            failed = r.err();
        }
        rows.push(row);
        false
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    if let Some(w) = trace {
        w.finish()?.commit()?;
        files.push(trace_path);
    }
    if let Some(w) = hist {
        w.finish()?.commit()?;
        files.push(hist_path);
    }
    if !res.violations.is_empty() || file.sanity != crate::scenario::SanityName::Off {
        let p = cfg.out.join("violations.csv");
        write_atomic(&p, |w| formats::write_violations(w, n, d, &res.violations))?;
        files.push(p);
    }
    if !res.announces.is_empty() {
        let p = cfg.out.join("announces.csv");
        write_atomic(&p, |w| formats::write_announces(w, n, d, &res.announces))?;
        files.push(p);
    }

    let (head, exit, outcome) = sync_outcome(&res);
    let line = format!("{head}; messages {}; max alpha spread {max_spread}", res.total_messages);
    let mut violations = BTreeMap::new();
    for v in &res.violations {
        *violations.entry(v.rule.label().to_string()).or_insert(0) += 1;
    }
    let summary = Summary {
        gnomes: n,
        d_bound: d,
        engine: "sync".into(),
        mode: mode.name().into(),
        outcome: outcome.into(),
        consensus_turn: res.consensus_turn(),
        consensus_tau: None,
        total_messages: res.total_messages,
        max_alpha_spread: max_spread,
        violations,
        rounds: res
            .rounds
            .iter()
            .map(|r| RoundJson {
                index: r.index,
                start_turn: r.start_turn,
                resolved_turn: r.resolved_turn,
                verdict: verdict_name(&r.verdict).into(),
                consensus_turn: consensus_of(r),
                actors: r.actors(),
                confused: r.confused.len(),
            })
            .collect(),
        histogram: rows.iter().map(HistogramJson::from).collect(),
    };
    if cfg.format == OutputFormat::Json {
        let p = cfg.out.join("summary.json");
        write_atomic(&p, |w| formats::write_summary(w, &summary))?;
        files.push(p);
    }
    Ok(RunReport { line, exit, summary, files })
}

fn run_async_cmd(cfg: &RunConfig, topo: &Topology, file: &ScenarioFile, proposer: GnomeId) -> Result<RunReport, RunError> {
    if file.proposers.len() > 1 || file.jokers.len() > 1 || !file.churn.is_empty() {
        return Err(RunError::Config(
            "the async engine takes one proposer, at most one joker and no churn".into(),
        ));
    }
    if file.proposers.first().is_some_and(|p| p.turn != 0) {
        return Err(RunError::Config("the async proposer must start at turn 0".into()));
    }
    let proposer = file.proposers.first().map_or(proposer, |p| GnomeId(p.gnome));
    topo.check(proposer)?;
    let tau = cfg.tau_max.unwrap_or(1.0);
    let delay = DelayModel { kind: cfg.delay.unwrap_or(DelayKind::Uniform), tau_max: tau, seed: cfg.seed };
    let mut sc = AsyncScenario::honest(topo, proposer, delay);
    if let Some(dur) = cfg.duration {
        sc.duration = dur;
    }
    sc.joker = file.jokers.first().map(|j| j.to_script()).transpose().map_err(RunError::Config)?;
    sc.event_cap = DEFAULT_EVENT_CAP;
    let tr = run_async(&sc)?;
    let (n, d) = (topo.len(), topo.d_bound());
    let mut files = Vec::new();
    if cfg.trace {
        let p = cfg.out.join("events.csv");
        write_atomic(&p, |w| formats::write_async_events(w, &tr))?;
        files.push(p);
    }
    let grid = tr.grid();
    let max_spread = grid.iter().map(|&t| spread(tr.alphas_at(t).into_iter())).max().unwrap_or(0);
    let confused = tr.events.iter().any(|e| e.alpha == Awareness::Confused);
    let consensus = tr.consensus_time();
    let (head, exit, outcome) = match (consensus, confused) {
        (Some(t), false) => (format!("consensus at tau {t}"), Exit::Ok, "consensus"),
        (_, true) => ("CONFUSED".to_string(), Exit::Confused, "confused"),
        (None, false) => ("TIMEOUT".to_string(), Exit::Timeout, "timeout"),
    };
    let line = format!("{head}; messages {}; max alpha spread {max_spread}", tr.messages);
    // per-turn view: samples at whole multiples of tau_max
    let turns = (tr.duration / tau + 1e-9) as i64;
    let histogram = (0..=turns)
        .map(|k| HistogramJson::from(&HistogramRow::from_alphas(k, tr.alphas_at(k as f64 * tau), d, 0)))
        .collect();
    let summary = Summary {
        gnomes: n,
        d_bound: d,
        engine: "async".into(),
        mode: "plain".into(),
        outcome: outcome.into(),
        consensus_turn: None,
        consensus_tau: consensus,
        total_messages: tr.messages,
        max_alpha_spread: max_spread,
        violations: BTreeMap::new(),
        rounds: Vec::new(),
        histogram,
    };
    match cfg.format {
        OutputFormat::Csv => {
            let p = cfg.out.join("mu.csv");
            write_atomic(&p, |w| formats::write_mu_table(w, &tr))?;
            files.push(p);
        }
        OutputFormat::Json => {
            let p = cfg.out.join("summary.json");
            write_atomic(&p, |w| formats::write_summary(w, &summary))?;
            files.push(p);
        }
    }
    Ok(RunReport { line, exit, summary, files })
}

/// `histogram`: rebuild the per-turn table from a trace file.
pub fn cmd_histogram(trace: &Path, out: &Path) -> Result<usize, RunError> {
    let f = std::fs::File::open(trace)?;
    let tf = formats::read_trace(io::BufReader::new(f)).map_err(|e| RunError::Config(format!("{}: {e}", trace.display())))?;
    let rows = tf.histogram();
    write_atomic(out, |w| formats::write_histogram(w, tf.gnomes, tf.d_bound, &rows))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_cfg(dir: &Path) -> RunConfig {
        let mut c = RunConfig::new(dir.to_path_buf());
        c.topology = Some(TopologySource::Generate { kind: GraphKind::Path, n: 3, d: 2, seed: 0 });
        c.proposer = ProposerSel::MaxEccentricity;
        c
    }

    #[test]
    fn three_path_headline() {
        let dir = tempfile::tempdir().unwrap();
        let r = cmd_run(&path_cfg(dir.path())).unwrap();
        assert!(r.line.starts_with("consensus at turn 4;"), "{}", r.line);
        assert_eq!(r.exit, Exit::Ok);
        assert_eq!(r.summary.consensus_turn, Some(4));
    }

    #[test]
    fn inconsistent_flags_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = path_cfg(dir.path());
        c.tau_max = Some(1.0);
        assert!(matches!(cmd_run(&c), Err(RunError::Config(_))));
        let mut c = path_cfg(dir.path());
        c.topology = None;
        assert!(matches!(cmd_run(&c), Err(RunError::Config(_))));
    }

    #[test]
    fn double_sweep_finds_a_path_end() {
        let topo = generate(GraphKind::Path, 5000, 4999, 0).unwrap();
        let g = pick_proposer(&topo, ProposerSel::MaxEccentricity, 0).unwrap();
        assert_eq!(topo.eccentricity(g).unwrap(), 4999);
    }

    #[test]
    fn spread_ignores_confusion() {
        use Awareness::*;
        assert_eq!(spread([Confused, Radius(3), Unaware].into_iter()), 4);
        assert_eq!(spread([Confused].into_iter()), 0);
    }
}
