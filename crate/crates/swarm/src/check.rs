//! `check`: randomized sweeps of the engine invariants.
//!
//! Every trial draws a graph kind, a size in `2..=n`, a seed and a proposer.
//! The first failing trial of a property is dumped as JSON that `run
//! --scenario` can replay (sync properties) or that records the async
//! parameters alongside.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use swarm_core::adversary::SanityMode;
use swarm_core::async_sim::{run_async, AsyncScenario, AsyncTrace, DelayModel};
use swarm_core::protocol::consensus_reached;
use swarm_core::sync::{oracle_alpha, run, RunResult, Scenario, TurnTrace};
use swarm_core::topology::{generate, GnomeId, GraphKind, Topology};

use crate::runner::{Engine, RunError};
use crate::scenario::{ProposerEntry, SanityName, ScenarioFile, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Oracle,
    Theorem1,
    Lemma3,
    Lemma4,
    SanityFp,
    Corollary,
    Lemma6,
    Lemma7,
    Theorem2,
    ConstDelay,
}

impl Property {
    pub const ALL: [Property; 10] = [
        Property::Oracle,
        Property::Theorem1,
        Property::Lemma3,
        Property::Lemma4,
        Property::SanityFp,
        Property::Corollary,
        Property::Lemma6,
        Property::Lemma7,
        Property::Theorem2,
        Property::ConstDelay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Oracle => "oracle",
            Property::Theorem1 => "theorem1",
            Property::Lemma3 => "lemma3",
            Property::Lemma4 => "lemma4",
            Property::SanityFp => "sanity-fp",
            Property::Corollary => "corollary",
            Property::Lemma6 => "lemma6",
            Property::Lemma7 => "lemma7",
            Property::Theorem2 => "theorem2",
            Property::ConstDelay => "const-delay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Property::ALL.into_iter().find(|p| p.name() == s)
    }

    /// The engine a property is stated for.
    pub fn engine(self) -> Engine {
        match self {
            Property::Oracle | Property::Theorem1 | Property::Lemma3 | Property::Lemma4 | Property::SanityFp => {
                Engine::Sync
            }
            _ => Engine::Async,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Largest swarm drawn.
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub tau_max: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { n: 200, trials: 50, seed: 0, tau_max: 1.0 }
    }
}

/// A failing trial, replayable from its fields.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub property: &'static str,
    pub trial: usize,
    pub detail: String,
    pub scenario: ScenarioFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub property: Property,
    pub trials: usize,
    pub failure: Option<Counterexample>,
}

fn log2_ceil(n: usize) -> u32 {
    usize::BITS - (n.max(1) - 1).leading_zeros()
}

/// A diameter bound every generator can meet for this kind and size.
pub fn feasible_bound(kind: GraphKind, n: usize) -> u32 {
    kind.natural_diameter(n)
        .unwrap_or(match kind {
            GraphKind::SmallWorld => 2 * log2_ceil(n) + 2,
            _ => log2_ceil(n) + 3,
        })
        .max(1)
}

struct Trial {
    topo: Topology,
    spec: TopologySpec,
    p: GnomeId,
    seed: u64,
}

fn draw(rng: &mut ChaCha8Rng, max_n: usize) -> Result<Trial, RunError> {
    let kind = GraphKind::ALL[rng.random_range(0..GraphKind::ALL.len())];
    let n = rng.random_range(2..=max_n.max(2));
    let seed: u64 = rng.random();
    let d = feasible_bound(kind, n);
    let topo = generate(kind, n, d, seed)?;
    let p = GnomeId(rng.random_range(0..n as u32));
    let spec = TopologySpec::Generated { kind: kind.name().into(), n, d, seed };
    Ok(Trial { topo, spec, p, seed })
}

fn honest(topo: &Topology, p: GnomeId, sanity: SanityMode) -> Result<RunResult, RunError> {
    let mut sc = Scenario::single(topo, p);
    sc.sanity = sanity;
    Ok(run(sc)?)
}

fn eccentricity(topo: &Topology, p: GnomeId) -> u32 {
    topo.eccentricity(p).expect("generated graphs are connected")
}

fn check_oracle(topo: &Topology, p: GnomeId, res: &RunResult) -> Result<(), String> {
    for t in &res.turns {
        if t.alpha != oracle_alpha(topo, p, t.turn as u32) {
            return Err(format!("engine and recurrence differ at turn {}", t.turn));
        }
    }
    Ok(())
}

fn check_theorem1(topo: &Topology, p: GnomeId, res: &RunResult) -> Result<(), String> {
    let d = topo.d_bound();
    let expect = (eccentricity(topo, p) + d) as i64;
    if expect > 2 * d as i64 {
        return Err(format!("eccentricity plus bound {expect} exceeds 2d"));
    }
    if res.consensus_turn() != Some(expect) {
        return Err(format!("consensus at {:?}, expected {expect}", res.consensus_turn()));
    }
    for t in &res.turns {
        let reached = t.alpha.iter().filter(|&&a| consensus_reached(a, d)).count();
        let want = if t.turn < expect { 0 } else { topo.len() };
        if reached != want {
            return Err(format!("{reached} gnomes at radius d on turn {}, expected {want}", t.turn));
        }
    }
    Ok(())
}

fn bottom_set(t: &TurnTrace) -> BTreeSet<u32> {
    t.participants()
        .filter(|(_, a)| a.level() == t.bottom_value)
        .map(|(g, _)| g.0)
        .collect()
}

fn check_lemma3(topo: &Topology, p: GnomeId, res: &RunResult) -> Result<(), String> {
    let r = eccentricity(topo, p) as i64;
    for w in res.turns.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.turn < r - 1 {
            continue;
        }
        if b.bottom_value != a.bottom_value + 1 {
            return Err(format!("bottom went {} -> {} at turn {}", a.bottom_value, b.bottom_value, b.turn));
        }
        let mut grown = bottom_set(a);
        for g in bottom_set(a) {
            grown.extend(topo.neighbors(GnomeId(g)).iter().map(|h| h.0));
        }
        if bottom_set(b) != grown || b.bottom_count != grown.len() {
            return Err(format!("bottom set at turn {} is not the neighborhood of the previous one", b.turn));
        }
    }
    Ok(())
}

fn check_lemma4(topo: &Topology, res: &RunResult, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let last = res.last_turn;
    for _ in 0..16 {
        let h = GnomeId(rng.random_range(0..topo.len() as u32));
        let k = rng.random_range(0..=last);
        let Some(a) = res.turn(k).and_then(|t| t.alpha[h.index()].radius()) else { continue };
        let l = rng.random_range(0..=a) as i64;
        let i = rng.random_range(0..=l.min(k));
        let past = &res.turn(k - i).expect("turn in range").alpha;
        for (e, &de) in topo.distances_from(h).iter().enumerate() {
            if (de as i64) <= i && past[e].level() < l - i {
                return Err(format!("alpha_{k}({h}) >= {l} but gnome {e} at distance {de} had {} at turn {}", past[e], k - i));
            }
        }
    }
    Ok(())
}

fn floor_div(a: f64, b: f64) -> i64 {
    (a / b + 1e-9).floor() as i64
}

/// The async guarantees on the sampling grid (and, for the spread bound,
/// at every event once all gnomes are aware).
pub fn check_async(prop: Property, topo: &Topology, tr: &AsyncTrace) -> Result<(), String> {
    let tau_max = tr.tau_max;
    let d = topo.d_bound() as i64;
    match prop {
        Property::Corollary | Property::Lemma6 | Property::Theorem2 => {
            for tau in tr.grid() {
                let mu = tr.bottom_time(tau);
                match prop {
                    Property::Corollary if mu < floor_div(tau, tau_max) - d => {
                        return Err(format!("bottom time {mu} at tau {tau}"));
                    }
                    Property::Lemma6
                        if mu >= 0 && tau + tau_max <= tr.duration && tr.bottom_time(tau + tau_max) < mu + 1 =>
                    {
                        return Err(format!("bottom time did not grow over [{tau}, {}]", tau + tau_max));
                    }
                    Property::Theorem2 => {
                        let bound = floor_div(tau, d.max(1) as f64 * tau_max) - 1;
                        if let Some(g) = topo.gnomes().find(|&g| tr.phase_at(g, tau).level() < bound) {
                            return Err(format!("gnome {g} behind phase {bound} at tau {tau}"));
                        }
                    }
                    _ => {}
                }
            }
            Ok(())
        }
        Property::Lemma7 => {
            let Some(from) = tr.all_aware_at() else { return Ok(()) };
            for tau in tr.event_times() {
                if tau >= from && tr.spread_at(tau) > d {
                    return Err(format!("spread {} at tau {tau}", tr.spread_at(tau)));
                }
            }
            Ok(())
        }
        _ => unreachable!("not an async property"),
    }
}

pub fn cmd_check(prop: Property, cfg: &CheckConfig) -> Result<CheckReport, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for trial in 0..cfg.trials {
        let Trial { topo, spec, p, seed } = draw(&mut rng, cfg.n)?;
        let mut async_params = None;
        let outcome = match prop {
            Property::Oracle => check_oracle(&topo, p, &honest(&topo, p, SanityMode::Off)?),
            Property::Theorem1 => check_theorem1(&topo, p, &honest(&topo, p, SanityMode::Off)?),
            Property::Lemma3 => check_lemma3(&topo, p, &honest(&topo, p, SanityMode::Off)?),
            Property::Lemma4 => check_lemma4(&topo, &honest(&topo, p, SanityMode::Off)?, &mut rng),
            Property::SanityFp => {
                let res = honest(&topo, p, SanityMode::Log)?;
                match res.violations.first() {
                    None => Ok(()),
                    Some(v) => Err(format!("{} violations, first: {v:?}", res.violations.len())),
                }
            }
            Property::ConstDelay => {
                let sync = honest(&topo, p, SanityMode::Off)?;
                let mut sc = AsyncScenario::honest(&topo, p, DelayModel::constant(cfg.tau_max));
                sc.duration = sync.last_turn as f64 * cfg.tau_max;
                async_params = Some((cfg.tau_max, seed));
                let tr = run_async(&sc)?;
                sync.turns
                    .iter()
                    .find(|t| tr.alphas_at(t.turn as f64 * cfg.tau_max) != t.alpha)
                    .map_or(Ok(()), |t| Err(format!("traces differ at turn {}", t.turn)))
            }
            _ => {
                async_params = Some((cfg.tau_max, seed));
                let tr = run_async(&AsyncScenario::honest(&topo, p, DelayModel::uniform(cfg.tau_max, seed)))?;
                check_async(prop, &topo, &tr)
            }
        };
        if let Err(detail) = outcome {
            let mut scenario = ScenarioFile::default();
            scenario.topology = Some(spec);
            scenario.proposers = vec![ProposerEntry { gnome: p.0, turn: 0, payload: String::new() }];
            if prop == Property::SanityFp {
                scenario.sanity = SanityName::Log;
            }
            let failure = Counterexample {
                property: prop.name(),
                trial,
                detail,
                scenario,
                tau_max: async_params.map(|a| a.0),
                delay_seed: async_params.map(|a| a.1),
            };
            return Ok(CheckReport { property: prop, trials: trial + 1, failure: Some(failure) });
        }
    }
    Ok(CheckReport { property: prop, trials: cfg.trials, failure: None })
}
