//! Continuous-time engine: every announce travels for a sampled delay of at
//! most `tau_max` seconds, and each gnome recomputes its awareness from the
//! latest value it has received from each member of its neighborhood.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{JokerScript, ScriptSubject, Strategy};
use crate::protocol::{alpha_step, consensus_reached, phase_of, Awareness, Phase};
use crate::topology::{GnomeId, Topology, TopologyError};

/// Default cap on delivered messages before a run is aborted.
pub const DEFAULT_EVENT_CAP: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayKind {
    /// Every message takes exactly `tau_max`.
    Constant,
    /// Fresh draw from `(0, tau_max]` per message.
    Uniform,
    /// One draw from `(0, tau_max]` per directed link, reused for every message.
    PerEdgeFixed,
}

impl DelayKind {
    pub fn name(self) -> &'static str {
        match self {
            DelayKind::Constant => "constant",
            DelayKind::Uniform => "uniform",
            DelayKind::PerEdgeFixed => "per-edge-fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(DelayKind::Constant),
            "uniform" => Some(DelayKind::Uniform),
            "per-edge-fixed" | "per-edge" => Some(DelayKind::PerEdgeFixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub tau_max: f64,
    pub seed: u64,
}

impl DelayModel {
    pub fn constant(tau_max: f64) -> Self {
        DelayModel { kind: DelayKind::Constant, tau_max, seed: 0 }
    }

    pub fn uniform(tau_max: f64, seed: u64) -> Self {
        DelayModel { kind: DelayKind::Uniform, tau_max, seed }
    }

    pub fn per_edge(tau_max: f64, seed: u64) -> Self {
        DelayModel { kind: DelayKind::PerEdgeFixed, tau_max, seed }
    }

    fn validate(&self) -> Result<(), AsyncError> {
        if self.tau_max.is_finite() && self.tau_max > 0.0 {
            Ok(())
        } else {
            Err(AsyncError::BadTauMax)
        }
    }

    // u in [0, 1) maps to (0, tau_max]
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let d = self.tau_max * (1.0 - u);
        if d > 0.0 {
            d
        } else {
            self.tau_max
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AsyncError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("tau_max must be a positive finite number of seconds")]
    BadTauMax,
    #[error("duration must be non-negative and finite")]
    BadDuration,
    #[error("event cap of {cap} deliveries reached at tau = {tau}")]
    EventCapExceeded { cap: usize, tau: f64 },
    #[error("joker strategy `{0}` is not supported by the event-driven engine")]
    UnsupportedStrategy(&'static str),
}

#[derive(Debug, Clone)]
pub struct AsyncScenario<'a> {
    pub topology: &'a Topology,
    pub proposer: GnomeId,
    pub delay: DelayModel,
    /// Simulated seconds; deliveries after this instant are dropped.
    pub duration: f64,
    /// Optional liar. Its script turns are read as multiples of `tau_max`.
    pub joker: Option<JokerScript>,
    pub event_cap: usize,
    /// Sampling step for the bottom-time table; `None` means `tau_max / 4`.
    pub grid_step: Option<f64>,
    /// Process simultaneous deliveries in descending sender order.
    pub reverse_ties: bool,
}

impl<'a> AsyncScenario<'a> {
    /// Honest run long enough for consensus plus one extra `d` of slack.
    pub fn honest(topology: &'a Topology, proposer: GnomeId, delay: DelayModel) -> Self {
        let d = topology.d_bound().max(1) as f64;
        AsyncScenario {
            topology,
            proposer,
            delay,
            duration: 3.0 * d * delay.tau_max,
            joker: None,
            event_cap: DEFAULT_EVENT_CAP,
            grid_step: None,
            reverse_ties: false,
        }
    }
}

/// One awareness change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncEvent {
    pub tau: f64,
    pub gnome: GnomeId,
    pub alpha: Awareness,
}

#[derive(Debug, Clone)]
pub struct AsyncTrace {
    pub n: usize,
    pub d: u32,
    pub tau_max: f64,
    pub duration: f64,
    pub grid_step: f64,
    /// Ordered by timestamp, then gnome.
    pub events: Vec<AsyncEvent>,
    /// Announces delivered to a neighbor (self deliveries excluded).
    pub messages: u64,
    timelines: Vec<Vec<(f64, Awareness)>>,
}

impl AsyncTrace {
    /// Awareness of `g` at `tau`, changes at exactly `tau` included.
    pub fn alpha_at(&self, g: GnomeId, tau: f64) -> Awareness {
        let line = &self.timelines[g.index()];
        let i = line.partition_point(|&(t, _)| t <= tau);
        if i == 0 {
            Awareness::Unaware
        } else {
            line[i - 1].1
        }
    }

    pub fn alphas_at(&self, tau: f64) -> Vec<Awareness> {
        (0..self.n).map(|g| self.alpha_at(GnomeId(g as u32), tau)).collect()
    }

    /// Bottom time: the least awareness level in the swarm at `tau`.
    pub fn bottom_time(&self, tau: f64) -> i64 {
        (0..self.n)
            .map(|g| self.alpha_at(GnomeId(g as u32), tau).level())
            .min()
            .unwrap_or(-1)
    }

    /// Phase of `g` at `tau`. With `d = 0` phases count whole turns.
    pub fn phase_at(&self, g: GnomeId, tau: f64) -> Phase {
        phase_of(self.alpha_at(g, tau), self.d.max(1))
    }

    /// Largest minus smallest awareness level at `tau`.
    pub fn spread_at(&self, tau: f64) -> i64 {
        let levels = (0..self.n).map(|g| self.alpha_at(GnomeId(g as u32), tau).level());
        let (lo, hi) = levels.fold((i64::MAX, i64::MIN), |(lo, hi), l| (lo.min(l), hi.max(l)));
        hi.saturating_sub(lo)
    }

    /// First instant at which no gnome is unaware.
    pub fn all_aware_at(&self) -> Option<f64> {
        self.first_time_all(|a| a.is_aware())
    }

    /// First instant at which every gnome holds `Radius(k >= d)`.
    pub fn consensus_time(&self) -> Option<f64> {
        let d = self.d;
        self.first_time_all(|a| consensus_reached(a, d))
    }

    fn first_time_all(&self, pred: impl Fn(Awareness) -> bool) -> Option<f64> {
        let mut t = 0.0f64;
        for line in &self.timelines {
            let hit = line.iter().find(|&&(_, a)| pred(a))?;
            t = t.max(hit.0);
        }
        Some(t)
    }

    /// Distinct event timestamps, ascending.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.events.iter().map(|e| e.tau).collect();
        ts.dedup();
        ts
    }

    /// Sampling grid `0, step, 2*step, ...` up to the duration.
    pub fn grid(&self) -> Vec<f64> {
        let steps = (self.duration / self.grid_step + 1e-9) as usize;
        (0..=steps).map(|i| i as f64 * self.grid_step).collect()
    }

    /// Bottom time on the sampling grid.
    pub fn mu_table(&self) -> Vec<(f64, i64)> {
        self.grid().into_iter().map(|t| (t, self.bottom_time(t))).collect()
    }

    pub fn timeline(&self, g: GnomeId) -> &[(f64, Awareness)] {
        &self.timelines[g.index()]
    }
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    /// Value sent at `sent_at`, landing in register `slot` of the receiver.
    Deliver { to: u32, slot: u32, sent_at: f64, value: Awareness },
    /// A scripted override of the joker's own state.
    Force { value: Awareness },
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    at: f64,
    sender: u32,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then(self.sender.cmp(&other.sender))
            .then(self.seq.cmp(&other.seq))
    }
}

const SELF_SLOT: u32 = u32::MAX;

struct Engine<'a> {
    topo: &'a Topology,
    delay: DelayModel,
    alpha: Vec<Awareness>,
    // (sent_at, value) per directed in-slot, plus one self register per gnome
    regs: Vec<(f64, Awareness)>,
    self_regs: Vec<(f64, Awareness)>,
    edge_delay: Vec<f64>,
    self_delay: Vec<f64>,
    rngs: Vec<Option<ChaCha8Rng>>,
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    reverse_ties: bool,
    messages: u64,
}

impl<'a> Engine<'a> {
    fn rng(&mut self, g: usize) -> &mut ChaCha8Rng {
        let seed = self.delay.seed;
        self.rngs[g].get_or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(g as u64);
            r
        })
    }

    fn sender_key(&self, g: u32) -> u32 {
        if self.reverse_ties {
            u32::MAX - g
        } else {
            g
        }
    }

    fn push(&mut self, at: f64, sender: u32, payload: Payload) {
        self.seq += 1;
        let p = Pending { at, sender: self.sender_key(sender), seq: self.seq, payload };
        self.heap.push(Reverse(p));
    }

    /// Broadcast `g`'s current value to its neighbors and itself.
    fn announce(&mut self, g: GnomeId, now: f64) {
        let value = self.alpha[g.index()];
        let topo = self.topo;
        for (i, &r) in topo.neighbors(g).iter().enumerate() {
            let delay = match self.delay.kind {
                DelayKind::Constant => self.delay.tau_max,
                DelayKind::Uniform => {
                    let model = self.delay;
                    model.draw(self.rng(g.index()))
                }
                DelayKind::PerEdgeFixed => self.edge_delay[topo.offset(g) + i],
            };
            let slot = topo
                .neighbors(r)
                .binary_search(&g)
                .expect("adjacency is symmetric") as u32;
            self.push(
                now + delay,
                g.0,
                Payload::Deliver { to: r.0, slot, sent_at: now, value },
            );
        }
        let delay = match self.delay.kind {
            DelayKind::Constant => self.delay.tau_max,
            DelayKind::Uniform => {
                let model = self.delay;
                model.draw(self.rng(g.index()))
            }
            DelayKind::PerEdgeFixed => self.self_delay[g.index()],
        };
        self.push(
            now + delay,
            g.0,
            Payload::Deliver { to: g.0, slot: SELF_SLOT, sent_at: now, value },
        );
    }

    fn recompute(&self, g: GnomeId) -> Awareness {
        let base = self.topo.offset(g);
        let heard = self.regs[base..base + self.topo.degree(g)]
            .iter()
            .map(|r| r.1)
            .chain(core::iter::once(self.self_regs[g.index()].1));
        alpha_step(self.alpha[g.index()], heard)
    }
}

fn scripted_overrides(
    joker: &JokerScript,
    tau_max: f64,
) -> Result<Vec<(f64, Awareness)>, AsyncError> {
    let at = |turn: i64| turn as f64 * tau_max;
    match &joker.strategy {
        Strategy::Fool => Ok(vec![(at(joker.inject_at), Awareness::Confused)]),
        Strategy::Stubborn => Ok(Vec::new()),
        Strategy::Custom(script) => script
            .iter()
            .map(|s| match s.subject {
                ScriptSubject::Tracked => Ok((at(s.turn), s.alpha)),
                ScriptSubject::Confusion => Ok((at(s.turn), Awareness::Confused)),
                ScriptSubject::Fresh => Err(AsyncError::UnsupportedStrategy("custom/fresh")),
            })
            .collect(),
        other => Err(AsyncError::UnsupportedStrategy(other.name())),
    }
}

/// Runs the discrete-event simulation of a single proposal.
pub fn run_async(scenario: &AsyncScenario<'_>) -> Result<AsyncTrace, AsyncError> {
    let topo = scenario.topology;
    topo.check(scenario.proposer)?;
    scenario.delay.validate()?;
    if !(scenario.duration.is_finite() && scenario.duration >= 0.0) {
        return Err(AsyncError::BadDuration);
    }
    let n = topo.len();
    let tau_max = scenario.delay.tau_max;
    let grid_step = scenario.grid_step.unwrap_or(tau_max / 4.0);
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(AsyncError::BadTauMax);
    }

    let (edge_delay, self_delay) = if scenario.delay.kind == DelayKind::PerEdgeFixed {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.delay.seed);
        let e = (0..topo.slot_count()).map(|_| scenario.delay.draw(&mut rng)).collect();
        let s = (0..n).map(|_| scenario.delay.draw(&mut rng)).collect();
        (e, s)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut eng = Engine {
        topo,
        delay: scenario.delay,
        alpha: vec![Awareness::Unaware; n],
        regs: vec![(f64::NEG_INFINITY, Awareness::Unaware); topo.slot_count()],
        self_regs: vec![(f64::NEG_INFINITY, Awareness::Unaware); n],
        edge_delay,
        self_delay,
        rngs: vec![None; n],
        heap: BinaryHeap::new(),
        seq: 0,
        reverse_ties: scenario.reverse_ties,
        messages: 0,
    };

    let mut timelines: Vec<Vec<(f64, Awareness)>> = vec![Vec::new(); n];
    let mut events = Vec::new();

    if let Some(j) = &scenario.joker {
        topo.check(j.joker)?;
        for (at, value) in scripted_overrides(j, tau_max)? {
            eng.push(at, j.joker.0, Payload::Force { value });
        }
    }

    let p = scenario.proposer;
    eng.alpha[p.index()] = Awareness::Radius(0);
    timelines[p.index()].push((0.0, Awareness::Radius(0)));
    events.push(AsyncEvent { tau: 0.0, gnome: p, alpha: Awareness::Radius(0) });
    eng.announce(p, 0.0);

    let mut delivered = 0usize;
    let mut dirty: Vec<u32> = Vec::new();
    let mut forced: Vec<(u32, Awareness)> = Vec::new();
    let mut is_dirty = vec![false; n];
    while let Some(Reverse(head)) = eng.heap.peek().copied() {
        let now = head.at;
        if now > scenario.duration {
            break;
        }
        // drain every delivery at this instant before anyone recomputes
        while let Some(Reverse(e)) = eng.heap.peek().copied() {
            if e.at.total_cmp(&now) != Ordering::Equal {
                break;
            }
            eng.heap.pop();
            match e.payload {
                Payload::Deliver { to, slot, sent_at, value } => {
                    delivered += 1;
                    if delivered > scenario.event_cap {
                        return Err(AsyncError::EventCapExceeded {
                            cap: scenario.event_cap,
                            tau: now,
                        });
                    }
                    let reg = if slot == SELF_SLOT {
                        &mut eng.self_regs[to as usize]
                    } else {
                        eng.messages += 1;
                        &mut eng.regs[topo.offset(GnomeId(to)) + slot as usize]
                    };
                    if sent_at >= reg.0 {
                        *reg = (sent_at, value);
                    }
                    if !is_dirty[to as usize] {
                        is_dirty[to as usize] = true;
                        dirty.push(to);
                    }
                }
                Payload::Force { value } => {
                    let g = if eng.reverse_ties { u32::MAX - e.sender } else { e.sender };
                    forced.push((g, value));
                }
            }
        }
        dirty.sort_unstable();
        let mut changed: Vec<(GnomeId, Awareness)> = Vec::new();
        for &g in &dirty {
            is_dirty[g as usize] = false;
            let g = GnomeId(g);
            let next = eng.recompute(g);
            if next != eng.alpha[g.index()] {
                changed.push((g, next));
            }
        }
        dirty.clear();
        for (g, value) in forced.drain(..) {
            let g = GnomeId(g);
            changed.retain(|c| c.0 != g);
            if eng.alpha[g.index()] != value {
                changed.push((g, value));
            }
        }
        changed.sort_unstable_by_key(|c| c.0);
        for &(g, value) in &changed {
            eng.alpha[g.index()] = value;
            timelines[g.index()].push((now, value));
            events.push(AsyncEvent { tau: now, gnome: g, alpha: value });
        }
        for &(g, _) in &changed {
            eng.announce(g, now);
        }
    }

    Ok(AsyncTrace {
        n,
        d: topo.d_bound(),
        tau_max,
        duration: scenario.duration,
        grid_step,
        events,
        messages: eng.messages,
        timelines,
    })
}
