//! Lockstep turn engine.
//!
//! Every turn each gnome reads only the announces its neighbors made on the
//! previous turn (double-buffered outboxes), so the result is independent of
//! the order in which gnomes are updated. Alongside the engine live the
//! global recurrence oracle and the per-turn histogram metrics.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::adversary::{
    merry_resolve, ChurnEvent, ChurnKind, ChurnScript, JokerScript, SanityMode, ScriptError,
    ScriptSubject, Strategy, ViolationEvent,
};
use crate::protocol::{
    alpha_step, backdate_check, check_sanity, clock_step, consensus_reached, Announce, Awareness,
    BackdateVerdict, ConflictMode, HeardRecord, Proposal, ProposalId, ProtocolError, RankKey,
    SanityInput, Subject, Verdict,
};
use crate::topology::{GnomeId, Topology, TopologyError};

const NONE: u32 = u32::MAX;
const UNAWARE: i32 = -1;
const NEVER: i64 = i64::MIN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposerSpec {
    pub gnome: GnomeId,
    pub turn: i64,
    pub payload: Vec<u8>,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub topology: &'a Topology,
    pub proposers: Vec<ProposerSpec>,
    pub jokers: Vec<JokerScript>,
    pub churn: ChurnScript,
    pub mode: ConflictMode,
    pub sanity: SanityMode,
    pub max_turns: i64,
    /// After a round ends with nobody acting, the best-ranked honest
    /// proposer proposes again once its confusion timeout expires.
    pub retry: bool,
    /// Turns a confused proposer waits before retrying; defaults to `2d`.
    pub confusion_timeout: Option<i64>,
    /// Swarm clock of every gnome at turn 0.
    pub clock_origin: i64,
    /// Proposer rank per gnome; defaults to the gnome id.
    pub ranks: Option<Vec<u64>>,
    /// Keep simulating until `max_turns` even after every round settled.
    pub run_to_max: bool,
    pub record_announces: bool,
}

impl<'a> Scenario<'a> {
    /// Fault-free single proposal at turn 0.
    pub fn single(topology: &'a Topology, proposer: GnomeId) -> Self {
        let d = topology.d_bound() as i64;
        Scenario {
            topology,
            proposers: vec![ProposerSpec {
                gnome: proposer,
                turn: 0,
                payload: Vec::new(),
            }],
            jokers: Vec::new(),
            churn: ChurnScript::default(),
            mode: ConflictMode::Plain,
            sanity: SanityMode::Off,
            max_turns: 4 * d + 8,
            retry: false,
            confusion_timeout: None,
            clock_origin: 0,
            ranks: None,
            run_to_max: false,
            record_announces: false,
        }
    }

    pub fn timeout(&self) -> i64 {
        self.confusion_timeout
            .unwrap_or(2 * self.topology.d_bound() as i64)
    }

    pub fn rank_of(&self, g: GnomeId) -> u64 {
        self.ranks
            .as_ref()
            .and_then(|r| r.get(g.index()).copied())
            .unwrap_or(g.0 as u64)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let topo = self.topology;
        for p in &self.proposers {
            topo.check(p.gnome)?;
            if p.turn < 0 {
                return Err(SimError::Invalid("proposal turn must be non-negative"));
            }
        }
        let mut seen = BTreeSet::new();
        for j in &self.jokers {
            topo.check(j.joker)?;
            j.validate()?;
            if !seen.insert(j.joker) {
                return Err(SimError::Invalid("one script per joker"));
            }
        }
        if let Some(r) = &self.ranks {
            if r.len() != topo.len() {
                return Err(SimError::Invalid("ranks must list every gnome"));
            }
        }
        if self.max_turns < 0 {
            return Err(SimError::Invalid("max_turns must be non-negative"));
        }
        self.churn.validate(topo)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("invalid scenario: {0}")]
    Invalid(&'static str),
}

/// Snapshot of the swarm at the end of one turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnTrace {
    pub turn: i64,
    /// What each gnome announced this turn (`Unaware` when silent).
    pub alpha: Vec<Awareness>,
    /// Gnomes outside the swarm this turn (absent, or joined mid-round).
    pub excluded: Vec<GnomeId>,
    pub messages_sent: u64,
    /// `b_t`: minimum awareness level among participants.
    pub bottom_value: i64,
    /// `|B_t|`.
    pub bottom_count: usize,
    /// Set on the turn a round reaches simultaneous consensus.
    pub consensus_turn: Option<i64>,
}

impl TurnTrace {
    pub fn participants(&self) -> impl Iterator<Item = (GnomeId, Awareness)> + '_ {
        let mut skip = self.excluded.iter().peekable();
        self.alpha.iter().enumerate().filter_map(move |(i, &a)| {
            let g = GnomeId(i as u32);
            if skip.peek() == Some(&&g) {
                skip.next();
                None
            } else {
                Some((g, a))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundVerdict {
    /// Every participant acted on the same proposal on the same turn.
    Consensus { turn: i64, pid: ProposalId },
    /// Nobody acted; every participant ended confused.
    Confused,
    /// Some participants acted and others did not, or acts disagreed.
    Split,
    /// Nobody acted, but not everyone was confused (abandoned proposals).
    NoAction,
    /// The run ended before the round settled.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    pub index: u32,
    pub start_turn: i64,
    pub resolved_turn: Option<i64>,
    pub proposals: Vec<ProposalId>,
    /// Per gnome: turn and proposal it acted on (honest participants only).
    pub acted: Vec<Option<(i64, ProposalId)>>,
    /// Honest participants confused without having acted.
    pub confused: Vec<GnomeId>,
    pub verdict: RoundVerdict,
    /// All acts happened on one turn.
    pub simultaneous: bool,
}

impl RoundOutcome {
    pub fn actors(&self) -> usize {
        self.acted.iter().filter(|a| a.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    /// Every round settled and nothing else was scheduled.
    Quiescent,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedProposal {
    pub turn: i64,
    pub error: ProtocolError,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub n: usize,
    pub d: u32,
    pub turns: Vec<TurnTrace>,
    pub rounds: Vec<RoundOutcome>,
    pub proposals: Vec<Proposal>,
    pub violations: Vec<ViolationEvent>,
    pub rejected: Vec<RejectedProposal>,
    pub announces: Vec<Announce>,
    pub total_messages: u64,
    pub halt: HaltReason,
    pub last_turn: i64,
}

impl RunResult {
    pub fn turn(&self, t: i64) -> Option<&TurnTrace> {
        let first = self.turns.first()?.turn;
        usize::try_from(t - first).ok().and_then(|i| self.turns.get(i))
    }

    /// Turn at which the first round reached consensus.
    pub fn consensus_turn(&self) -> Option<i64> {
        match self.rounds.first()?.verdict {
            RoundVerdict::Consensus { turn, .. } => Some(turn),
            _ => None,
        }
    }

    pub fn first_round(&self) -> Option<&RoundOutcome> {
        self.rounds.first()
    }
}

struct Outbox {
    /// `[k * n + g]`: what gnome `g` said about proposal `k`.
    alpha: Vec<i32>,
    conf: Vec<bool>,
}

impl Outbox {
    fn new(n: usize) -> Self {
        Outbox {
            alpha: Vec::new(),
            conf: vec![false; n],
        }
    }

    fn clear(&mut self) {
        self.alpha.iter_mut().for_each(|a| *a = UNAWARE);
        self.conf.iter_mut().for_each(|c| *c = false);
    }
}

/// Per directed edge and proposal: the receiver's record of what the sender
/// announced, for the sanity checks.
struct SanityBook {
    slots: usize,
    rec_alpha: Vec<i32>,
    rec_since: Vec<i64>,
    first_prop: Vec<u32>,
}

impl SanityBook {
    fn reset(&mut self) {
        self.rec_alpha.iter_mut().for_each(|a| *a = UNAWARE);
        self.first_prop.iter_mut().for_each(|p| *p = NONE);
    }
}

struct JokerRt {
    script: JokerScript,
    own: u32,
    /// One-shot attacks end with the round they targeted.
    spent: bool,
}

impl JokerRt {
    fn active(&self, t: i64) -> bool {
        !self.spent && t >= self.script.inject_at
    }

    fn override_at(&self, t: i64) -> Option<(ScriptSubject, Awareness)> {
        match &self.script.strategy {
            Strategy::Custom(seq) => seq
                .iter()
                .find(|s| s.turn == t)
                .map(|s| (s.subject, s.alpha)),
            _ => None,
        }
    }
}

/// The synchronous engine. Use [`run`] for a complete run or drive it turn
/// by turn with [`SyncEngine::step`].
pub struct SyncEngine<'a> {
    sc: Scenario<'a>,
    topo: &'a Topology,
    n: usize,
    d: u32,
    t: i64,

    proposals: Vec<Proposal>,
    honest_prop: Vec<bool>,
    added_at: Vec<i64>,
    round_props: Vec<u32>,
    round_index: u32,
    round_start: i64,
    resolved_at: Option<i64>,
    round_open: bool,

    alpha: Vec<i32>,
    next_alpha: Vec<i32>,
    tracked: Vec<u32>,
    next_tracked: Vec<u32>,
    confused: Vec<bool>,
    next_confused: Vec<bool>,
    confused_at: Vec<i64>,
    acted: Vec<Option<(i64, u32)>>,
    clock: Vec<i64>,
    next_clock: Vec<i64>,
    first_heard: Vec<i64>,
    dropped: Vec<bool>,
    present: Vec<bool>,
    pending: Vec<bool>,
    seq: Vec<u32>,

    joker_of: Vec<u32>,
    jokers: Vec<JokerRt>,
    expelled: BTreeSet<(u32, u32)>,

    out: Outbox,
    out_prev: Outbox,
    book: Option<SanityBook>,

    queue: Vec<(i64, GnomeId, Vec<u8>)>,
    churn: Vec<ChurnEvent>,
    churn_cursor: usize,

    rounds: Vec<RoundOutcome>,
    violations: Vec<ViolationEvent>,
    reported: BTreeSet<(u32, u32, u8)>,
    rejected: Vec<RejectedProposal>,
    announces: Vec<Announce>,
    total_messages: u64,
    turn_messages: u64,
    consensus_now: Option<i64>,
    scratch: Vec<u32>,
}

impl<'a> SyncEngine<'a> {
    pub fn new(scenario: Scenario<'a>) -> Result<Self, SimError> {
        scenario.validate()?;
        let topo = scenario.topology;
        let n = topo.len();
        let mut joker_of = vec![NONE; n];
        let jokers: Vec<JokerRt> = scenario
            .jokers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                joker_of[s.joker.index()] = i as u32;
                JokerRt {
                    script: s.clone(),
                    own: NONE,
                    spent: false,
                }
            })
            .collect();
        let mut queue: Vec<_> = scenario
            .proposers
            .iter()
            .map(|p| (p.turn, p.gnome, p.payload.clone()))
            .collect();
        queue.sort_by_key(|e| core::cmp::Reverse((e.0, e.1)));
        let book = (scenario.sanity != SanityMode::Off).then(|| SanityBook {
            slots: topo.slot_count(),
            rec_alpha: Vec::new(),
            rec_since: Vec::new(),
            first_prop: vec![NONE; topo.slot_count()],
        });
        let origin = scenario.clock_origin;
        let mut engine = SyncEngine {
            topo,
            n,
            d: topo.d_bound(),
            t: 0,
            proposals: Vec::new(),
            honest_prop: Vec::new(),
            added_at: Vec::new(),
            round_props: Vec::new(),
            round_index: 0,
            round_start: 0,
            resolved_at: None,
            round_open: false,
            alpha: Vec::new(),
            next_alpha: Vec::new(),
            tracked: vec![NONE; n],
            next_tracked: vec![NONE; n],
            confused: vec![false; n],
            next_confused: vec![false; n],
            confused_at: vec![NEVER; n],
            acted: vec![None; n],
            clock: vec![origin; n],
            next_clock: vec![origin; n],
            first_heard: Vec::new(),
            dropped: Vec::new(),
            present: scenario.churn.initial_membership(n),
            pending: vec![false; n],
            seq: vec![0; n],
            joker_of,
            jokers,
            expelled: BTreeSet::new(),
            out: Outbox::new(n),
            out_prev: Outbox::new(n),
            book,
            queue,
            churn: scenario.churn.sorted(),
            churn_cursor: 0,
            rounds: Vec::new(),
            violations: Vec::new(),
            reported: BTreeSet::new(),
            rejected: Vec::new(),
            announces: Vec::new(),
            total_messages: 0,
            turn_messages: 0,
            consensus_now: None,
            scratch: Vec::new(),
            sc: scenario,
        };
        engine.begin_turn();
        Ok(engine)
    }

    pub fn turn(&self) -> i64 {
        self.t
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    #[inline]
    fn idx(&self, k: u32, g: usize) -> usize {
        k as usize * self.n + g
    }

    #[inline]
    fn live(&self, g: usize, nb: usize) -> bool {
        self.present[nb]
            && !self.pending[nb]
            && (self.expelled.is_empty() || !self.expelled.contains(&(g as u32, nb as u32)))
    }

    fn is_honest(&self, g: usize) -> bool {
        self.joker_of[g] == NONE
    }

    fn joker(&self, g: usize) -> Option<&JokerRt> {
        self.jokers.get(self.joker_of[g] as usize)
    }

    fn stubborn(&self, g: usize) -> bool {
        self.joker(g).is_some_and(|j| {
            j.active(self.t) && matches!(j.script.strategy, Strategy::Stubborn)
        })
    }

    fn round_in_progress(&self) -> bool {
        self.round_open && self.resolved_at.is_none()
    }

    /// Advances one turn. Returns `false` once the run should stop.
    pub fn step(&mut self) -> bool {
        if self.finished() {
            return false;
        }
        self.next_alpha.clone_from(&self.alpha);
        self.next_tracked.clone_from(&self.tracked);
        self.next_confused.clone_from(&self.confused);
        self.next_clock.clone_from(&self.clock);
        let mut subjects = core::mem::take(&mut self.scratch);
        for g in 0..self.n {
            self.update_gnome(g, &mut subjects);
        }
        self.scratch = subjects;
        core::mem::swap(&mut self.alpha, &mut self.next_alpha);
        core::mem::swap(&mut self.tracked, &mut self.next_tracked);
        core::mem::swap(&mut self.confused, &mut self.next_confused);
        core::mem::swap(&mut self.clock, &mut self.next_clock);
        self.t += 1;
        self.begin_turn();
        !self.finished()
    }

    /// Events, acts, announces and settlement for the current turn `t`.
    fn begin_turn(&mut self) {
        self.consensus_now = None;
        self.apply_churn();
        self.apply_proposals();
        self.apply_injections();
        self.act_check();
        self.build_outbox();
        self.check_resolution();
    }

    fn future_events(&self) -> bool {
        let t = self.t;
        !self.queue.is_empty()
            || self.churn_cursor < self.churn.len()
            || self.jokers.iter().any(|j| match &j.script.strategy {
                Strategy::Custom(seq) => seq.iter().any(|s| s.turn > t),
                s if s.injects_proposal() => j.script.inject_at > t,
                _ => j.script.inject_at > t,
            })
    }

    pub fn finished(&self) -> bool {
        if self.t >= self.sc.max_turns {
            return true;
        }
        if self.sc.run_to_max || self.future_events() {
            return false;
        }
        match (self.round_open, self.resolved_at) {
            (false, _) => true,
            // late injections still get their 2d turns to spread
            (true, Some(r)) => {
                self.t > r
                    && self.round_props.iter().all(|&k| {
                        let at = self.added_at[k as usize];
                        at < r || self.t > at + 2 * self.d as i64
                    })
            }
            (true, None) => false,
        }
    }

    fn update_gnome(&mut self, g: usize, subjects: &mut Vec<u32>) {
        if !self.present[g] || self.pending[g] {
            return;
        }
        let topo = self.topo;
        let n = self.n;
        let neighbors = topo.neighbors(GnomeId(g as u32));

        let mut min_clock = self.clock[g];
        for nb in neighbors {
            let nb = nb.index();
            if self.present[nb] {
                min_clock = min_clock.min(self.clock[nb]);
            }
        }
        let next_clock = clock_step(self.clock[g], [min_clock]);
        self.next_clock[g] = next_clock;

        if !self.round_open {
            return;
        }

        let honest = self.is_honest(g);
        subjects.clear();
        let mut heard_conf = false;
        let base = topo.offset(GnomeId(g as u32));
        for (i, nb) in neighbors.iter().enumerate() {
            let nb = nb.index();
            if !self.live(g, nb) {
                continue;
            }
            if self.out.conf[nb] {
                heard_conf = true;
            }
            for ri in 0..self.round_props.len() {
                let k = self.round_props[ri];
                let a = self.out.alpha[self.idx(k, nb)];
                if a == UNAWARE {
                    continue;
                }
                if honest {
                    self.vet(g, nb, base + i, k, a);
                    if !self.live(g, nb) {
                        break;
                    }
                }
                let ix = self.idx(k, g);
                if self.first_heard[ix] == NEVER {
                    self.first_heard[ix] = self.clock[g];
                    if honest && self.book.is_some() {
                        self.check_backdate(g, k);
                    }
                }
                if !self.dropped[ix] && !subjects.contains(&k) {
                    subjects.push(k);
                }
            }
        }

        // A joker with its own proposal relays only that proposal.
        if let Some(j) = self.joker(g) {
            if j.active(self.t) && j.script.strategy.injects_proposal() && j.own != NONE {
                let k = j.own;
                let ix = self.idx(k, g);
                self.next_alpha[ix] = self.step_alpha(g, k);
                self.next_tracked[g] = k;
                return;
            }
        }

        if self.confused[g] {
            return;
        }
        let ignore_conf = self.sc.mode == ConflictMode::Merry || self.stubborn(g);
        if heard_conf && !ignore_conf {
            self.become_confused(g);
            return;
        }
        let tracked = self.tracked[g];
        if tracked != NONE && !subjects.contains(&tracked) {
            subjects.push(tracked);
        }
        match self.sc.mode {
            ConflictMode::Plain => {
                if self.stubborn(g) && subjects.len() > 1 {
                    let keep = if tracked != NONE { tracked } else { subjects[0] };
                    subjects.clear();
                    subjects.push(keep);
                }
                if subjects.len() > 1 {
                    self.become_confused(g);
                } else if let Some(&k) = subjects.first() {
                    self.next_tracked[g] = k;
                    let ix = self.idx(k, g);
                    self.next_alpha[ix] = self.step_alpha(g, k);
                }
            }
            ConflictMode::Ranked => {
                let Some(&w) = subjects
                    .iter()
                    .min_by_key(|&&k| self.proposals[k as usize].rank_key())
                else {
                    return;
                };
                for &k in subjects.iter() {
                    if k != w {
                        let ix = self.idx(k, g);
                        self.dropped[ix] = true;
                        self.next_alpha[ix] = UNAWARE;
                    }
                }
                self.next_tracked[g] = w;
                let ix = self.idx(w, g);
                let next = self.step_alpha(g, w);
                self.next_alpha[ix] = next;
                let deadline = self.proposals[w as usize].nominal_turn + 2 * self.d as i64;
                if self.acted[g].is_none()
                    && next_clock >= deadline
                    && !consensus_reached(Awareness::from_raw(next), self.d)
                {
                    self.dropped[ix] = true;
                    self.next_alpha[ix] = UNAWARE;
                    self.next_tracked[g] = NONE;
                }
            }
            ConflictMode::Merry => {
                for ri in 0..self.round_props.len() {
                    let k = self.round_props[ri];
                    let ix = self.idx(k, g);
                    if subjects.contains(&k) || self.alpha[ix] != UNAWARE {
                        self.next_alpha[ix] = self.step_alpha(g, k);
                    }
                }
            }
        }
        let _ = n;
    }

    fn step_alpha(&self, g: usize, k: u32) -> i32 {
        let own = Awareness::from_raw(self.alpha[self.idx(k, g)]);
        let heard = self
            .topo
            .neighbors(GnomeId(g as u32))
            .iter()
            .filter(|nb| self.live(g, nb.index()))
            .map(|nb| Awareness::from_raw(self.out.alpha[self.idx(k, nb.index())]));
        alpha_step(own, heard.chain(core::iter::once(own))).to_raw()
    }

    fn become_confused(&mut self, g: usize) {
        self.next_confused[g] = true;
        if self.confused_at[g] == NEVER {
            self.confused_at[g] = self.t + 1;
        }
    }

    /// Sanity-checks one announce `a` about proposal `k` that `nb` made on
    /// turn `t`, as seen by `g` through adjacency slot `slot`.
    fn vet(&mut self, g: usize, nb: usize, slot: usize, k: u32, a: i32) {
        let Some(book) = self.book.as_ref() else {
            return;
        };
        let t = self.t;
        let bi = k as usize * book.slots + slot;
        let prev = (book.rec_alpha[bi] != UNAWARE).then(|| HeardRecord {
            alpha: Awareness::from_raw(book.rec_alpha[bi]),
            since: book.rec_since[bi],
        });
        let first = book.first_prop[slot];

        // What g said to nb on the previous turn.
        let mine = self.out_prev.alpha[self.idx(k, g)];
        let mine_conf = self.out_prev.conf[g];
        let mine_other = self
            .round_props
            .iter()
            .any(|&o| o != k && self.out_prev.alpha[self.idx(o, g)] != UNAWARE);
        let mode = self.sc.mode;
        let told = if mine != UNAWARE {
            Some(Awareness::from_raw(mine))
        } else if mine_conf || (mode != ConflictMode::Merry && mine_other) {
            None
        } else {
            Some(Awareness::Unaware)
        };
        let told_conflict = match mode {
            ConflictMode::Plain => mine_conf || mine_other,
            ConflictMode::Ranked => mine_conf,
            ConflictMode::Merry => false,
        };
        let may_switch = match mode {
            ConflictMode::Merry => true,
            ConflictMode::Ranked => {
                first != NONE
                    && self.proposals[k as usize].rank_key()
                        < self.proposals[first as usize].rank_key()
            }
            ConflictMode::Plain => false,
        };
        let next = Announce {
            sender: GnomeId(nb as u32),
            subject: Subject::Proposal(self.proposals[k as usize].pid),
            alpha: Awareness::from_raw(a),
            turn: t,
        };
        let verdict = check_sanity(&SanityInput {
            prev,
            next: &next,
            told,
            told_conflict,
            other_proposal: (first != NONE && first != k)
                .then(|| self.proposals[first as usize].pid),
            may_switch,
            circulating: self.round_in_progress() || self.round_open,
        });

        let book = self.book.as_mut().expect("checked above");
        if book.rec_alpha[bi] != a {
            book.rec_alpha[bi] = a;
            book.rec_since[bi] = t;
        }
        if first == NONE || may_switch {
            book.first_prop[slot] = k;
        }
        if let Verdict::Violation(rule) = verdict {
            self.report(g, nb, rule);
        }
    }

    fn report(&mut self, g: usize, violator: usize, rule: crate::protocol::Rule) {
        if self
            .reported
            .insert((g as u32, violator as u32, rule.number()))
        {
            self.violations.push(ViolationEvent {
                turn: self.t,
                detector: GnomeId(g as u32),
                violator: GnomeId(violator as u32),
                rule,
            });
        }
        if self.sc.sanity == SanityMode::Expel
            && self.topo.is_adjacent(GnomeId(g as u32), GnomeId(violator as u32))
        {
            self.expelled.insert((g as u32, violator as u32));
        }
    }

    fn check_backdate(&mut self, g: usize, k: u32) {
        let ix = self.idx(k, g);
        let p = &self.proposals[k as usize];
        if backdate_check(p, self.first_heard[ix], self.d) == BackdateVerdict::ExpelProposer {
            let proposer = p.proposer.index();
            self.dropped[ix] = true;
            self.report(g, proposer, crate::protocol::Rule::Backdate);
        }
    }

    fn apply_churn(&mut self) {
        while let Some(e) = self.churn.get(self.churn_cursor).copied() {
            if e.turn > self.t {
                break;
            }
            self.churn_cursor += 1;
            let g = e.gnome.index();
            match e.kind {
                ChurnKind::Leave => {
                    self.present[g] = false;
                    self.pending[g] = false;
                }
                ChurnKind::Join => {
                    self.present[g] = true;
                    self.pending[g] = self.round_in_progress();
                    let adopted = self
                        .topo
                        .neighbors(e.gnome)
                        .iter()
                        .filter(|nb| self.present[nb.index()])
                        .map(|nb| self.clock[nb.index()])
                        .min();
                    if let Some(c) = adopted {
                        self.clock[g] = c;
                    }
                }
            }
        }
    }

    fn add_proposal(&mut self, g: usize, nominal_turn: i64, payload: Vec<u8>, honest: bool) -> u32 {
        let k = self.proposals.len() as u32;
        let gid = GnomeId(g as u32);
        self.proposals.push(Proposal {
            pid: ProposalId::new(gid, self.seq[g]),
            proposer: gid,
            nominal_turn,
            proposer_rank: self.sc.rank_of(gid),
            payload,
        });
        self.seq[g] += 1;
        self.honest_prop.push(honest);
        self.added_at.push(self.t);
        let n = self.n;
        self.alpha.resize(self.alpha.len() + n, UNAWARE);
        self.out.alpha.resize(self.out.alpha.len() + n, UNAWARE);
        self.out_prev.alpha.resize(self.out_prev.alpha.len() + n, UNAWARE);
        self.first_heard.resize(self.first_heard.len() + n, NEVER);
        self.dropped.resize(self.dropped.len() + n, false);
        if let Some(book) = self.book.as_mut() {
            book.rec_alpha.resize(book.rec_alpha.len() + book.slots, UNAWARE);
            book.rec_since.resize(book.rec_since.len() + book.slots, 0);
        }
        if !self.round_open {
            self.round_open = true;
            self.round_start = self.t;
        }
        self.round_props.push(k);
        let ix = self.idx(k, g);
        self.alpha[ix] = 0;
        self.first_heard[ix] = self.clock[g];
        self.tracked[g] = k;
        k
    }

    fn apply_injections(&mut self) {
        for ji in 0..self.jokers.len() {
            let j = &self.jokers[ji];
            let g = j.script.joker.index();
            if !self.present[g] || j.own != NONE || j.spent {
                continue;
            }
            let fresh_now = matches!(j.override_at(self.t), Some((ScriptSubject::Fresh, _)));
            let inject_now = j.script.strategy.injects_proposal() && j.script.inject_at == self.t;
            if inject_now || fresh_now {
                let nominal = self.clock[g] - j.script.backdate_offset() as i64;
                let k = self.add_proposal(g, nominal, Vec::new(), false);
                self.jokers[ji].own = k;
            }
        }
    }

    fn apply_proposals(&mut self) {
        while self.queue.last().is_some_and(|e| e.0 <= self.t) {
            let (_, gid, payload) = self.queue.pop().expect("peeked");
            let g = gid.index();
            if !self.present[g] || self.pending[g] {
                self.rejected.push(RejectedProposal {
                    turn: self.t,
                    error: ProtocolError::JoinPending(gid),
                });
                continue;
            }
            if self.round_in_progress() {
                let busy = self.tracked[g] != NONE || self.confused[g];
                if busy {
                    let active = self
                        .tracked
                        .get(g)
                        .filter(|&&k| k != NONE)
                        .map(|&k| self.proposals[k as usize].pid)
                        .unwrap_or(ProposalId(u64::MAX));
                    self.rejected.push(RejectedProposal {
                        turn: self.t,
                        error: ProtocolError::RoundInProgress { gnome: gid, active },
                    });
                    continue;
                }
            } else {
                self.start_round();
            }
            let clock = self.clock[g];
            self.add_proposal(g, clock, payload, self.is_honest(g));
        }
    }

    /// Clears every gnome's round state; joiners waiting for a new round
    /// start participating.
    fn start_round(&mut self) {
        if self.round_open {
            self.round_index += 1;
        }
        let t = self.t;
        for j in &mut self.jokers {
            let one_shot = j.script.strategy.injects_proposal()
                || matches!(j.script.strategy, Strategy::Fool);
            if one_shot && j.active(t) && (j.own != NONE || j.script.inject_at < t) {
                j.spent = true;
                j.own = NONE;
            }
        }
        self.round_open = false;
        self.resolved_at = None;
        self.round_props.clear();
        self.tracked.iter_mut().for_each(|k| *k = NONE);
        self.confused.iter_mut().for_each(|c| *c = false);
        self.confused_at.iter_mut().for_each(|c| *c = NEVER);
        self.acted.iter_mut().for_each(|a| *a = None);
        self.pending.iter_mut().for_each(|p| *p = false);
        self.dropped.iter_mut().for_each(|d| *d = false);
        self.first_heard.iter_mut().for_each(|f| *f = NEVER);
        self.alpha.iter_mut().for_each(|a| *a = UNAWARE);
        self.out_prev.clear();
        self.reported.clear();
        if let Some(book) = self.book.as_mut() {
            book.reset();
        }
    }

    fn act_check(&mut self) {
        if !self.round_in_progress() && !self.round_open {
            return;
        }
        let t = self.t;
        let d = self.d;
        for g in 0..self.n {
            if !self.present[g] || self.pending[g] || self.acted[g].is_some() || self.confused[g] {
                continue;
            }
            match self.sc.mode {
                ConflictMode::Plain | ConflictMode::Ranked => {
                    let k = self.tracked[g];
                    if k == NONE {
                        continue;
                    }
                    let a = Awareness::from_raw(self.alpha[self.idx(k, g)]);
                    let p = &self.proposals[k as usize];
                    let in_time = self.sc.mode != ConflictMode::Ranked
                        || self.clock[g] <= p.nominal_turn + 2 * d as i64;
                    if consensus_reached(a, d) && in_time {
                        self.acted[g] = Some((t, k));
                    }
                }
                ConflictMode::Merry => {
                    let cands: Vec<(RankKey, Awareness)> = self
                        .round_props
                        .iter()
                        .map(|&k| {
                            (
                                self.proposals[k as usize].rank_key(),
                                Awareness::from_raw(self.alpha[self.idx(k, g)]),
                            )
                        })
                        .collect();
                    if let Some(i) = merry_resolve(&cands, d) {
                        self.acted[g] = Some((t, self.round_props[i]));
                    }
                }
            }
        }
    }

    fn build_outbox(&mut self) {
        core::mem::swap(&mut self.out, &mut self.out_prev);
        self.out.clear();
        self.turn_messages = 0;
        if !self.round_open {
            return;
        }
        let t = self.t;
        let n = self.n;
        for g in 0..n {
            if !self.present[g] || self.pending[g] {
                continue;
            }
            let mut entries = 0u64;
            let joker = self.joker(g).filter(|j| j.active(t));
            let scripted = joker.and_then(|j| j.override_at(t));
            if let Some((subject, a)) = scripted {
                let j = joker.expect("scripted implies joker");
                match subject {
                    ScriptSubject::Confusion => {
                        self.out.conf[g] = true;
                        entries = 1;
                    }
                    ScriptSubject::Tracked | ScriptSubject::Fresh => {
                        let k = if subject == ScriptSubject::Fresh { j.own } else { self.tracked[g] };
                        if k != NONE && a != Awareness::Unaware {
                            let ix = self.idx(k, g);
                            self.out.alpha[ix] = a.to_raw();
                            entries = 1;
                        }
                    }
                }
            } else if let Some(j) = joker.filter(|j| {
                matches!(j.script.strategy, Strategy::Fool)
                    || (j.script.strategy.injects_proposal() && j.own != NONE)
            }) {
                if matches!(j.script.strategy, Strategy::Fool) {
                    self.out.conf[g] = true;
                } else {
                    let ix = self.idx(j.own, g);
                    self.out.alpha[ix] = self.alpha[ix];
                }
                entries = 1;
            } else if self.confused[g] && !self.stubborn(g) {
                self.out.conf[g] = true;
                entries = 1;
            } else {
                for ri in 0..self.round_props.len() {
                    let k = self.round_props[ri];
                    let merry = self.sc.mode == ConflictMode::Merry;
                    if !merry && k != self.tracked[g] {
                        continue;
                    }
                    let ix = self.idx(k, g);
                    if self.alpha[ix] >= 0 {
                        self.out.alpha[ix] = self.alpha[ix];
                        entries += 1;
                    }
                }
            }
            if entries > 0 {
                let audience = self
                    .topo
                    .neighbors(GnomeId(g as u32))
                    .iter()
                    .filter(|nb| self.present[nb.index()])
                    .count() as u64;
                self.turn_messages += entries * audience;
                if self.sc.record_announces {
                    self.record_announces(g);
                }
            }
        }
        self.total_messages += self.turn_messages;
    }

    fn record_announces(&mut self, g: usize) {
        let sender = GnomeId(g as u32);
        if self.out.conf[g] {
            self.announces.push(Announce::confusion(sender, self.t));
        }
        for &k in &self.round_props {
            let a = self.out.alpha[self.idx(k, g)];
            if a != UNAWARE {
                self.announces.push(Announce {
                    sender,
                    subject: Subject::Proposal(self.proposals[k as usize].pid),
                    alpha: Awareness::from_raw(a),
                    turn: self.t,
                });
            }
        }
    }

    fn participant(&self, g: usize) -> bool {
        self.present[g] && !self.pending[g]
    }

    fn check_resolution(&mut self) {
        if !self.round_in_progress() {
            return;
        }
        let ranked_expired = self.sc.mode == ConflictMode::Ranked && {
            let min_clock = (0..self.n)
                .filter(|&g| self.participant(g) && self.is_honest(g))
                .map(|g| self.clock[g])
                .min()
                .unwrap_or(i64::MAX);
            self.round_props.iter().all(|&k| {
                min_clock > self.proposals[k as usize].nominal_turn + 2 * self.d as i64
            })
        };
        // Every honest proposal settles within 2d turns; a gnome still
        // waiting after that is cut off behind a joker.
        let stale = self
            .round_props
            .iter()
            .all(|&k| self.t > self.added_at[k as usize] + 2 * self.d as i64);
        let settled = (0..self.n)
            .filter(|&g| self.participant(g) && self.is_honest(g))
            .all(|g| self.acted[g].is_some() || self.confused[g] || ranked_expired || stale);
        if settled {
            let outcome = self.outcome(Some(self.t));
            if let RoundVerdict::Consensus { turn, .. } = outcome.verdict {
                self.consensus_now = Some(turn);
            }
            self.schedule_retry(&outcome);
            self.rounds.push(outcome);
            self.resolved_at = Some(self.t);
        }
    }

    fn outcome(&self, resolved: Option<i64>) -> RoundOutcome {
        let mut acted = vec![None; self.n];
        let mut confused = Vec::new();
        let mut participants = 0usize;
        let mut turns = BTreeSet::new();
        let mut pids = BTreeSet::new();
        for g in 0..self.n {
            if !self.participant(g) || !self.is_honest(g) {
                continue;
            }
            participants += 1;
            if let Some((t, k)) = self.acted[g] {
                let pid = self.proposals[k as usize].pid;
                acted[g] = Some((t, pid));
                turns.insert(t);
                pids.insert(pid);
            } else if self.confused[g] {
                confused.push(GnomeId(g as u32));
            }
        }
        let actors = acted.iter().filter(|a| a.is_some()).count();
        let simultaneous = turns.len() <= 1;
        let verdict = if resolved.is_none() {
            RoundVerdict::Timeout
        } else if actors == participants && actors > 0 && simultaneous && pids.len() == 1 {
            RoundVerdict::Consensus {
                turn: *turns.first().expect("non-empty"),
                pid: *pids.first().expect("non-empty"),
            }
        } else if actors == 0 && confused.len() == participants {
            RoundVerdict::Confused
        } else if actors == 0 {
            RoundVerdict::NoAction
        } else {
            RoundVerdict::Split
        };
        RoundOutcome {
            index: self.round_index,
            start_turn: self.round_start,
            resolved_turn: resolved,
            proposals: self
                .round_props
                .iter()
                .map(|&k| self.proposals[k as usize].pid)
                .collect(),
            acted,
            confused,
            verdict,
            simultaneous,
        }
    }

    fn schedule_retry(&mut self, outcome: &RoundOutcome) {
        if !self.sc.retry || outcome.actors() > 0 {
            return;
        }
        let best = self
            .round_props
            .iter()
            .filter(|&&k| self.honest_prop[k as usize])
            .min_by_key(|&&k| self.proposals[k as usize].rank_key())
            .copied();
        let Some(k) = best else {
            return;
        };
        let p = &self.proposals[k as usize];
        let g = p.proposer.index();
        let since = if self.confused_at[g] == NEVER { self.t } else { self.confused_at[g] };
        let at = (since + self.sc.timeout()).max(self.t + 1);
        let entry = (at, p.proposer, p.payload.clone());
        let pos = self
            .queue
            .iter()
            .position(|e| (e.0, e.1) < (at, p.proposer))
            .unwrap_or(self.queue.len());
        self.queue.insert(pos, entry);
    }

    /// Snapshot of the current turn.
    pub fn snapshot(&self) -> TurnTrace {
        let n = self.n;
        let mut alpha = vec![Awareness::Unaware; n];
        let mut excluded = Vec::new();
        for (g, slot) in alpha.iter_mut().enumerate() {
            if !self.participant(g) {
                excluded.push(GnomeId(g as u32));
                continue;
            }
            if self.out.conf[g] {
                *slot = Awareness::Confused;
                continue;
            }
            let mut best = UNAWARE;
            for &k in &self.round_props {
                best = best.max(self.out.alpha[self.idx(k, g)]);
            }
            *slot = Awareness::from_raw(best);
        }
        let mut bottom_value = i64::MAX;
        let mut bottom_count = 0;
        for (g, a) in alpha.iter().enumerate() {
            if !self.participant(g) {
                continue;
            }
            let l = a.level();
            if l < bottom_value {
                bottom_value = l;
                bottom_count = 1;
            } else if l == bottom_value {
                bottom_count += 1;
            }
        }
        TurnTrace {
            turn: self.t,
            alpha,
            excluded,
            messages_sent: self.turn_messages,
            bottom_value,
            bottom_count,
            consensus_turn: self.consensus_now,
        }
    }

    /// Awareness of every gnome for one proposal this turn.
    pub fn alpha_of(&self, pid: ProposalId) -> Option<Vec<Awareness>> {
        let k = self.proposals.iter().position(|p| p.pid == pid)? as u32;
        Some(
            (0..self.n)
                .map(|g| Awareness::from_raw(self.alpha[self.idx(k, g)]))
                .collect(),
        )
    }

    pub fn swarm_clock(&self, g: GnomeId) -> i64 {
        self.clock[g.index()]
    }

    pub fn into_result(mut self, turns: Vec<TurnTrace>) -> RunResult {
        if self.round_in_progress() {
            let outcome = self.outcome(None);
            self.rounds.push(outcome);
        }
        let halt = if self.t >= self.sc.max_turns && !self.finished_early() {
            HaltReason::MaxTurns
        } else {
            HaltReason::Quiescent
        };
        RunResult {
            n: self.n,
            d: self.d,
            turns,
            rounds: self.rounds,
            proposals: self.proposals,
            violations: self.violations,
            rejected: self.rejected,
            announces: self.announces,
            total_messages: self.total_messages,
            halt,
            last_turn: self.t,
        }
    }

    fn finished_early(&self) -> bool {
        !self.sc.run_to_max
            && !self.future_events()
            && match (self.round_open, self.resolved_at) {
                (false, _) => true,
                // late injections still get their 2d turns to spread
            (true, Some(r)) => {
                self.t > r
                    && self.round_props.iter().all(|&k| {
                        let at = self.added_at[k as usize];
                        at < r || self.t > at + 2 * self.d as i64
                    })
            }
                (true, None) => false,
            }
    }
}

/// Runs a scenario to completion, keeping every turn's snapshot.
pub fn run(scenario: Scenario<'_>) -> Result<RunResult, SimError> {
    run_observed(scenario, |_| true)
}

/// Runs a scenario, handing each snapshot to `observe`; snapshots are kept
/// only while `observe` returns `true`. Large runs can stream to disk and
/// return `false` to keep memory flat.
pub fn run_observed(
    scenario: Scenario<'_>,
    mut observe: impl FnMut(&TurnTrace) -> bool,
) -> Result<RunResult, SimError> {
    let mut engine = SyncEngine::new(scenario)?;
    let mut turns = Vec::new();
    loop {
        let snap = engine.snapshot();
        if observe(&snap) {
            turns.push(snap);
        }
        if !engine.step() {
            let snap = engine.snapshot();
            if engine.turn() > turns.last().map_or(-1, |t: &TurnTrace| t.turn) && observe(&snap) {
                turns.push(snap);
            }
            break;
        }
    }
    Ok(engine.into_result(turns))
}

/// Awareness of every gnome after `t` turns, computed straight from the
/// global recurrence with no messages: `a_0(p) = 0`, everyone else `-1`,
/// then `a_{s+1}(g) = 1 + min over N(g)` once some member of `N(g)` is aware.
pub fn oracle_alpha(topo: &Topology, proposer: GnomeId, t: u32) -> Vec<Awareness> {
    let n = topo.len();
    let mut cur = vec![-1i64; n];
    cur[proposer.index()] = 0;
    let mut next = cur.clone();
    for _ in 0..t {
        for g in 0..n {
            let mut min = cur[g];
            let mut aware = cur[g] >= 0;
            for h in topo.neighbors(GnomeId(g as u32)) {
                let v = cur[h.index()];
                min = min.min(v);
                aware |= v >= 0;
            }
            next[g] = if aware { 1 + min } else { -1 };
        }
        core::mem::swap(&mut cur, &mut next);
    }
    cur.into_iter().map(Awareness::from_level).collect()
}

/// One row of the per-turn awareness histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramRow {
    pub turn: i64,
    pub participants: usize,
    pub confused: usize,
    pub unaware: usize,
    /// `radius[k]` counts gnomes at `Radius(k)` for `k < d`.
    pub radius: Vec<usize>,
    /// Gnomes at `Radius(k)` with `k >= d`.
    pub at_least_d: usize,
    pub bottom_count: usize,
    pub cumulative_messages: u64,
}

impl HistogramRow {
    pub fn from_alphas(
        turn: i64,
        alphas: impl IntoIterator<Item = Awareness>,
        d: u32,
        cumulative_messages: u64,
    ) -> Self {
        let mut row = HistogramRow {
            turn,
            participants: 0,
            confused: 0,
            unaware: 0,
            radius: vec![0; d as usize],
            at_least_d: 0,
            bottom_count: 0,
            cumulative_messages,
        };
        let mut bottom = i64::MAX;
        for a in alphas {
            row.participants += 1;
            match a {
                Awareness::Confused => row.confused += 1,
                Awareness::Unaware => row.unaware += 1,
                Awareness::Radius(k) if k >= d => row.at_least_d += 1,
                Awareness::Radius(k) => row.radius[k as usize] += 1,
            }
            let l = a.level();
            if l < bottom {
                bottom = l;
                row.bottom_count = 1;
            } else if l == bottom {
                row.bottom_count += 1;
            }
        }
        row
    }

    /// Percentages in column order: confused, unaware, radius 0..d, `>= d`.
    pub fn percentages(&self) -> Vec<f64> {
        let total = self.participants.max(1) as f64;
        let mut v = Vec::with_capacity(self.radius.len() + 3);
        v.push(self.confused as f64 * 100.0 / total);
        v.push(self.unaware as f64 * 100.0 / total);
        v.extend(self.radius.iter().map(|&c| c as f64 * 100.0 / total));
        v.push(self.at_least_d as f64 * 100.0 / total);
        v
    }
}

/// Per-turn histogram over a trace, with cumulative message counts.
pub fn metrics(turns: &[TurnTrace], d: u32) -> Vec<HistogramRow> {
    let mut cumulative = 0;
    turns
        .iter()
        .map(|t| {
            cumulative += t.messages_sent;
            HistogramRow::from_alphas(t.turn, t.participants().map(|(_, a)| a), d, cumulative)
        })
        .collect()
}
