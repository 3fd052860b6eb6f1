//! Fault and attack scripts: jokers, churn, and the measurements used to
//! judge their effect against an injection-free baseline.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::protocol::{consensus_reached, Awareness, RankKey, Rule};
use crate::sync::{ProposerSpec, RunResult, Scenario};
use crate::topology::{generate, GnomeId, GraphKind, Topology, TopologyError};

/// What a scripted announce is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptSubject {
    /// The proposal the joker is currently relaying.
    Tracked,
    /// The joker's own proposal, created on first use.
    Fresh,
    Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedAnnounce {
    pub turn: i64,
    pub subject: ScriptSubject,
    pub alpha: Awareness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Inject a competing proposal while the victim is still spreading.
    Confuse,
    /// Claim a (nonexistent) friend is confused.
    Fool,
    /// Inject a competing proposal after the victim was acted on.
    Trick,
    /// Inject a competing proposal stamped `offset` turns in the past.
    Backdate { offset: u32 },
    /// Relay honestly, except for the listed announces.
    Custom(Vec<ScriptedAnnounce>),
    /// Relay honestly but never become confused.
    Stubborn,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Confuse => "confuse",
            Strategy::Fool => "fool",
            Strategy::Trick => "trick",
            Strategy::Backdate { .. } => "backdate",
            Strategy::Custom(_) => "custom",
            Strategy::Stubborn => "stubborn",
        }
    }

    /// Whether the joker creates its own competing proposal at `inject_at`.
    pub fn injects_proposal(&self) -> bool {
        matches!(
            self,
            Strategy::Confuse | Strategy::Trick | Strategy::Backdate { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JokerScript {
    pub joker: GnomeId,
    pub strategy: Strategy,
    pub inject_at: i64,
}

impl JokerScript {
    pub fn confuse(joker: GnomeId, t_c: i64) -> Self {
        JokerScript { joker, strategy: Strategy::Confuse, inject_at: t_c }
    }

    pub fn fool(joker: GnomeId, t_f: i64) -> Self {
        JokerScript { joker, strategy: Strategy::Fool, inject_at: t_f }
    }

    pub fn trick(joker: GnomeId, t_t: i64) -> Self {
        JokerScript { joker, strategy: Strategy::Trick, inject_at: t_t }
    }

    pub fn backdate(joker: GnomeId, at: i64, offset: u32) -> Self {
        JokerScript { joker, strategy: Strategy::Backdate { offset }, inject_at: at }
    }

    pub fn custom(joker: GnomeId, script: Vec<ScriptedAnnounce>) -> Self {
        let inject_at = script.iter().map(|s| s.turn).min().unwrap_or(0);
        JokerScript { joker, strategy: Strategy::Custom(script), inject_at }
    }

    pub fn stubborn(joker: GnomeId, from: i64) -> Self {
        JokerScript { joker, strategy: Strategy::Stubborn, inject_at: from }
    }

    /// Turns offset by how far the stamp is forged into the past.
    pub fn backdate_offset(&self) -> u32 {
        match self.strategy {
            Strategy::Backdate { offset } => offset,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.inject_at < 0 {
            return Err(ScriptError::NegativeInjection(self.joker));
        }
        if let Strategy::Backdate { offset: 0 } = self.strategy {
            return Err(ScriptError::ZeroBackdate(self.joker));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnKind {
    Join,
    Leave,
}

/// A membership change applied at the start of `turn`. Joining gnomes must
/// already exist in the topology; their links are its adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChurnEvent {
    pub turn: i64,
    pub gnome: GnomeId,
    pub kind: ChurnKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChurnScript {
    pub events: Vec<ChurnEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("joker {0} has a negative injection turn")]
    NegativeInjection(GnomeId),
    #[error("joker {0} backdates by zero turns")]
    ZeroBackdate(GnomeId),
    #[error("churn at turn {turn}: gnome {gnome} {reason}")]
    Churn {
        turn: i64,
        gnome: GnomeId,
        reason: &'static str,
    },
    #[error("churn at turn {turn} breaks the swarm: {source}")]
    ChurnTopology { turn: i64, source: TopologyError },
}

impl ChurnScript {
    /// Gnomes whose first event is a join start outside the swarm.
    pub fn initial_membership(&self, n: usize) -> Vec<bool> {
        let mut present = vec![true; n];
        let mut seen = BTreeSet::new();
        for e in self.sorted() {
            if seen.insert(e.gnome) && e.kind == ChurnKind::Join {
                if let Some(p) = present.get_mut(e.gnome.index()) {
                    *p = false;
                }
            }
        }
        present
    }

    pub fn sorted(&self) -> Vec<ChurnEvent> {
        let mut v = self.events.clone();
        v.sort_by_key(|e| (e.turn, e.gnome));
        v
    }

    /// Replays membership changes and checks the swarm stays connected with
    /// diameter at most `d_bound` after every event.
    pub fn validate(&self, topo: &Topology) -> Result<(), ScriptError> {
        if self.events.is_empty() {
            return Ok(());
        }
        let mut present = self.initial_membership(topo.len());
        check_members(topo, &present, 0)?;
        for e in self.sorted() {
            topo.check(e.gnome).map_err(|source| ScriptError::ChurnTopology {
                turn: e.turn,
                source,
            })?;
            let slot = &mut present[e.gnome.index()];
            match (e.kind, *slot) {
                (ChurnKind::Join, true) => {
                    return Err(ScriptError::Churn {
                        turn: e.turn,
                        gnome: e.gnome,
                        reason: "joins while already present",
                    })
                }
                (ChurnKind::Leave, false) => {
                    return Err(ScriptError::Churn {
                        turn: e.turn,
                        gnome: e.gnome,
                        reason: "leaves while absent",
                    })
                }
                (ChurnKind::Join, false) => *slot = true,
                (ChurnKind::Leave, true) => *slot = false,
            }
            check_members(topo, &present, e.turn)?;
        }
        Ok(())
    }
}

fn check_members(topo: &Topology, present: &[bool], turn: i64) -> Result<(), ScriptError> {
    if !present.iter().any(|&p| p) {
        return Ok(());
    }
    let d = topo
        .induced_diameter(present)
        .map_err(|source| ScriptError::ChurnTopology { turn, source })?;
    if d > topo.d_bound() {
        return Err(ScriptError::ChurnTopology {
            turn,
            source: TopologyError::DiameterExceeded {
                diameter: d,
                bound: topo.d_bound(),
            },
        });
    }
    Ok(())
}

/// Merry-swarm choice for one gnome: among the proposals it tracks, the one
/// that has reached radius `d`, ties broken by rank key. Returns its index.
pub fn merry_resolve(candidates: &[(RankKey, Awareness)], d: u32) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, (_, a))| consensus_reached(*a, d))
        .min_by_key(|(_, (k, _))| *k)
        .map(|(i, _)| i)
}

/// Gnomes whose recorded awareness at `turn` differs between two runs.
pub fn divergence(baseline: &RunResult, attacked: &RunResult, turn: i64) -> Vec<GnomeId> {
    let (Some(a), Some(b)) = (baseline.turn(turn), attacked.turn(turn)) else {
        return Vec::new();
    };
    a.alpha
        .iter()
        .zip(&b.alpha)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| GnomeId(i as u32))
        .collect()
}

/// Honest gnomes that acted in the baseline but not under attack.
pub fn fooled_set(baseline: &RunResult, attacked: &RunResult, jokers: &[GnomeId]) -> Vec<GnomeId> {
    let (Some(base), Some(att)) = (baseline.first_round(), attacked.first_round()) else {
        return Vec::new();
    };
    base.acted
        .iter()
        .zip(&att.acted)
        .enumerate()
        .filter(|(i, (b, a))| {
            b.is_some() && a.is_none() && !jokers.contains(&GnomeId(*i as u32))
        })
        .map(|(i, _)| GnomeId(i as u32))
        .collect()
}

/// A violation flagged by an honest gnome against a neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ViolationEvent {
    pub turn: i64,
    pub detector: GnomeId,
    pub violator: GnomeId,
    pub rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SanityMode {
    #[default]
    Off,
    /// Report violations only.
    Log,
    /// Report, and drop all later announces from the violator at the
    /// detecting gnome.
    Expel,
}

/// A small scenario in which a joker breaks exactly one sanity rule.
#[derive(Debug, Clone)]
pub struct RuleProbe {
    pub rule: Rule,
    pub topology: Topology,
    pub proposers: Vec<ProposerSpec>,
    pub joker: JokerScript,
}

impl RuleProbe {
    pub fn scenario(&self) -> Scenario<'_> {
        let mut sc = Scenario::single(&self.topology, self.proposers[0].gnome);
        sc.proposers = self.proposers.clone();
        sc.jokers = vec![self.joker.clone()];
        sc.sanity = SanityMode::Log;
        sc
    }
}

/// One probe per numbered rule, all on an 8-gnome path with the proposal
/// starting at gnome 0 and the joker at gnome 3. An honest gnome 3 announces
/// radius 0 on turns 3 and 4, 1 on turns 5 and 6, 2 on turns 7 and 8.
pub fn rule_probes() -> Vec<RuleProbe> {
    let topology = generate(GraphKind::Path, 8, 7, 0).expect("a path fits its own diameter");
    let joker = GnomeId(3);
    let at = |turn, subject, k| ScriptedAnnounce { turn, subject, alpha: Awareness::Radius(k) };
    let origin = ProposerSpec { gnome: GnomeId(0), turn: 0, payload: Vec::new() };
    let probe = |rule, script: JokerScript, extra: Option<ProposerSpec>| {
        let mut proposers = vec![origin.clone()];
        proposers.extend(extra);
        RuleProbe { rule, topology: topology.clone(), proposers, joker: script }
    };
    vec![
        probe(
            Rule::Backtrack,
            JokerScript::custom(joker, vec![at(6, ScriptSubject::Tracked, 0)]),
            None,
        ),
        probe(
            Rule::Stall,
            JokerScript::custom(joker, vec![at(7, ScriptSubject::Tracked, 1)]),
            None,
        ),
        probe(
            Rule::Overreach,
            JokerScript::custom(joker, vec![at(5, ScriptSubject::Tracked, 6)]),
            None,
        ),
        probe(
            Rule::ConcurrentProposal,
            JokerScript::custom(joker, vec![at(5, ScriptSubject::Fresh, 0)]),
            None,
        ),
        probe(
            Rule::IgnoredConflict,
            // gnome 4 meets the rival proposal from gnome 7 and announces
            // confusion on turn 5; the joker then keeps climbing
            JokerScript::custom(joker, vec![at(6, ScriptSubject::Tracked, 2)]),
            Some(ProposerSpec { gnome: GnomeId(7), turn: 2, payload: Vec::new() }),
        ),
    ]
}
