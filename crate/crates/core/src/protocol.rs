//! The engine-independent gnome state machine.
//!
//! Everything here is a pure function over small value types. Both
//! simulation engines drive the same functions, and [`GnomeState`] wraps
//! them into a self-contained single-gnome reference implementation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::topology::GnomeId;

/// A gnome's knowledge of how far a proposal has spread around it.
///
/// Ordered `Confused < Unaware < Radius(0) < Radius(1) < ...`, so taking a
/// minimum treats confusion as negative infinity and ignorance as `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Awareness {
    Confused,
    Unaware,
    Radius(u32),
}

impl Awareness {
    /// Integer view: `Confused` is `i64::MIN`, `Unaware` is `-1`.
    pub fn level(self) -> i64 {
        match self {
            Awareness::Confused => i64::MIN,
            Awareness::Unaware => -1,
            Awareness::Radius(k) => k as i64,
        }
    }

    pub fn from_level(level: i64) -> Self {
        match level {
            l if l < -1 => Awareness::Confused,
            -1 => Awareness::Unaware,
            l => Awareness::Radius(l.min(u32::MAX as i64) as u32),
        }
    }

    /// Compact encoding used by the engines' flat buffers.
    #[inline]
    pub(crate) fn to_raw(self) -> i32 {
        match self {
            Awareness::Confused => i32::MIN,
            Awareness::Unaware => -1,
            Awareness::Radius(k) => k.min(i32::MAX as u32) as i32,
        }
    }

    #[inline]
    pub(crate) fn from_raw(raw: i32) -> Self {
        match raw {
            i32::MIN => Awareness::Confused,
            -1 => Awareness::Unaware,
            k => Awareness::Radius(k as u32),
        }
    }

    #[inline]
    pub fn is_aware(self) -> bool {
        matches!(self, Awareness::Radius(_))
    }

    pub fn radius(self) -> Option<u32> {
        match self {
            Awareness::Radius(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for Awareness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Awareness::Confused => f.write_str("C"),
            Awareness::Unaware => f.write_str("U"),
            Awareness::Radius(k) => write!(f, "{k}"),
        }
    }
}

/// Error for [`Awareness`] text parsing.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid awareness value {0:?} (expected C, U or a non-negative integer)")]
pub struct ParseAwarenessError(pub alloc::string::String);

impl core::str::FromStr for Awareness {
    type Err = ParseAwarenessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "C" => Ok(Awareness::Confused),
            "U" => Ok(Awareness::Unaware),
            t => t
                .parse::<u32>()
                .map(Awareness::Radius)
                .map_err(|_| ParseAwarenessError(s.into())),
        }
    }
}

/// One synchronous awareness update.
///
/// `heard` holds one entry per member of `N(g)`, the gnome itself included,
/// with `Unaware` for silent neighbors. Confusion is absorbing; otherwise the
/// result is `1 + min(heard)` (ignorance counting as `-1`), clamped so it never
/// drops below `own`.
pub fn alpha_step(own: Awareness, heard: impl IntoIterator<Item = Awareness>) -> Awareness {
    if own == Awareness::Confused {
        return Awareness::Confused;
    }
    let mut min = None::<Awareness>;
    let mut any_aware = false;
    for a in heard {
        if a == Awareness::Confused {
            return Awareness::Confused;
        }
        any_aware |= a.is_aware();
        min = Some(min.map_or(a, |m| m.min(a)));
    }
    if !any_aware {
        return own;
    }
    let next = match min {
        Some(Awareness::Radius(k)) => Awareness::Radius(k.saturating_add(1)),
        _ => Awareness::Radius(0),
    };
    next.max(own)
}

/// True once the gnome's awareness neighborhood covers the whole swarm.
#[inline]
pub fn consensus_reached(a: Awareness, d: u32) -> bool {
    matches!(a, Awareness::Radius(k) if k >= d)
}

/// Degree of common knowledge about a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    NotApplicable,
    Phase(u32),
}

impl Phase {
    /// `-1` for [`Phase::NotApplicable`].
    pub fn level(self) -> i64 {
        match self {
            Phase::NotApplicable => -1,
            Phase::Phase(k) => k as i64,
        }
    }
}

/// `floor(k / d)` for `Radius(k)`; not applicable otherwise.
pub fn phase_of(a: Awareness, d: u32) -> Phase {
    assert!(d >= 1, "phases need a diameter bound of at least 1");
    match a {
        Awareness::Radius(k) => Phase::Phase(k / d),
        _ => Phase::NotApplicable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProposalId(pub u64);

impl ProposalId {
    /// Proposal ids are unique per (proposer, sequence number).
    pub fn new(proposer: GnomeId, seq: u32) -> Self {
        ProposalId(((proposer.0 as u64) << 32) | seq as u64)
    }
}

impl fmt::Display for ProposalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Total order on proposals: swarm-time creation turn, then proposer rank,
/// then proposal id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankKey {
    pub nominal_turn: i64,
    pub proposer_rank: u64,
    pub pid: ProposalId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub pid: ProposalId,
    pub proposer: GnomeId,
    /// Swarm-clock value at creation (possibly forged by a joker).
    pub nominal_turn: i64,
    pub proposer_rank: u64,
    pub payload: Vec<u8>,
}

impl Proposal {
    pub fn rank_key(&self) -> RankKey {
        RankKey {
            nominal_turn: self.nominal_turn,
            proposer_rank: self.proposer_rank,
            pid: self.pid,
        }
    }
}

/// `Less` means `a` wins.
pub fn order_proposals(a: &Proposal, b: &Proposal) -> Ordering {
    a.rank_key().cmp(&b.rank_key())
}

/// What an announce is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Proposal(ProposalId),
    Confusion,
}

impl Subject {
    pub fn pid(self) -> Option<ProposalId> {
        match self {
            Subject::Proposal(p) => Some(p),
            Subject::Confusion => None,
        }
    }
}

/// A relayed awareness value. Gnomes never announce `Unaware`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Announce {
    pub sender: GnomeId,
    pub subject: Subject,
    pub alpha: Awareness,
    pub turn: i64,
}

impl Announce {
    pub fn confusion(sender: GnomeId, turn: i64) -> Self {
        Announce {
            sender,
            subject: Subject::Confusion,
            alpha: Awareness::Confused,
            turn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackdateVerdict {
    Plausible,
    ExpelProposer,
}

/// A proposal created at swarm time `T` reaches every gnome within `d` turns.
/// Hearing of it later than that means its creation turn was forged.
pub fn backdate_check(p: &Proposal, first_heard_clock: i64, d: u32) -> BackdateVerdict {
    if first_heard_clock.saturating_sub(p.nominal_turn) > d as i64 {
        BackdateVerdict::ExpelProposer
    } else {
        BackdateVerdict::Plausible
    }
}

/// Swarm time: `1 + min` of the clocks heard (own clock included), never
/// moving backwards.
pub fn clock_step(own: i64, heard: impl IntoIterator<Item = i64>) -> i64 {
    match heard.into_iter().min() {
        Some(m) => own.max(m.saturating_add(1)),
        None => own,
    }
}

/// The five neighbor sanity rules, plus the backdating test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    /// Announced a smaller radius than before.
    Backtrack = 1,
    /// Stayed at one radius for more than two turns while a proposal circulates.
    Stall = 2,
    /// Claimed more than one above what we told it.
    Overreach = 3,
    /// Switched to a different proposal before the previous one finished.
    ConcurrentProposal = 4,
    /// Kept progressing after being told of a conflicting proposal.
    IgnoredConflict = 5,
    /// Relayed a proposal whose creation turn is implausibly old.
    Backdate = 6,
}

impl Rule {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Rule::Backtrack => "1",
            Rule::Stall => "2",
            Rule::Overreach => "3",
            Rule::ConcurrentProposal => "4",
            Rule::IgnoredConflict => "5",
            Rule::Backdate => "backdate",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "1" => Rule::Backtrack,
            "2" => Rule::Stall,
            "3" => Rule::Overreach,
            "4" => Rule::ConcurrentProposal,
            "5" => Rule::IgnoredConflict,
            "backdate" => Rule::Backdate,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violation(Rule),
}

/// The latest value a neighbor announced on one subject and the turn it first
/// announced that value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeardRecord {
    pub alpha: Awareness,
    pub since: i64,
}

/// Everything a gnome knows when it vets one incoming announce.
#[derive(Debug, Clone, Copy)]
pub struct SanityInput<'a> {
    /// Previous record from the same neighbor on the same subject.
    pub prev: Option<HeardRecord>,
    pub next: &'a Announce,
    /// What we told this neighbor about `next.subject` on the previous turn
    /// (`Unaware` if we were silent); `None` when rule 3 does not apply.
    pub told: Option<Awareness>,
    /// Whether we announced something conflicting with `next.subject` to
    /// this neighbor on the previous turn.
    pub told_conflict: bool,
    /// Another proposal this neighbor already announced in the current round.
    pub other_proposal: Option<ProposalId>,
    /// The neighbor may legitimately move to a different proposal.
    pub may_switch: bool,
    /// A new action is circulating and the round is not complete.
    pub circulating: bool,
}

/// Returns the lowest-numbered rule the announce violates.
pub fn check_sanity(input: &SanityInput<'_>) -> Verdict {
    let next = input.next;
    let Subject::Proposal(pid) = next.subject else {
        return Verdict::Ok;
    };
    if let Some(prev) = input.prev {
        if next.alpha < prev.alpha {
            return Verdict::Violation(Rule::Backtrack);
        }
        if input.circulating
            && next.alpha.is_aware()
            && next.alpha == prev.alpha
            && next.turn - prev.since >= 2
        {
            return Verdict::Violation(Rule::Stall);
        }
    }
    if let Some(told) = input.told {
        if told != Awareness::Confused && next.alpha.level() > told.level().max(-1) + 1 {
            return Verdict::Violation(Rule::Overreach);
        }
    }
    if let Some(other) = input.other_proposal {
        if other != pid && !input.may_switch {
            return Verdict::Violation(Rule::ConcurrentProposal);
        }
    }
    if input.told_conflict {
        if let Some(prev) = input.prev {
            if next.alpha > prev.alpha {
                return Verdict::Violation(Rule::IgnoredConflict);
            }
        }
    }
    Verdict::Ok
}

/// How gnomes treat two proposals circulating in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictMode {
    /// Contradicting proposals confuse the gnome.
    Plain,
    /// Keep the proposal with the smaller rank key, drop the other.
    Ranked,
    /// Track every proposal independently; act on the first to reach `d`.
    Merry,
}

impl ConflictMode {
    pub fn name(self) -> &'static str {
        match self {
            ConflictMode::Plain => "plain",
            ConflictMode::Ranked => "ranked",
            ConflictMode::Merry => "merry",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(ConflictMode::Plain),
            "ranked" => Some(ConflictMode::Ranked),
            "merry" => Some(ConflictMode::Merry),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("gnome {0} joined mid-round and may not propose until the next round")]
    JoinPending(GnomeId),
    #[error("gnome {gnome} already has proposal {active} in flight")]
    RoundInProgress { gnome: GnomeId, active: ProposalId },
}

/// A single gnome's round state.
///
/// Registers in `last_heard` follow synchronous semantics: each call to
/// [`GnomeState::advance`] replaces them with that turn's announces, and a
/// neighbor that said nothing counts as `Unaware`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnomeState {
    pub me: GnomeId,
    pub round: u64,
    /// Sorted map from proposal id to this gnome's awareness of it.
    pub active: Vec<(ProposalId, Awareness)>,
    pub confused: bool,
    pub swarm_clock: i64,
    pub last_heard: BTreeMap<(GnomeId, Subject), Awareness>,
    pub join_pending: bool,
    pub rank: u64,
    /// Swarm time at which this gnome became confused.
    pub confused_since: Option<i64>,
    /// Set once the gnome has acted on a proposal this round.
    pub acted: Option<ProposalId>,
    seq: u32,
}

impl GnomeState {
    pub fn new(me: GnomeId, swarm_clock: i64) -> Self {
        GnomeState {
            me,
            round: 0,
            active: Vec::new(),
            confused: false,
            swarm_clock,
            last_heard: BTreeMap::new(),
            join_pending: false,
            rank: me.0 as u64,
            confused_since: None,
            acted: None,
            seq: 0,
        }
    }

    pub fn awareness(&self, pid: ProposalId) -> Awareness {
        if self.confused {
            return Awareness::Confused;
        }
        self.active
            .binary_search_by_key(&pid, |e| e.0)
            .map(|i| self.active[i].1)
            .unwrap_or(Awareness::Unaware)
    }

    fn set_awareness(&mut self, pid: ProposalId, a: Awareness) {
        match self.active.binary_search_by_key(&pid, |e| e.0) {
            Ok(i) => self.active[i].1 = a,
            Err(i) => self.active.insert(i, (pid, a)),
        }
    }

    /// Clears round state so a new proposal can start.
    pub fn start_round(&mut self) {
        self.round += 1;
        self.active.clear();
        self.confused = false;
        self.confused_since = None;
        self.acted = None;
        self.last_heard.clear();
        self.join_pending = false;
    }

    /// Creates a proposal stamped with the current swarm time.
    ///
    /// Refuses while another proposal is in flight, unless that round is
    /// complete or the gnome has been confused for at least
    /// `confusion_timeout` turns, in which case a new round starts.
    pub fn propose(
        &mut self,
        payload: Vec<u8>,
        confusion_timeout: i64,
    ) -> Result<(Proposal, Announce), ProtocolError> {
        if self.join_pending {
            return Err(ProtocolError::JoinPending(self.me));
        }
        let timed_out = self
            .confused_since
            .is_some_and(|t| self.swarm_clock - t >= confusion_timeout);
        if !self.active.is_empty() {
            if self.acted.is_none() && !timed_out {
                return Err(ProtocolError::RoundInProgress {
                    gnome: self.me,
                    active: self.active[0].0,
                });
            }
            self.start_round();
        }
        let pid = ProposalId::new(self.me, self.seq);
        self.seq += 1;
        let proposal = Proposal {
            pid,
            proposer: self.me,
            nominal_turn: self.swarm_clock,
            proposer_rank: self.rank,
            payload,
        };
        self.set_awareness(pid, Awareness::Radius(0));
        let announce = Announce {
            sender: self.me,
            subject: Subject::Proposal(pid),
            alpha: Awareness::Radius(0),
            turn: self.swarm_clock,
        };
        Ok((proposal, announce))
    }

    /// Reacts to two proposals being in play at once.
    pub fn on_conflict(&mut self, a: &Proposal, b: &Proposal, mode: ConflictMode) {
        if a.pid == b.pid {
            return;
        }
        match mode {
            ConflictMode::Plain => self.become_confused(),
            ConflictMode::Ranked => {
                let loser = match order_proposals(a, b) {
                    Ordering::Greater => a.pid,
                    _ => b.pid,
                };
                self.active.retain(|e| e.0 != loser);
            }
            ConflictMode::Merry => {}
        }
    }

    fn become_confused(&mut self) {
        if !self.confused {
            self.confused = true;
            self.confused_since = Some(self.swarm_clock);
        }
        for e in &mut self.active {
            e.1 = Awareness::Confused;
        }
    }

    pub fn clock_step(&mut self, heard_clocks: impl IntoIterator<Item = i64>) {
        self.swarm_clock = clock_step(self.swarm_clock, heard_clocks);
    }

    /// What this gnome says this turn.
    pub fn announces(&self, turn: i64) -> Vec<Announce> {
        if self.confused {
            return alloc::vec![Announce::confusion(self.me, turn)];
        }
        self.active
            .iter()
            .filter(|e| e.1.is_aware())
            .map(|&(pid, alpha)| Announce {
                sender: self.me,
                subject: Subject::Proposal(pid),
                alpha,
                turn,
            })
            .collect()
    }

    /// One plain-mode turn: replace the registers with `inbox` (announces from
    /// `neighbors` on the previous turn), then update awareness. Returns the
    /// proposal acted on, if the gnome acts this turn.
    pub fn advance(
        &mut self,
        neighbors: &[GnomeId],
        inbox: &[Announce],
        d: u32,
    ) -> Option<ProposalId> {
        self.last_heard.clear();
        for a in inbox {
            if neighbors.contains(&a.sender) && !self.join_pending {
                self.last_heard.insert((a.sender, a.subject), a.alpha);
            }
        }
        let mut subjects: Vec<ProposalId> = self.active.iter().map(|e| e.0).collect();
        let mut heard_confusion = false;
        for &(_, s) in self.last_heard.keys() {
            match s {
                Subject::Confusion => heard_confusion = true,
                Subject::Proposal(p) => {
                    if !subjects.contains(&p) {
                        subjects.push(p);
                    }
                }
            }
        }
        if heard_confusion || subjects.len() > 1 {
            self.become_confused();
            return None;
        }
        let Some(&pid) = subjects.first() else {
            return None;
        };
        let own = self.awareness(pid);
        let heard = neighbors.iter().map(|&n| {
            self.last_heard
                .get(&(n, Subject::Proposal(pid)))
                .copied()
                .unwrap_or(Awareness::Unaware)
        });
        let next = alpha_step(own, heard.chain(core::iter::once(own)));
        self.set_awareness(pid, next);
        if self.acted.is_none() && consensus_reached(next, d) {
            self.acted = Some(pid);
            return Some(pid);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use Awareness::*;

    #[test]
    fn alpha_step_examples() {
        assert_eq!(alpha_step(Unaware, [Unaware, Unaware]), Unaware);
        assert_eq!(alpha_step(Unaware, [Unaware, Radius(0), Radius(2)]), Radius(0));
        assert_eq!(alpha_step(Radius(3), [Radius(3), Radius(4), Confused]), Confused);
        assert_eq!(alpha_step(Radius(2), [Radius(2), Radius(2), Radius(3)]), Radius(3));
    }

    #[test]
    fn alpha_step_clamps_to_own() {
        assert_eq!(alpha_step(Radius(5), [Radius(1), Radius(5)]), Radius(5));
        assert_eq!(alpha_step(Radius(5), [Unaware]), Radius(5));
        assert_eq!(alpha_step(Confused, [Radius(9)]), Confused);
    }

    #[test]
    fn awareness_order_and_text() {
        assert!(Confused < Unaware && Unaware < Radius(0) && Radius(0) < Radius(1));
        for a in [Confused, Unaware, Radius(0), Radius(17)] {
            assert_eq!(a.to_string().parse::<Awareness>().unwrap(), a);
            assert_eq!(Awareness::from_raw(a.to_raw()), a);
            assert_eq!(Awareness::from_level(a.level()), a);
        }
        assert!("x".parse::<Awareness>().is_err());
    }

    #[test]
    fn consensus_and_phase() {
        assert!(consensus_reached(Radius(4), 4));
        assert!(!consensus_reached(Radius(3), 4));
        assert!(!consensus_reached(Confused, 4));
        assert_eq!(phase_of(Radius(0), 4), Phase::Phase(0));
        assert_eq!(phase_of(Radius(4), 4), Phase::Phase(1));
        assert_eq!(phase_of(Radius(8), 4), Phase::Phase(2));
        assert_eq!(phase_of(Unaware, 4), Phase::NotApplicable);
        assert_eq!(phase_of(Confused, 4), Phase::NotApplicable);
    }

    fn prop(turn: i64, rank: u64, pid: u64) -> Proposal {
        Proposal {
            pid: ProposalId(pid),
            proposer: GnomeId(0),
            nominal_turn: turn,
            proposer_rank: rank,
            payload: Vec::new(),
        }
    }

    #[test]
    fn ordering_examples() {
        assert_eq!(order_proposals(&prop(5, 9, 9), &prop(7, 0, 0)), Ordering::Less);
        assert_eq!(order_proposals(&prop(5, 2, 9), &prop(5, 9, 0)), Ordering::Less);
        assert_eq!(order_proposals(&prop(5, 2, 1), &prop(5, 2, 3)), Ordering::Less);
    }

    #[test]
    fn backdate_examples() {
        let d = 4;
        assert_eq!(backdate_check(&prop(10, 0, 0), 10 + d as i64, d), BackdateVerdict::Plausible);
        assert_eq!(
            backdate_check(&prop(10, 0, 0), 11 + d as i64, d),
            BackdateVerdict::ExpelProposer
        );
        assert_eq!(backdate_check(&prop(10, 0, 0), 10, d), BackdateVerdict::Plausible);
    }

    #[test]
    fn clock_examples() {
        assert_eq!(clock_step(7, [7, 7, 8]), 8);
        assert_eq!(clock_step(7, [5]), 7);
        assert_eq!(clock_step(3, [3, 3, 3]), 4);
    }

    fn ann(alpha: Awareness, turn: i64) -> Announce {
        Announce {
            sender: GnomeId(1),
            subject: Subject::Proposal(ProposalId(0)),
            alpha,
            turn,
        }
    }

    fn input<'a>(prev: Option<HeardRecord>, next: &'a Announce) -> SanityInput<'a> {
        SanityInput {
            prev,
            next,
            told: None,
            told_conflict: false,
            other_proposal: None,
            may_switch: false,
            circulating: true,
        }
    }

    #[test]
    fn sanity_rules() {
        let rec = |a, since| Some(HeardRecord { alpha: a, since });
        let next = ann(Radius(2), 5);
        assert_eq!(
            check_sanity(&input(rec(Radius(3), 4), &next)),
            Verdict::Violation(Rule::Backtrack)
        );
        assert_eq!(
            check_sanity(&input(rec(Radius(2), 3), &next)),
            Verdict::Violation(Rule::Stall)
        );
        assert_eq!(check_sanity(&input(rec(Radius(2), 4), &next)), Verdict::Ok);
        let mut quiet = input(rec(Radius(2), 1), &next);
        quiet.circulating = false;
        assert_eq!(check_sanity(&quiet), Verdict::Ok);

        let jump = ann(Radius(3), 5);
        let mut i = input(rec(Radius(1), 4), &jump);
        i.told = Some(Radius(1));
        assert_eq!(check_sanity(&i), Verdict::Violation(Rule::Overreach));
        i.told = Some(Radius(2));
        assert_eq!(check_sanity(&i), Verdict::Ok);

        let mut i = input(None, &next);
        i.other_proposal = Some(ProposalId(7));
        assert_eq!(check_sanity(&i), Verdict::Violation(Rule::ConcurrentProposal));
        i.may_switch = true;
        assert_eq!(check_sanity(&i), Verdict::Ok);

        let mut i = input(rec(Radius(1), 4), &next);
        i.told_conflict = true;
        assert_eq!(check_sanity(&i), Verdict::Violation(Rule::IgnoredConflict));

        let conf = Announce::confusion(GnomeId(1), 5);
        assert_eq!(check_sanity(&input(rec(Radius(3), 4), &conf)), Verdict::Ok);
    }

    #[test]
    fn propose_guards() {
        let mut g = GnomeState::new(GnomeId(3), 0);
        let (p, a) = g.propose(Vec::new(), 4).unwrap();
        assert_eq!(a.alpha, Radius(0));
        assert_eq!(p.nominal_turn, 0);
        assert!(matches!(
            g.propose(Vec::new(), 4),
            Err(ProtocolError::RoundInProgress { .. })
        ));
        g.become_confused();
        g.swarm_clock = 3;
        assert!(g.propose(Vec::new(), 4).is_err());
        g.swarm_clock = 4;
        let (q, _) = g.propose(Vec::new(), 4).unwrap();
        assert_ne!(q.pid, p.pid);
        assert_eq!(g.round, 1);
        assert!(!g.confused);

        let mut j = GnomeState::new(GnomeId(1), 0);
        j.join_pending = true;
        assert_eq!(j.propose(Vec::new(), 4), Err(ProtocolError::JoinPending(GnomeId(1))));
    }

    #[test]
    fn conflict_modes() {
        let (a, b) = (prop(1, 0, 1), prop(2, 0, 2));
        let mut g = GnomeState::new(GnomeId(0), 0);
        g.set_awareness(a.pid, Radius(1));
        g.on_conflict(&a, &a, ConflictMode::Plain);
        assert!(!g.confused);
        g.set_awareness(b.pid, Radius(0));
        let mut ranked = g.clone();
        g.on_conflict(&a, &b, ConflictMode::Plain);
        assert!(g.confused);
        assert_eq!(g.awareness(a.pid), Confused);
        ranked.on_conflict(&b, &a, ConflictMode::Ranked);
        assert!(!ranked.confused);
        assert_eq!(ranked.active, [(a.pid, Radius(1))]);
    }
}
