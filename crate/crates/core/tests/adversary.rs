mod common;

use proptest::prelude::*;
use swarm_core::adversary::{divergence, JokerScript, SanityMode};
use swarm_core::protocol::{ConflictMode, Rule, Subject};
use swarm_core::sync::{run, RoundVerdict, Scenario};
use swarm_core::topology::{GnomeId, GraphKind};

use common::{bfs, ecc, kind_from, topology};

/// Gnomes with no path to `p` that avoids `j`.
fn cut_off_by(topo: &swarm_core::topology::Topology, p: GnomeId, j: GnomeId) -> Vec<bool> {
    let mut seen = vec![false; topo.len()];
    seen[j.index()] = true;
    seen[p.index()] = true;
    let mut stack = vec![p];
    while let Some(u) = stack.pop() {
        for &v in topo.neighbors(u) {
            if !seen[v.index()] {
                seen[v.index()] = true;
                stack.push(v);
            }
        }
    }
    seen[j.index()] = false;
    seen.iter().enumerate().map(|(g, &s)| !s && g != j.index()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 60, ..ProptestConfig::default() })]

    #[test]
    fn confuse_then_retry((k, n, seed, pick, jpick) in (0usize..7, 3usize..200, any::<u64>(), any::<usize>(), any::<usize>()), frac in 0.0f64..1.0) {
        let topo = topology(kind_from(k), n, 0, seed);
        let d = topo.d_bound() as i64;
        let p = GnomeId((pick % topo.len()) as u32);
        let j = GnomeId((jpick % topo.len()) as u32);
        let dist = bfs(&topo, p)[j.index()] as i64;
        prop_assume!(dist >= 1);
        // injected before the joker itself has heard of the proposal
        let t_c = ((dist as f64) * frac) as i64;
        let t_c = t_c.min(dist - 1);
        let mut sc = Scenario::single(&topo, p);
        sc.jokers.push(JokerScript::confuse(j, t_c));
        sc.retry = true;
        sc.sanity = SanityMode::Log;
        sc.max_turns = 12 * d + 20;
        let res = run(sc).unwrap();
        let first = &res.rounds[0];
        prop_assert_eq!(first.actors(), 0);
        // gnomes that reach the proposer only through the joker never hear
        // of the conflict; everyone else ends confused
        let cut_off = cut_off_by(&topo, p, j);
        for g in topo.gnomes() {
            if g != j && !cut_off[g.index()] {
                prop_assert!(first.confused.contains(&g), "gnome {g} not confused");
            }
        }
        if !cut_off.iter().any(|&c| c) {
            prop_assert_eq!(first.verdict, RoundVerdict::Confused);
        }
        let retry = res.rounds.get(1).expect("a retry round");
        match retry.verdict {
            RoundVerdict::Consensus { turn, .. } => {
                prop_assert!(turn - retry.start_turn <= 2 * d);
                prop_assert!(retry.simultaneous);
            }
            v => prop_assert!(false, "retry ended {:?}", v),
        }
    }

    #[test]
    fn backdate_beyond_d_is_expelled_on_contact((k, n, seed, pick, jpick) in (0usize..7, 3usize..200, any::<u64>(), any::<usize>(), any::<usize>()), at in 0i64..4) {
        let topo = topology(kind_from(k), n, 0, seed);
        let d = topo.d_bound();
        let p = GnomeId((pick % topo.len()) as u32);
        let j = GnomeId((jpick % topo.len()) as u32);
        prop_assume!(p != j);
        let mut sc = Scenario::single(&topo, p);
        sc.jokers.push(JokerScript::backdate(j, at, d + 1));
        sc.sanity = SanityMode::Expel;
        sc.record_announces = true;
        sc.max_turns = 6 * d as i64 + 10;
        let res = run(sc).unwrap();
        let bogus = res.proposals.iter().find(|q| q.proposer == j).unwrap().pid;
        // a joker that was already relaying the honest proposal is caught
        // switching proposals before the stamp is even examined
        let caught: Vec<_> = res.violations.iter().filter(|v| v.violator == j).collect();
        let detectors: std::collections::BTreeSet<_> = caught.iter().map(|v| v.detector).collect();
        prop_assert_eq!(detectors.len(), topo.degree(j));
        for v in caught {
            prop_assert_eq!(v.turn, at);
            prop_assert!(matches!(v.rule, Rule::Backdate | Rule::ConcurrentProposal), "{:?}", v);
            prop_assert!(topo.is_adjacent(v.detector, j));
        }
        prop_assert!(res
            .announces
            .iter()
            .all(|a| a.sender == j || a.subject != Subject::Proposal(bogus)));
        prop_assert!(res.rounds[0].acted.iter().all(|a| a.is_none_or(|x| x.1 != bogus)));
    }

    #[test]
    fn mild_backdate_never_wins_ranked(n in 3usize..40, b in 1u32..40, at in 0i64..6, pick in any::<usize>(), sanity in any::<bool>()) {
        // the joker sits at the end of a path, as far from everyone as possible
        let topo = topology(GraphKind::Path, n, 0, 0);
        let d = topo.d_bound();
        let b = 1 + b % d;
        let j = GnomeId(n as u32 - 1);
        let p = GnomeId((pick % (n - 1)) as u32);
        let mut sc = Scenario::single(&topo, p);
        sc.mode = ConflictMode::Ranked;
        sc.sanity = if sanity { SanityMode::Log } else { SanityMode::Off };
        sc.jokers.push(JokerScript::backdate(j, at, b));
        sc.max_turns = 6 * d as i64 + 10;
        let res = run(sc).unwrap();
        let bogus = res.proposals.iter().find(|q| q.proposer == j).unwrap().pid;
        for round in &res.rounds {
            prop_assert!(round.acted.iter().all(|a| a.is_none_or(|x| x.1 != bogus)));
        }
    }

    #[test]
    fn fool_and_trick_stay_local((k, n, seed, pick, jpick) in (0usize..7, 3usize..150, any::<u64>(), any::<usize>(), any::<usize>()), trick in any::<bool>(), frac in 0.0f64..1.5) {
        let topo = topology(kind_from(k), n, 0, seed);
        let d = topo.d_bound() as i64;
        let p = GnomeId((pick % topo.len()) as u32);
        let j = GnomeId((jpick % topo.len()) as u32);
        prop_assume!(p != j);
        let consensus = ecc(&topo, p) as i64 + d;
        let at = if trick {
            consensus + 1 + (frac * d as f64) as i64
        } else {
            (frac * consensus as f64) as i64
        };
        let horizon = at + 2 * d + 4;
        let mut base = Scenario::single(&topo, p);
        base.run_to_max = true;
        base.max_turns = horizon;
        let mut attacked = base.clone();
        attacked.jokers.push(if trick { JokerScript::trick(j, at) } else { JokerScript::fool(j, at) });
        let base = run(base).unwrap();
        let attacked = run(attacked).unwrap();
        let dj = bfs(&topo, j);
        for t in 0..=horizon {
            let div = divergence(&base, &attacked, t);
            if t < at {
                prop_assert!(div.is_empty(), "turn {t}: {:?}", div);
            } else {
                let k = (t - at) as u32;
                for g in div {
                    prop_assert!(dj[g.index()] <= k, "turn {t}: gnome {g} at distance {}", dj[g.index()]);
                }
            }
        }
    }
}

#[test]
fn confuse_on_a_path() {
    // proposal at gnome 2, joker at gnome 0, injected before it hears anything
    let topo = topology(GraphKind::Path, 6, 0, 0);
    let mut sc = Scenario::single(&topo, GnomeId(2));
    sc.jokers.push(JokerScript::confuse(GnomeId(0), 1));
    sc.retry = true;
    let res = run(sc).unwrap();
    assert_eq!(res.rounds[0].verdict, RoundVerdict::Confused);
    assert!(matches!(res.rounds[1].verdict, RoundVerdict::Consensus { .. }));
}

#[test]
fn late_confuse_from_an_aware_joker_can_split() {
    // once the joker already relayed the proposal, its rival cannot overtake
    // the far end in time: gnome 5 acts while everyone else is confused
    let topo = topology(GraphKind::Path, 6, 0, 0);
    let mut sc = Scenario::single(&topo, GnomeId(2));
    sc.jokers.push(JokerScript::confuse(GnomeId(0), 4));
    let res = run(sc).unwrap();
    let round = &res.rounds[0];
    assert_eq!(round.verdict, RoundVerdict::Split);
    assert_eq!(round.actors(), 1);
    assert_eq!(round.acted[5].map(|a| a.0), Some(8));
}
