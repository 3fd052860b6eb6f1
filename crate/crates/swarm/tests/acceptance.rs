//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS` or `criterion N: FAIL (reason)` line before asserting.
//! Run with `--nocapture` to see the lines as they complete.

mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm::formats::read_histogram;
use swarm::runner::{run_on, RunConfig};
use swarm_core::adversary::{divergence, rule_probes, JokerScript, SanityMode};
use swarm_core::async_sim::{run_async, AsyncScenario, AsyncTrace, DelayModel};
use swarm_core::protocol::{Awareness, ConflictMode, Subject};
use swarm_core::sync::{oracle_alpha, run, ProposerSpec, RoundVerdict, RunResult, Scenario};
use swarm_core::topology::{generate, GnomeId, GraphKind, Topology};

use common::{bfs, cut_off_by, ecc, kind_from, topology, ClosedForm};

fn report(n: u32, what: &str, outcome: Result<(), String>) {
    match &outcome {
        Ok(()) => println!("criterion {n}: PASS ({what})"),
        Err(e) => println!("criterion {n}: FAIL ({what}): {e}"),
    }
    if let Err(e) = outcome {
        panic!("criterion {n} failed: {e}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

/// Fault-free single-proposal run with the sanity rules watching.
fn honest(topo: &Topology, p: GnomeId) -> RunResult {
    let mut sc = Scenario::single(topo, p);
    sc.sanity = SanityMode::Log;
    run(sc).expect("valid scenario")
}

/// The criterion 1 and 3 workload: every kind, 2 to 1000 gnomes.
fn sweep_1000() -> Vec<(Topology, GnomeId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    (0..504)
        .map(|i| {
            let kind = kind_from(i);
            let n = rng.random_range(2..=1000usize);
            let n = if kind == GraphKind::Complete { n.min(400) } else { n };
            let topo = topology(kind, n, rng.random_range(0..3), rng.random());
            let p = GnomeId(rng.random_range(0..topo.len() as u32));
            (topo, p)
        })
        .collect()
}

fn small_graphs() -> Vec<Topology> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    (0..21).map(|i| topology(kind_from(i), rng.random_range(2..=50), rng.random_range(0..2), rng.random())).collect()
}

fn exact_consensus_turn(topo: &Topology, p: GnomeId, res: &RunResult) -> Result<(), String> {
    let d = topo.d_bound();
    let expect = (ecc(topo, p) + d) as i64;
    ensure!(expect <= 2 * d as i64, "r(p) + d = {expect} above 2d");
    ensure!(res.consensus_turn() == Some(expect), "consensus {:?}, closed form {expect}", res.consensus_turn());
    for t in &res.turns {
        let at_d = t.alpha.iter().filter(|a| a.radius().is_some_and(|k| k >= d)).count();
        if t.turn < expect {
            ensure!(at_d == 0, "{at_d} gnomes at radius d on turn {}", t.turn);
        } else {
            ensure!(at_d == topo.len(), "only {at_d} gnomes at radius d on turn {}", t.turn);
        }
    }
    let round = res.first_round().ok_or("no round")?;
    ensure!(round.acted.iter().all(|a| a.map(|x| x.0) == Some(expect)), "acts not simultaneous");
    Ok(())
}

#[test]
fn criterion_1_simultaneous_consensus() {
    let outcome = (|| {
        let runs = sweep_1000();
        for (i, (topo, p)) in runs.iter().enumerate() {
            exact_consensus_turn(topo, *p, &honest(topo, *p)).map_err(|e| format!("scenario {i} (n={}, p={p}): {e}", topo.len()))?;
        }
        Ok(())
    })();
    report(1, "504 fault-free runs, consensus exactly at r(p)+d, all at once", outcome);
}

#[test]
fn criterion_2_oracle_equivalence() {
    let outcome = (|| {
        let check = |topo: &Topology, p: GnomeId| -> Result<(), String> {
            let res = honest(topo, p);
            let cf = ClosedForm::new(topo, p);
            for t in &res.turns {
                let turn = t.turn as u32;
                ensure!(t.alpha == cf.alphas(turn), "closed form differs, p={p} t={turn}");
                ensure!(t.alpha == oracle_alpha(topo, p, turn), "recurrence differs, p={p} t={turn}");
            }
            Ok(())
        };
        for topo in small_graphs() {
            for p in topo.gnomes() {
                check(&topo, p)?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xC22);
        for i in 0..50 {
            let topo = topology(kind_from(i), rng.random_range(2..=1000), 0, rng.random());
            let p = GnomeId(rng.random_range(0..topo.len() as u32));
            check(&topo, p)?;
        }
        Ok(())
    })();
    report(2, "every position on 21 graphs of <= 50 gnomes, 50 random pairs up to 1000", outcome);
}

#[test]
fn criterion_3_bottom_dynamics() {
    let outcome = (|| {
        for (topo, p) in sweep_1000() {
            let res = honest(&topo, p);
            let r = ecc(&topo, p) as i64;
            let levels = |t: usize| res.turns[t].alpha.iter().map(|a| a.level()).collect::<Vec<_>>();
            for t in 0..res.turns.len() - 1 {
                if (t as i64) < r - 1 {
                    continue;
                }
                let (now, next) = (levels(t), levels(t + 1));
                let b = *now.iter().min().unwrap();
                let b1 = *next.iter().min().unwrap();
                ensure!(b1 == b + 1, "b went {b} -> {b1} at turn {t}");
                ensure!(res.turns[t].bottom_value == b, "trace bottom value at turn {t}");
                let bottom: Vec<usize> = (0..now.len()).filter(|&g| now[g] == b).collect();
                let mut grown = vec![false; now.len()];
                for &g in &bottom {
                    grown[g] = true;
                    for h in topo.neighbors(GnomeId(g as u32)) {
                        grown[h.index()] = true;
                    }
                }
                let next_bottom: Vec<bool> = next.iter().map(|&l| l == b1).collect();
                ensure!(next_bottom == grown, "B_{} is not N(B_{t})", t + 1);
                ensure!(res.turns[t + 1].bottom_count == grown.iter().filter(|&&x| x).count(), "bottom count");
            }
        }
        Ok(())
    })();
    report(3, "b_{t+1} = b_t + 1 and B_{t+1} = N(B_t) from r(p)-1 on", outcome);
}

/// One streamed run over a million gnomes, shared by criteria 4 and 9.
struct BigRun {
    n: usize,
    slots: u64,
    turns: u64,
    messages: u64,
    consensus: Option<i64>,
    histogram: Result<(), String>,
}

fn big_run() -> &'static BigRun {
    static BIG: OnceLock<BigRun> = OnceLock::new();
    BIG.get_or_init(|| {
        let topo = generate(GraphKind::RandomRegular, 1_000_000, 7, 1).expect("de Bruijn overlay meets 7");
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(dir.path().to_path_buf());
        cfg.trace = false;
        let rep = run_on(&cfg, &topo).expect("run succeeds");
        let f = std::fs::File::open(dir.path().join("histogram.csv")).unwrap();
        let histogram = (|| {
            let (n, d, rows) = read_histogram(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
            ensure!(n == topo.len() && d == 7, "preamble");
            ensure!(rows.len() == rep.summary.histogram.len(), "row count");
            for (i, (turn, pct, _)) in rows.iter().enumerate() {
                ensure!(*turn == i as i64, "turns not contiguous");
                ensure!(pct.len() == 7 + 3, "column count");
            }
            let (_, first, _) = &rows[0];
            ensure!((first[1] - 100.0 * (n as f64 - 1.0) / n as f64).abs() < 1e-3, "turn 0 unaware share");
            let c = rep.summary.consensus_turn.ok_or("no consensus")? as usize;
            ensure!(rows[c].1[9] == 100.0, "consensus row not at 100% in the top bucket");
            ensure!(rows[c - 1].1[9] == 0.0, "someone at radius d before consensus");
            Ok(())
        })();
        BigRun {
            n: topo.len(),
            slots: topo.slot_count() as u64,
            turns: rep.summary.histogram.len() as u64,
            messages: rep.summary.total_messages,
            consensus: rep.summary.consensus_turn,
            histogram,
        }
    })
}

#[test]
fn criterion_4_million_gnomes_in_14_turns() {
    let big = big_run();
    let outcome = (|| {
        let c = big.consensus.ok_or("no consensus")?;
        ensure!(c <= 14, "consensus at turn {c}");
        big.histogram.clone()?;
        Ok(())
    })();
    let at = big.consensus.map_or("none".to_string(), |c| c.to_string());
    report(4, &format!("10^6 gnomes, diameter <= 7, consensus at turn {at}"), outcome);
}

fn floor_div(a: f64, b: f64) -> i64 {
    (a / b + 1e-9).floor() as i64
}

fn async_guarantees(topo: &Topology, tr: &AsyncTrace) -> Result<(), String> {
    let tau_max = tr.tau_max;
    let d = topo.d_bound() as i64;
    // the bottom time straight from the per-gnome awareness
    let mu = |tau: f64| topo.gnomes().map(|g| tr.alpha_at(g, tau).level()).min().unwrap();
    for tau in tr.grid() {
        let m = mu(tau);
        ensure!(m >= floor_div(tau, tau_max) - d, "bottom-time floor: mu={m} at tau={tau}");
        if m >= 0 && tau + tau_max <= tr.duration {
            ensure!(mu(tau + tau_max) >= m + 1, "bottom time stalled over one tau_max at tau={tau}");
        }
        let bound = floor_div(tau, d as f64 * tau_max) - 1;
        for g in topo.gnomes() {
            let phase = match tr.alpha_at(g, tau) {
                Awareness::Radius(k) => k as i64 / d,
                _ => -1,
            };
            ensure!(phase >= bound, "phase bound: gnome {g} in phase {phase} < {bound} at tau={tau}");
        }
    }
    Ok(())
}

#[test]
fn criterion_5_async_guarantees() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
        for i in 0..56 {
            let topo = topology(kind_from(i), rng.random_range(2..=150), 0, rng.random());
            let p = GnomeId(rng.random_range(0..topo.len() as u32));
            let tr = run_async(&AsyncScenario::honest(&topo, p, DelayModel::uniform(1.0, rng.random()))).unwrap();
            async_guarantees(&topo, &tr).map_err(|e| format!("run {i}: {e}"))?;
        }
        Ok(())
    })();
    report(5, "56 uniform-delay runs: bottom-time floor, per-step growth and phase bound on the sampling grid", outcome);
}

#[test]
fn criterion_6_constant_delay_matches_turns() {
    let outcome = (|| {
        for i in 0..28 {
            let topo = topology(kind_from(i), 3 + (i * 37) % 200, (i % 2) as u32, i as u64);
            let p = GnomeId((i * 31 % topo.len()) as u32);
            let sync = honest(&topo, p);
            let tau = 1.0;
            let mut sc = AsyncScenario::honest(&topo, p, DelayModel::constant(tau));
            sc.duration = sync.last_turn as f64 * tau;
            let tr = run_async(&sc).unwrap();
            for t in &sync.turns {
                ensure!(tr.alphas_at(t.turn as f64 * tau) == t.alpha, "topology {i}, turn {}", t.turn);
            }
        }
        Ok(())
    })();
    report(6, "28 topologies, constant delay sampled at whole turns", outcome);
}

fn confuse_and_retry(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let topo = topology(kind_from(i), rng.random_range(3..=150), 0, rng.random());
    let d = topo.d_bound() as i64;
    let p = GnomeId(rng.random_range(0..topo.len() as u32));
    let j = GnomeId(rng.random_range(0..topo.len() as u32));
    let dist = bfs(&topo, p)[j.index()] as i64;
    if dist == 0 {
        return Ok(());
    }
    let t_c = rng.random_range(0..dist);
    let mut sc = Scenario::single(&topo, p);
    sc.jokers.push(JokerScript::confuse(j, t_c));
    sc.retry = true;
    sc.max_turns = 12 * d + 20;
    let res = run(sc).unwrap();
    let first = &res.rounds[0];
    ensure!(first.actors() == 0, "someone acted in the confused round");
    let cut_off = cut_off_by(&topo, p, j);
    for g in topo.gnomes() {
        if g != j && !cut_off[g.index()] {
            ensure!(first.confused.contains(&g), "gnome {g} not confused");
        }
    }
    if !cut_off.contains(&true) {
        ensure!(first.verdict == RoundVerdict::Confused, "verdict {:?}", first.verdict);
    }
    let retry = res.rounds.get(1).ok_or("no retry round")?;
    match retry.verdict {
        RoundVerdict::Consensus { turn, .. } => {
            ensure!(turn - retry.start_turn <= 2 * d, "retry took {} turns", turn - retry.start_turn);
        }
        v => return Err(format!("retry ended {v:?}")),
    }
    Ok(())
}

fn backdate_far_is_expelled(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let topo = topology(kind_from(i), rng.random_range(3..=150), 0, rng.random());
    let d = topo.d_bound();
    let p = GnomeId(rng.random_range(0..topo.len() as u32));
    let j = GnomeId(rng.random_range(0..topo.len() as u32));
    if p == j {
        return Ok(());
    }
    let at = rng.random_range(0..4);
    let mut sc = Scenario::single(&topo, p);
    sc.jokers.push(JokerScript::backdate(j, at, d + 1));
    sc.sanity = SanityMode::Expel;
    sc.record_announces = true;
    sc.max_turns = 6 * d as i64 + 10;
    let res = run(sc).unwrap();
    let bogus = res.proposals.iter().find(|q| q.proposer == j).ok_or("no bogus proposal")?.pid;
    let caught: BTreeSet<_> = res.violations.iter().filter(|v| v.violator == j && v.turn == at).map(|v| v.detector).collect();
    ensure!(caught.len() == topo.degree(j), "{} of {} neighbors expelled the joker on contact", caught.len(), topo.degree(j));
    ensure!(
        res.announces.iter().all(|a| a.sender == j || a.subject != Subject::Proposal(bogus)),
        "an honest gnome relayed the backdated proposal"
    );
    Ok(())
}

fn mild_backdate_ranked(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(3..40usize);
    let topo = topology(GraphKind::Path, n, 0, 0);
    let d = topo.d_bound();
    let b = rng.random_range(1..=d);
    let j = GnomeId(n as u32 - 1);
    let p = GnomeId(rng.random_range(0..n as u32 - 1));
    let at = rng.random_range(0..6);
    let mut sc = Scenario::single(&topo, p);
    sc.mode = ConflictMode::Ranked;
    sc.jokers.push(JokerScript::backdate(j, at, b));
    sc.record_announces = true;
    sc.max_turns = 6 * d as i64 + 10;
    let res = run(sc).unwrap();
    let bogus = res.proposals.iter().find(|q| q.proposer == j).ok_or("no bogus proposal")?;
    for round in &res.rounds {
        ensure!(round.acted.iter().all(|a| a.is_none_or(|x| x.1 != bogus.pid)), "bogus proposal acted on (n={n}, b={b})");
    }
    let nominal = at - b as i64 + 2 * d as i64;
    ensure!(
        res.announces.iter().all(|a| a.sender == j
            || a.subject != Subject::Proposal(bogus.pid)
            || a.turn > nominal
            || a.alpha.radius().is_none_or(|k| k < d)),
        "bogus proposal at radius d by its nominal turn"
    );
    Ok(())
}

fn fool_or_trick_is_local(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let topo = topology(kind_from(i), rng.random_range(3..=150), 0, rng.random());
    let d = topo.d_bound() as i64;
    let p = GnomeId(rng.random_range(0..topo.len() as u32));
    let j = GnomeId(rng.random_range(0..topo.len() as u32));
    if p == j {
        return Ok(());
    }
    let trick = i % 2 == 1;
    let consensus = ecc(&topo, p) as i64 + d;
    let at = if trick { consensus + 1 + rng.random_range(0..=d) } else { rng.random_range(0..=consensus) };
    let horizon = at + 2 * d + 4;
    let mut base = Scenario::single(&topo, p);
    base.run_to_max = true;
    base.max_turns = horizon;
    let mut attacked = base.clone();
    attacked.jokers.push(if trick { JokerScript::trick(j, at) } else { JokerScript::fool(j, at) });
    let (base, attacked) = (run(base).unwrap(), run(attacked).unwrap());
    let dj = bfs(&topo, j);
    for t in 0..=horizon {
        for g in divergence(&base, &attacked, t) {
            ensure!(t >= at && dj[g.index()] as i64 <= t - at, "turn {t}: gnome {g} at distance {} diverged", dj[g.index()]);
        }
    }
    Ok(())
}

fn merry_race(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let topo = topology(kind_from(i), rng.random_range(2..=200), 0, rng.random());
    let p = GnomeId(rng.random_range(0..topo.len() as u32));
    let q = GnomeId(rng.random_range(0..topo.len() as u32));
    if p == q {
        return Ok(());
    }
    let mut sc = Scenario::single(&topo, p);
    sc.mode = ConflictMode::Merry;
    sc.proposers.push(ProposerSpec { gnome: q, turn: rng.random_range(0..12), payload: vec![] });
    sc.max_turns = 6 * topo.d_bound() as i64 + 20;
    let res = run(sc).unwrap();
    let round = res.first_round().ok_or("no round")?;
    let acts: BTreeSet<_> = round.acted.iter().map(|a| a.map(|x| x.1)).collect();
    ensure!(acts.len() == 1 && !acts.contains(&None), "race {i}: acts {acts:?}");
    Ok(())
}

#[test]
fn criterion_7_byzantine_outcomes() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
        for i in 0..80 {
            confuse_and_retry(&mut rng, i).map_err(|e| format!("(a) trial {i}: {e}"))?;
        }
        for i in 0..80 {
            backdate_far_is_expelled(&mut rng, i).map_err(|e| format!("(b) far, trial {i}: {e}"))?;
            mild_backdate_ranked(&mut rng).map_err(|e| format!("(b) mild, trial {i}: {e}"))?;
        }
        for i in 0..80 {
            fool_or_trick_is_local(&mut rng, i).map_err(|e| format!("(c) trial {i}: {e}"))?;
        }
        let mut races = 0;
        for i in 0..120 {
            merry_race(&mut rng, i).map_err(|e| format!("(d) {e}"))?;
            races += 1;
        }
        ensure!(races >= 100, "too few races");
        Ok(())
    })();
    report(7, "confuse+retry, backdate expel / ranked, fool and trick locality, 120 merry races", outcome);
}

#[test]
fn criterion_8_sanity_soundness() {
    let outcome = (|| {
        let mut runs = 0;
        let clean = |res: &RunResult| -> Result<(), String> {
            ensure!(res.violations.is_empty(), "false positive: {:?}", res.violations[0]);
            Ok(())
        };
        for (topo, p) in sweep_1000() {
            clean(&honest(&topo, p))?;
            runs += 1;
        }
        for topo in small_graphs() {
            for p in topo.gnomes() {
                clean(&honest(&topo, p))?;
                runs += 1;
            }
        }
        for probe in rule_probes() {
            let res = run(probe.scenario()).unwrap();
            let against: Vec<_> = res.violations.iter().filter(|v| v.violator == probe.joker.joker).collect();
            ensure!(against.iter().any(|v| v.rule == probe.rule), "rule {:?} did not fire", probe.rule);
        }
        println!("  {runs} honest runs clean, 5 scripted rules detected");
        Ok(())
    })();
    report(8, "no false positives on honest runs; each rule fires on its joker", outcome);
}

/// Least-squares slope of `y` against `x`.
fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    cov / var
}

#[test]
fn criterion_9_message_scaling() {
    let outcome = (|| {
        // per-run bound over the criterion 1 workload
        for (topo, p) in sweep_1000() {
            let res = honest(&topo, p);
            let bound = res.turns.len() as u64 * topo.slot_count() as u64;
            ensure!(res.total_messages <= bound, "{} messages over bound {bound}", res.total_messages);
        }
        let mut pts = Vec::new();
        for n in [1_000usize, 10_000, 100_000] {
            let topo = generate(GraphKind::RandomRegular, n, 7, 1).unwrap();
            let res = run(Scenario::single(&topo, GnomeId(0))).unwrap();
            let bound = res.turns.len() as u64 * topo.slot_count() as u64;
            ensure!(res.total_messages <= bound, "n={n}: over bound");
            let turns = res.consensus_turn().ok_or("no consensus")? as f64;
            let degree = topo.slot_count() as f64 / n as f64;
            pts.push(((degree * turns).ln(), (res.total_messages as f64 / n as f64).ln()));
            println!("  n={n}: mean degree {degree:.2}, consensus {turns}, messages per gnome {:.1}", res.total_messages as f64 / n as f64);
        }
        let big = big_run();
        ensure!(big.messages <= big.turns * big.slots, "n=10^6: over bound");
        let degree = big.slots as f64 / big.n as f64;
        let turns = big.consensus.ok_or("no consensus at 10^6")? as f64;
        pts.push(((degree * turns).ln(), (big.messages as f64 / big.n as f64).ln()));
        println!("  n=1000000: mean degree {degree:.2}, consensus {turns}, messages per gnome {:.1}", big.messages as f64 / big.n as f64);
        let s = slope(&pts);
        println!("  fitted slope of log(messages per gnome) on log(degree x turns): {s:.3}");
        ensure!((0.5..=2.0).contains(&s), "slope {s:.3} outside [0.5, 2]");
        Ok(())
    })();
    report(9, "messages <= turns x sum of degrees; per-gnome messages track degree x turns", outcome);
}
