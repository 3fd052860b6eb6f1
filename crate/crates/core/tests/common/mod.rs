#![allow(dead_code)]

use std::collections::VecDeque;

use swarm_core::protocol::Awareness;
use swarm_core::topology::{generate, GnomeId, GraphKind, Topology};

/// Plain BFS over the adjacency lists.
pub fn bfs(topo: &Topology, s: GnomeId) -> Vec<u32> {
    let mut dist = vec![u32::MAX; topo.len()];
    let mut q = VecDeque::new();
    dist[s.index()] = 0;
    q.push_back(s);
    while let Some(u) = q.pop_front() {
        for &v in topo.neighbors(u) {
            if dist[v.index()] == u32::MAX {
                dist[v.index()] = dist[u.index()] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Closed-form awareness for a single fault-free proposal started by `p` at
/// turn 0: `α_t(g)` is the largest `l` such that every gnome within `l` hops
/// of `g` was reached by turn `t - l`.
pub struct ClosedForm {
    /// Per gnome, `f(l) = max dist(p, e)` over `e` within `l` hops, until
    /// the whole graph is covered.
    reach: Vec<Vec<u32>>,
    ecc_p: u32,
}

impl ClosedForm {
    pub fn new(topo: &Topology, p: GnomeId) -> Self {
        let dp = bfs(topo, p);
        let ecc_p = *dp.iter().max().unwrap();
        let reach = topo
            .gnomes()
            .map(|g| {
                let dg = bfs(topo, g);
                let radius = *dg.iter().max().unwrap() as usize;
                let mut layer_max = vec![0u32; radius + 1];
                for (e, &l) in dg.iter().enumerate() {
                    let slot = &mut layer_max[l as usize];
                    *slot = (*slot).max(dp[e]);
                }
                let mut f = Vec::with_capacity(radius + 1);
                let mut run = 0;
                for m in layer_max {
                    run = run.max(m);
                    f.push(run);
                }
                f
            })
            .collect();
        ClosedForm { reach, ecc_p }
    }

    pub fn alpha(&self, g: GnomeId, t: u32) -> Awareness {
        let f = &self.reach[g.index()];
        if f[0] > t {
            return Awareness::Unaware;
        }
        let last = f.len() as u32 - 1;
        if self.ecc_p + last <= t {
            return Awareness::Radius(t - self.ecc_p);
        }
        let mut best = 0;
        for (l, &fl) in f.iter().enumerate() {
            if fl + l as u32 <= t {
                best = l as u32;
            } else {
                break;
            }
        }
        Awareness::Radius(best)
    }

    pub fn alphas(&self, t: u32) -> Vec<Awareness> {
        (0..self.reach.len())
            .map(|g| self.alpha(GnomeId(g as u32), t))
            .collect()
    }
}

pub fn ecc(topo: &Topology, g: GnomeId) -> u32 {
    *bfs(topo, g).iter().max().unwrap()
}

fn log2_ceil(n: usize) -> u32 {
    usize::BITS - (n.max(1) - 1).leading_zeros()
}

/// A generated topology with a feasible bound; `slack` is added on top of the
/// natural or typical diameter.
pub fn topology(kind: GraphKind, n: usize, slack: u32, seed: u64) -> Topology {
    let d = kind
        .natural_diameter(n)
        .unwrap_or_else(|| match kind {
            GraphKind::SmallWorld => 2 * log2_ceil(n) + 2,
            _ => log2_ceil(n) + 3,
        })
        .max(1);
    let d = if n == 1 { slack } else { d + slack };
    generate(kind, n, d, seed).expect("feasible by construction")
}

pub fn kind_from(i: usize) -> GraphKind {
    GraphKind::ALL[i % GraphKind::ALL.len()]
}
