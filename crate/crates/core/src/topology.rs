//! Swarm communication graphs.
//!
//! A [`Topology`] is an undirected, connected graph stored in compressed
//! sparse row form. Neighborhoods are self-inclusive: every gnome hears
//! itself, but the adjacency lists only store the other gnomes.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Graphs up to this size get an exact all-pairs diameter check during
/// generation. Larger random graphs carry a certified upper bound instead.
pub const EXACT_DIAMETER_LIMIT: usize = 4096;

/// Measure-and-retry attempts before a random generator starts densifying.
pub const DEFAULT_RETRIES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GnomeId(pub u32);

impl GnomeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for GnomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for GnomeId {
    fn from(v: u32) -> Self {
        GnomeId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("a swarm needs at least one gnome")]
    Empty,
    #[error("unknown gnome {id} (swarm has {n} gnomes)")]
    UnknownGnome { id: u32, n: usize },
    #[error("edge ({u}, {v}) references a gnome outside 0..{n}")]
    EdgeOutOfRange { u: u32, v: u32, n: usize },
    #[error("graph is disconnected: gnome {unreached} is unreachable from gnome 0")]
    Disconnected { unreached: u32 },
    #[error("diameter {diameter} exceeds the declared bound {bound}")]
    DiameterExceeded { diameter: u32, bound: u32 },
    #[error("cannot build a {kind} graph of {n} gnomes with diameter <= {target}")]
    Infeasible {
        kind: GraphKind,
        n: usize,
        target: u32,
    },
}

/// How the diameter bound of a topology was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiameterBound {
    /// Measured with a breadth-first search from every gnome.
    Exact(u32),
    /// Proven by construction or by a cheap certificate; the true diameter
    /// is at most this value.
    AtMost(u32),
}

impl DiameterBound {
    pub fn value(self) -> u32 {
        match self {
            DiameterBound::Exact(v) | DiameterBound::AtMost(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    offsets: Vec<usize>,
    targets: Vec<GnomeId>,
    d_bound: u32,
    diameter: DiameterBound,
}

impl Topology {
    /// Builds and validates a topology from undirected edges. Self-loops and
    /// duplicate edges are dropped.
    pub fn new(
        n: usize,
        d_bound: u32,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, TopologyError> {
        let mut topo = Self::from_edges_unchecked(n, d_bound, edges)?;
        topo.diameter = topo.validate_diameter()?;
        Ok(topo)
    }

    /// Builds a topology whose diameter bound is already known, skipping the
    /// all-pairs measurement. Connectivity is still checked.
    pub(crate) fn with_certified_bound(
        n: usize,
        d_bound: u32,
        certified: u32,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, TopologyError> {
        let mut topo = Self::from_edges_unchecked(n, d_bound, edges)?;
        let mut bfs = Bfs::new(n);
        let ecc = bfs.run(&topo, GnomeId(0));
        if let Some(unreached) = bfs.first_unreached() {
            return Err(TopologyError::Disconnected { unreached });
        }
        let bound = certified.min(ecc.saturating_mul(2));
        if bound > d_bound {
            return Err(TopologyError::DiameterExceeded {
                diameter: bound,
                bound: d_bound,
            });
        }
        topo.diameter = DiameterBound::AtMost(bound);
        Ok(topo)
    }

    fn from_edges_unchecked(
        n: usize,
        d_bound: u32,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(TopologyError::EdgeOutOfRange { u, v, n });
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.into_iter().map(|(_, v)| GnomeId(v)).collect();
        Ok(Topology {
            offsets,
            targets,
            d_bound,
            diameter: DiameterBound::AtMost(u32::MAX),
        })
    }

    /// Connectivity plus diameter check. A single BFS from gnome 0 gives
    /// `diameter <= 2 * ecc(0)`; only when that is not enough do we pay for
    /// the exact all-pairs pass.
    fn validate_diameter(&self) -> Result<DiameterBound, TopologyError> {
        let n = self.len();
        let mut bfs = Bfs::new(n);
        let ecc0 = bfs.run(self, GnomeId(0));
        if let Some(unreached) = bfs.first_unreached() {
            return Err(TopologyError::Disconnected { unreached });
        }
        if n > EXACT_DIAMETER_LIMIT && ecc0.saturating_mul(2) <= self.d_bound {
            return Ok(DiameterBound::AtMost(ecc0 * 2));
        }
        let mut diameter = ecc0;
        for g in 1..n {
            diameter = diameter.max(bfs.run(self, GnomeId(g as u32)));
            if diameter > self.d_bound {
                return Err(TopologyError::DiameterExceeded {
                    diameter,
                    bound: self.d_bound,
                });
            }
        }
        if diameter > self.d_bound {
            return Err(TopologyError::DiameterExceeded {
                diameter,
                bound: self.d_bound,
            });
        }
        Ok(DiameterBound::Exact(diameter))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The declared diameter bound `d`, the protocol's only global parameter.
    #[inline]
    pub fn d_bound(&self) -> u32 {
        self.d_bound
    }

    pub fn diameter_bound(&self) -> DiameterBound {
        self.diameter
    }

    /// Other gnomes that hear `g`, sorted. `g` itself is implied.
    #[inline]
    pub fn neighbors(&self, g: GnomeId) -> &[GnomeId] {
        &self.targets[self.offsets[g.index()]..self.offsets[g.index() + 1]]
    }

    #[inline]
    pub fn degree(&self, g: GnomeId) -> usize {
        self.offsets[g.index() + 1] - self.offsets[g.index()]
    }

    /// Index of `g`'s first adjacency slot; slots `offset(g)..offset(g)+degree(g)`
    /// are `g`'s directed in-edges, one per neighbor.
    #[inline]
    pub fn offset(&self, g: GnomeId) -> usize {
        self.offsets[g.index()]
    }

    /// Number of directed adjacency slots (twice the undirected edge count).
    #[inline]
    pub fn slot_count(&self) -> usize {
        self.targets.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Sum over gnomes of `|N(g)|`, counting each gnome itself.
    pub fn neighborhood_volume(&self) -> usize {
        self.targets.len() + self.len()
    }

    pub fn contains(&self, g: GnomeId) -> bool {
        g.index() < self.len()
    }

    pub fn check(&self, g: GnomeId) -> Result<(), TopologyError> {
        if self.contains(g) {
            Ok(())
        } else {
            Err(TopologyError::UnknownGnome {
                id: g.0,
                n: self.len(),
            })
        }
    }

    pub fn gnomes(&self) -> impl Iterator<Item = GnomeId> + '_ {
        (0..self.len() as u32).map(GnomeId)
    }

    pub fn is_adjacent(&self, a: GnomeId, b: GnomeId) -> bool {
        a == b || self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Undirected edges with `u < v`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (GnomeId, GnomeId)> + '_ {
        self.gnomes().flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// `N^k(g)`: gnomes at most `k` hops from `g`, sorted. `k = -1` is empty.
    pub fn k_neighborhood(&self, g: GnomeId, k: i64) -> Result<Vec<GnomeId>, TopologyError> {
        self.check(g)?;
        if k < 0 {
            return Ok(Vec::new());
        }
        let dist = self.distances_from(g);
        Ok(dist
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != u32::MAX && (d as i64) <= k)
            .map(|(i, _)| GnomeId(i as u32))
            .collect())
    }

    /// Hop distances from `g`; `u32::MAX` marks unreachable gnomes.
    pub fn distances_from(&self, g: GnomeId) -> Vec<u32> {
        let mut bfs = Bfs::new(self.len());
        bfs.run(self, g);
        bfs.dist
    }

    /// `r(g) = min { k : N^k(g) = all gnomes }`.
    pub fn eccentricity(&self, g: GnomeId) -> Result<u32, TopologyError> {
        self.check(g)?;
        let mut bfs = Bfs::new(self.len());
        let ecc = bfs.run(self, g);
        match bfs.first_unreached() {
            Some(unreached) => Err(TopologyError::Disconnected { unreached }),
            None => Ok(ecc),
        }
    }

    /// Exact diameter: one BFS per gnome. Cost is `O(n * (n + m))`.
    pub fn diameter(&self) -> Result<u32, TopologyError> {
        if let DiameterBound::Exact(d) = self.diameter {
            return Ok(d);
        }
        let mut bfs = Bfs::new(self.len());
        let mut best = 0;
        for g in self.gnomes() {
            best = best.max(bfs.run(self, g));
            if let Some(unreached) = bfs.first_unreached() {
                return Err(TopologyError::Disconnected { unreached });
            }
        }
        Ok(best)
    }

    /// All eccentricities at once.
    pub fn eccentricities(&self) -> Vec<u32> {
        let mut bfs = Bfs::new(self.len());
        self.gnomes().map(|g| bfs.run(self, g)).collect()
    }

    /// The gnome with the largest eccentricity (lowest id on ties).
    pub fn most_eccentric(&self) -> GnomeId {
        let ecc = self.eccentricities();
        let mut best = 0;
        for (i, &e) in ecc.iter().enumerate() {
            if e > ecc[best] {
                best = i;
            }
        }
        GnomeId(best as u32)
    }

    /// Exact diameter of the subgraph induced by gnomes with `keep[g]`.
    /// Errors if that subgraph is disconnected.
    pub fn induced_diameter(&self, keep: &[bool]) -> Result<u32, TopologyError> {
        let n = self.len();
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        let mut best = 0;
        let members: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        for &s in &members {
            dist.iter_mut().for_each(|d| *d = u32::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(GnomeId(u as u32)) {
                    let v = v.index();
                    if keep[v] && dist[v] == u32::MAX {
                        dist[v] = dist[u] + 1;
                        best = best.max(dist[v]);
                        queue.push_back(v);
                    }
                }
            }
            if let Some(&u) = members.iter().find(|&&m| dist[m] == u32::MAX) {
                return Err(TopologyError::Disconnected { unreached: u as u32 });
            }
        }
        Ok(best)
    }
}

/// Reusable breadth-first search buffers.
pub(crate) struct Bfs {
    dist: Vec<u32>,
    queue: Vec<u32>,
}

impl Bfs {
    pub(crate) fn new(n: usize) -> Self {
        Bfs {
            dist: vec![u32::MAX; n],
            queue: Vec::with_capacity(n),
        }
    }

    /// Returns the eccentricity of `src` within its component.
    pub(crate) fn run(&mut self, topo: &Topology, src: GnomeId) -> u32 {
        self.dist.iter_mut().for_each(|d| *d = u32::MAX);
        self.queue.clear();
        self.dist[src.index()] = 0;
        self.queue.push(src.0);
        let mut head = 0;
        let mut ecc = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            let du = self.dist[u as usize];
            ecc = du;
            for &v in topo.neighbors(GnomeId(u)) {
                if self.dist[v.index()] == u32::MAX {
                    self.dist[v.index()] = du + 1;
                    self.queue.push(v.0);
                }
            }
        }
        ecc
    }

    pub(crate) fn first_unreached(&self) -> Option<u32> {
        if self.queue.len() == self.dist.len() {
            return None;
        }
        self.dist
            .iter()
            .position(|&d| d == u32::MAX)
            .map(|i| i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GraphKind {
    Complete,
    Path,
    Ring,
    Star,
    Grid,
    RandomRegular,
    SmallWorld,
}

impl GraphKind {
    pub const ALL: [GraphKind; 7] = [
        GraphKind::Complete,
        GraphKind::Path,
        GraphKind::Ring,
        GraphKind::Star,
        GraphKind::Grid,
        GraphKind::RandomRegular,
        GraphKind::SmallWorld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Complete => "complete",
            GraphKind::Path => "path",
            GraphKind::Ring => "ring",
            GraphKind::Star => "star",
            GraphKind::Grid => "grid",
            GraphKind::RandomRegular => "random-regular",
            GraphKind::SmallWorld => "small-world",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        GraphKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Diameter of the deterministic kinds, or `None` for random kinds.
    pub fn natural_diameter(self, n: usize) -> Option<u32> {
        let n32 = n as u32;
        match self {
            GraphKind::Complete => Some(if n > 1 { 1 } else { 0 }),
            GraphKind::Path => Some(n32.saturating_sub(1)),
            GraphKind::Ring => Some(if n < 3 { n32.saturating_sub(1) } else { n32 / 2 }),
            GraphKind::Star => Some(n32.saturating_sub(1).min(2)),
            GraphKind::Grid => {
                // a short last row still starts at column 0, so the corners
                // (0, cols-1) and (rows-1, 0) are always present
                let (rows, cols) = grid_shape(n);
                Some((rows + cols).saturating_sub(2) as u32)
            }
            GraphKind::RandomRegular | GraphKind::SmallWorld => None,
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn grid_shape(n: usize) -> (usize, usize) {
    let mut cols = 1;
    while cols * cols < n {
        cols += 1;
    }
    let rows = n.div_ceil(cols);
    (rows, cols)
}

/// Generates a topology of the given kind whose diameter is at most
/// `target_d`; the returned topology declares `target_d` as its bound.
/// Deterministic for a fixed seed.
pub fn generate(
    kind: GraphKind,
    n: usize,
    target_d: u32,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    let infeasible = TopologyError::Infeasible {
        kind,
        n,
        target: target_d,
    };
    if n > 1 && target_d == 0 {
        return Err(infeasible);
    }
    if n > u32::MAX as usize / 2 {
        return Err(infeasible);
    }
    let nn = n as u32;
    if let Some(natural) = kind.natural_diameter(n) {
        if natural > target_d {
            return Err(infeasible);
        }
    }
    let edges: Vec<(u32, u32)> = match kind {
        GraphKind::Complete => (0..nn)
            .flat_map(|u| (u + 1..nn).map(move |v| (u, v)))
            .collect(),
        GraphKind::Path => (1..nn).map(|v| (v - 1, v)).collect(),
        GraphKind::Ring => {
            let mut e: Vec<_> = (1..nn).map(|v| (v - 1, v)).collect();
            if n >= 3 {
                e.push((nn - 1, 0));
            }
            e
        }
        GraphKind::Star => (1..nn).map(|v| (0, v)).collect(),
        GraphKind::Grid => {
            let (_, cols) = grid_shape(n);
            let mut e = Vec::new();
            for i in 0..n {
                let c = i % cols;
                if c + 1 < cols && i + 1 < n {
                    e.push((i as u32, i as u32 + 1));
                }
                if i + cols < n {
                    e.push((i as u32, (i + cols) as u32));
                }
            }
            e
        }
        GraphKind::RandomRegular | GraphKind::SmallWorld => {
            return generate_random(kind, n, target_d, seed);
        }
    };
    Topology::new(n, target_d, edges)
}

fn generate_random(
    kind: GraphKind,
    n: usize,
    target_d: u32,
    seed: u64,
) -> Result<Topology, TopologyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n <= 2 {
        return generate(GraphKind::Complete, n, target_d, seed);
    }
    let base = |rng: &mut ChaCha8Rng| match kind {
        GraphKind::SmallWorld => small_world_edges(n, 4, 0.1, rng),
        _ => random_regular_edges(n, 3, rng),
    };

    if n > EXACT_DIAMETER_LIMIT {
        // Too large to measure: overlay a relabelled generalized de Bruijn
        // backbone whose diameter is bounded by construction.
        let mut edges = base(&mut rng);
        let b = de_bruijn_base(n, target_d);
        edges.extend(de_bruijn_edges(n, b, &mut rng));
        let certified = log_ceil(n, b);
        return Topology::with_certified_bound(n, target_d, certified, edges);
    }

    for _ in 0..DEFAULT_RETRIES {
        let edges = base(&mut rng);
        match Topology::new(n, target_d, edges) {
            Ok(t) => return Ok(t),
            Err(TopologyError::Disconnected { .. } | TopologyError::DiameterExceeded { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    // Densify: keep adding random perfect matchings until the bound holds.
    // Terminates because the complete graph has diameter 1.
    let mut edges = base(&mut rng);
    loop {
        edges.extend(random_matching(n, &mut rng));
        edges.sort_unstable_by_key(|&(u, v)| (u.min(v), u.max(v)));
        edges.dedup_by_key(|e| (e.0.min(e.1), e.0.max(e.1)));
        match Topology::new(n, target_d, edges.iter().copied()) {
            Ok(t) => return Ok(t),
            Err(TopologyError::Disconnected { .. } | TopologyError::DiameterExceeded { .. }) => {
                if edges.len() >= n * (n - 1) / 2 {
                    return generate(GraphKind::Complete, n, target_d, seed);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Pairing-model random graph with (nearly) uniform degree `k`; self-loops
/// and parallel edges are dropped rather than re-drawn.
fn random_regular_edges(n: usize, k: usize, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let k = if (n * k) % 2 == 1 { k + 1 } else { k };
    let mut stubs: Vec<u32> = (0..n as u32)
        .flat_map(|g| core::iter::repeat_n(g, k))
        .collect();
    stubs.shuffle(rng);
    stubs
        .chunks_exact(2)
        .filter(|p| p[0] != p[1])
        .map(|p| (p[0], p[1]))
        .collect()
}

/// Watts-Strogatz: ring lattice with `k/2` neighbors per side, each edge
/// rewired with probability `beta`.
fn small_world_edges(n: usize, k: usize, beta: f64, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let half = (k / 2).max(1);
    let mut edges = Vec::with_capacity(n * half);
    for u in 0..n {
        for j in 1..=half {
            let v = (u + j) % n;
            if rng.random::<f64>() < beta {
                let w = rng.random_range(0..n);
                if w != u {
                    edges.push((u as u32, w as u32));
                    continue;
                }
            }
            edges.push((u as u32, v as u32));
        }
    }
    edges
}

fn random_matching(n: usize, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(rng);
    perm.chunks_exact(2).map(|p| (p[0], p[1])).collect()
}

/// Smallest `b >= 2` with `b^d >= n`.
fn de_bruijn_base(n: usize, d: u32) -> usize {
    let mut b = 2;
    while pow_at_least(b, d, n).is_none() {
        b += 1;
    }
    b
}

/// `Some(())` when `b^d >= n`.
fn pow_at_least(b: usize, d: u32, n: usize) -> Option<()> {
    let mut acc: usize = 1;
    for _ in 0..d {
        acc = acc.saturating_mul(b);
        if acc >= n {
            return Some(());
        }
    }
    (acc >= n).then_some(())
}

/// `ceil(log_b n)`.
fn log_ceil(n: usize, b: usize) -> u32 {
    let mut k = 0;
    let mut acc: usize = 1;
    while acc < n {
        acc = acc.saturating_mul(b);
        k += 1;
    }
    k
}

/// Generalized de Bruijn digraph `i -> b*i + j mod n`, relabelled by a random
/// permutation. After `k` steps from `i` every residue in
/// `b^k * i + [0, b^k)` is reachable, so the diameter is at most
/// `ceil(log_b n)`.
fn de_bruijn_edges(n: usize, b: usize, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(rng);
    let mut edges = Vec::with_capacity(n * b);
    for i in 0..n {
        let base = (i as u128 * b as u128 % n as u128) as usize;
        for j in 0..b {
            let t = (base + j) % n;
            if t != i {
                edges.push((perm[i], perm[t]));
            }
        }
    }
    edges
}
