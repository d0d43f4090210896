//! Time-varying communication topology: random round graphs with a
//! deterministic four-phase ring-segment schedule, doubly-stochastic mixing
//! matrices, window connectivity checks, and the geometric consensus-decay
//! constants.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::rng::{round_stream, StreamLabel};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("graph requires at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("matrix is not doubly stochastic (worst sum deviation {0:.3e})")]
    NotDoublyStochastic(f64),
    #[error("connectivity window is empty")]
    EmptyWindow,
    #[error("malformed edge trace: {0}")]
    BadTrace(String),
}

/// One round's undirected communication graph. Self-loops are implicit: an
/// agent can always use its own state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphRound {
    n: usize,
    round: u64,
    /// Sorted unordered pairs `(i, j)` with `i < j`.
    pairs: Vec<(usize, usize)>,
}

impl GraphRound {
    pub fn new(n: usize, round: u64, mut pairs: Vec<(usize, usize)>) -> Self {
        for p in &mut pairs {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
            assert!(p.0 != p.1, "self-loops are implicit");
            assert!(p.1 < n, "edge endpoint out of range");
        }
        pairs.sort_unstable();
        pairs.dedup();
        Self { n, round, pairs }
    }

    pub fn empty(n: usize, round: u64) -> Self {
        Self { n, round, pairs: Vec::new() }
    }

    pub fn complete(n: usize, round: u64) -> Self {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, round, pairs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairs.binary_search(&key).is_ok()
    }

    /// Number of directed edges (each undirected pair carries a message both
    /// ways).
    pub fn directed_edge_count(&self) -> usize {
        2 * self.pairs.len()
    }

    /// Agents with at least one out-neighbor — the per-source message count
    /// under a broadcast convention.
    pub fn sender_count(&self) -> usize {
        let mut touched = vec![false; self.n];
        for &(i, j) in &self.pairs {
            touched[i] = true;
            touched[j] = true;
        }
        touched.iter().filter(|&&t| t).count()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.pairs.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    /// Ordered pairs `(j, i)`: agent `i` receives from `j`.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)])
    }
}

/// Round-graph provider abstraction: the generated schedule or a replayed
/// trace.
pub trait GraphSource: Sync {
    fn n(&self) -> usize;
    fn round_graph(&self, t: u64) -> GraphRound;
}

/// The simulation topology: every unordered pair is connected with
/// probability `rho`, and a deterministic quarter-ring segment is added each
/// round so that any four consecutive rounds union to a path spanning all
/// agents.
#[derive(Debug, Clone)]
pub struct SegmentedRandomGraphs {
    n: usize,
    rho: f64,
    seed: u64,
}

impl SegmentedRandomGraphs {
    pub fn new(n: usize, rho: f64, seed: u64) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(GraphError::InvalidProbability(rho));
        }
        if n < 2 {
            return Err(GraphError::TooFewAgents(n));
        }
        Ok(Self { n, rho, seed })
    }

    /// Ring-segment edges for the round's residue class, as unordered pairs
    /// of 0-based agent indices. With 1-based agents and segment length
    /// `L = ⌈n/4⌉`, phase `k ∈ {1,..,4}` adds edges `(i, i+1)` for
    /// `i ∈ [max(1, L(k−1)), min(n−1, Lk−1)]`; consecutive segments share an
    /// endpoint, so the four phases union to a spanning path.
    pub fn segment_pairs(&self, t: u64) -> Vec<(usize, usize)> {
        let phase = ((t - 1) % 4) as usize + 1;
        let seg = self.n.div_ceil(4);
        let lo = (seg * (phase - 1)).max(1);
        let hi = (seg * phase).min(self.n) - 1;
        (lo..=hi).filter(|&i| i >= 1).map(|i| (i - 1, i)).collect()
    }
}

impl GraphSource for SegmentedRandomGraphs {
    fn n(&self) -> usize {
        self.n
    }

    fn round_graph(&self, t: u64) -> GraphRound {
        let mut rng = round_stream(self.seed, StreamLabel::Graph, t);
        let mut pairs = BTreeSet::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.rho > 0.0 && rng.gen_bool(self.rho) {
                    pairs.insert((i, j));
                }
            }
        }
        pairs.extend(self.segment_pairs(t));
        GraphRound { n: self.n, round: t, pairs: pairs.into_iter().collect() }
    }
}

/// A fixed sequence of round graphs (loaded from a trace or built by tests).
#[derive(Debug, Clone)]
pub struct ReplayedGraphs {
    n: usize,
    rounds: Vec<GraphRound>,
}

impl ReplayedGraphs {
    pub fn new(n: usize, rounds: Vec<GraphRound>) -> Self {
        Self { n, rounds }
    }
}

impl GraphSource for ReplayedGraphs {
    fn n(&self) -> usize {
        self.n
    }

    fn round_graph(&self, t: u64) -> GraphRound {
        // Rounds are 1-based; a trace shorter than the run repeats its last
        // entry rather than inventing topology.
        let idx = ((t - 1) as usize).min(self.rounds.len() - 1);
        let mut g = self.rounds[idx].clone();
        g.round = t;
        g
    }
}

/// A doubly-stochastic mixing matrix supported on the round's edges plus
/// self-loops, with its positive-entry floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
    floor: f64,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Worst absolute deviation of any row or column sum from 1.
    pub fn stochasticity_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.matrix[(i, j)]).sum();
            let col: f64 = (0..n).map(|j| self.matrix[(j, i)]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }

    pub fn verify(&self) -> Result<(), GraphError> {
        let defect = self.stochasticity_defect();
        if defect > 1e-12 {
            return Err(GraphError::NotDoublyStochastic(defect));
        }
        Ok(())
    }
}

/// Uniform-weight mixing matrix: off-diagonal entries are `1/n` on edges and
/// the diagonal absorbs the remainder. The entry floor is `1/n` exactly.
pub fn mixing_matrix(graph: &GraphRound) -> MixingMatrix {
    let n = graph.n();
    let w = 1.0 / n as f64;
    let mut matrix = DMatrix::zeros(n, n);
    for &(i, j) in graph.pairs() {
        matrix[(i, j)] = w;
        matrix[(j, i)] = w;
    }
    for i in 0..n {
        let degree = graph.degree(i);
        // A simple graph has at most n-1 neighbors, so the diagonal stays
        // positive; assert rather than trust.
        assert!(degree < n, "vertex degree exceeds simple-graph bound");
        matrix[(i, i)] = 1.0 - degree as f64 * w;
    }
    MixingMatrix { matrix, floor: w }
}

/// Constants of the geometric consensus-decay bound: products of `k` mixing
/// matrices approach uniform averaging like `τ λ^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConstants {
    pub tau: f64,
    pub lambda: f64,
    pub window: u32,
}

impl ConsensusConstants {
    pub fn new(n: usize, floor: f64, window: u32) -> Self {
        assert!(n >= 1 && floor > 0.0 && floor < 1.0 && window >= 1);
        let base = 1.0 - floor / (4.0 * (n * n) as f64);
        Self {
            tau: base.powi(-2),
            lambda: base.powf(1.0 / f64::from(window)),
            window,
        }
    }

    /// The decay envelope `τ λ^k` after `k` steps.
    pub fn envelope(&self, steps: u64) -> f64 {
        self.tau * self.lambda.powi(steps as i32)
    }
}

/// Checks that the union of a window of round graphs is strongly connected.
pub fn check_b_connectivity(window: &[GraphRound]) -> bool {
    let Some(first) = window.first() else { return false };
    let n = first.n();
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for g in window {
        for (j, i) in g.directed_edges() {
            forward[j].push(i);
            backward[i].push(j);
        }
    }
    reaches_all(&forward, n) && reaches_all(&backward, n)
}

fn reaches_all(adj: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Computes the backward product `W_t ··· W_s` of a window of mixing matrices
/// (`window[0]` is `W_s`) and returns the largest deviation of any entry from
/// `1/n`. Callers compare the result against [`ConsensusConstants::envelope`]
/// with `steps = t − s`.
pub fn consensus_deviation(window: &[MixingMatrix]) -> Result<f64, GraphError> {
    let first = window.first().ok_or(GraphError::EmptyWindow)?;
    let n = first.n();
    for w in window {
        w.verify()?;
    }
    let mut product = first.matrix().clone();
    for w in &window[1..] {
        product = w.matrix() * product;
    }
    let uniform = 1.0 / n as f64;
    Ok(product.iter().fold(0.0f64, |acc, &v| acc.max((v - uniform).abs())))
}

/// Writes one `round,from,to` line per directed edge.
pub fn write_edge_trace(out: &mut impl Write, graph: &GraphRound) -> std::io::Result<()> {
    for (j, i) in graph.directed_edges() {
        writeln!(out, "{},{},{}", graph.round(), j, i)?;
    }
    Ok(())
}

/// Reads an edge trace back into per-round graphs (rounds must be grouped,
/// as written by [`write_edge_trace`]).
pub fn read_edge_trace(input: &mut impl BufRead, n: usize) -> Result<Vec<GraphRound>, GraphError> {
    let mut rounds: Vec<(u64, Vec<(usize, usize)>)> = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| GraphError::BadTrace(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |f: Option<&str>| {
            f.and_then(|v| v.trim().parse::<u64>().ok())
                .ok_or_else(|| GraphError::BadTrace(format!("bad line: {line}")))
        };
        let t = parse(fields.next())?;
        let j = parse(fields.next())? as usize;
        let i = parse(fields.next())? as usize;
        match rounds.last_mut() {
            Some((round, pairs)) if *round == t => pairs.push((j, i)),
            _ => rounds.push((t, vec![(j, i)])),
        }
    }
    Ok(rounds
        .into_iter()
        .map(|(t, pairs)| GraphRound::new(n, t, pairs))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_leaves_only_segment_edges() {
        let gen = SegmentedRandomGraphs::new(100, 0.0, 1).unwrap();
        let g1 = gen.round_graph(1);
        let expected: Vec<(usize, usize)> = (0..24).map(|i| (i, i + 1)).collect();
        assert_eq!(g1.pairs(), expected.as_slice());
        let g2 = gen.round_graph(2);
        let expected: Vec<(usize, usize)> = (24..49).map(|i| (i, i + 1)).collect();
        assert_eq!(g2.pairs(), expected.as_slice());
        let g3 = gen.round_graph(3);
        assert_eq!(g3.pairs().first(), Some(&(49, 50)));
        assert_eq!(g3.pairs().last(), Some(&(73, 74)));
        let g4 = gen.round_graph(4);
        assert_eq!(g4.pairs().first(), Some(&(74, 75)));
        assert_eq!(g4.pairs().last(), Some(&(98, 99)));
        // Deterministic edges are periodic with period 4.
        assert_eq!(gen.round_graph(5).pairs(), g1.pairs());
        assert_eq!(gen.round_graph(4 * 17 + 2).pairs(), g2.pairs());
    }

    #[test]
    fn full_probability_gives_complete_graph() {
        let gen = SegmentedRandomGraphs::new(12, 1.0, 1).unwrap();
        for t in 1..=5 {
            assert_eq!(gen.round_graph(t), GraphRound::complete(12, t));
        }
    }

    #[test]
    fn random_edge_frequency_matches_probability() {
        // Frequency check over pairs that never receive a segment edge
        // (|i-j| >= 2). Seeded, so the outcome is stable.
        let n = 100;
        let rounds = 10_000u64;
        let gen = SegmentedRandomGraphs::new(n, 0.1, 77).unwrap();
        let mut counts = vec![0u32; n * n];
        for t in 1..=rounds {
            for &(i, j) in gen.round_graph(t).pairs() {
                counts[i * n + j] += 1;
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 2..n {
                let freq = f64::from(counts[i * n + j]) / rounds as f64;
                worst = worst.max((freq - 0.1).abs());
            }
        }
        assert!(worst <= 0.01, "worst per-pair frequency deviation {worst}");
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(SegmentedRandomGraphs::new(10, -0.1, 1).is_err());
        assert!(SegmentedRandomGraphs::new(10, 1.5, 1).is_err());
        assert!(SegmentedRandomGraphs::new(1, 0.5, 1).is_err());
    }

    #[test]
    fn mixing_of_empty_graph_is_identity() {
        let w = mixing_matrix(&GraphRound::empty(6, 1));
        assert_eq!(w.matrix(), &DMatrix::identity(6, 6));
        w.verify().unwrap();
    }

    #[test]
    fn mixing_of_two_agents_is_uniform() {
        let w = mixing_matrix(&GraphRound::new(2, 1, vec![(0, 1)]));
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(w.matrix(), &expected);
    }

    #[test]
    fn mixing_matrices_are_doubly_stochastic_with_floor() {
        let gen = SegmentedRandomGraphs::new(10, 0.3, 5).unwrap();
        for t in 1..=50 {
            let g = gen.round_graph(t);
            let w = mixing_matrix(&g);
            assert!(w.stochasticity_defect() <= 1e-12);
            for (j, i) in g.directed_edges() {
                assert!(w.matrix()[(i, j)] >= w.floor());
            }
            for i in 0..10 {
                assert!(w.matrix()[(i, i)] >= w.floor() - 1e-15);
            }
        }
    }

    #[test]
    fn connectivity_checks() {
        assert!(check_b_connectivity(&[GraphRound::complete(5, 1)]));
        assert!(!check_b_connectivity(&[GraphRound::empty(5, 1)]));
        assert!(!check_b_connectivity(&[]));
        // The four segment phases union to a spanning path for several n.
        for n in [7usize, 10, 100] {
            let gen = SegmentedRandomGraphs::new(n, 0.0, 1).unwrap();
            let window: Vec<_> = (1..=4).map(|t| gen.round_graph(t)).collect();
            assert!(check_b_connectivity(&window), "union not connected for n={n}");
            assert!(!check_b_connectivity(&window[..1]));
        }
    }

    #[test]
    fn consensus_deviation_small_cases() {
        // A single identity matrix: deviation = 1 - 1/n <= tau.
        let id = mixing_matrix(&GraphRound::empty(4, 1));
        let dev = consensus_deviation(std::slice::from_ref(&id)).unwrap();
        assert!((dev - 0.75).abs() < 1e-15);
        let constants = ConsensusConstants::new(4, 0.25, 4);
        assert!(dev <= constants.envelope(0));
        assert!(constants.tau > 1.0);
        assert!(constants.lambda > 0.0 && constants.lambda < 1.0);

        // Complete-graph mixing averages exactly in one step.
        let complete = mixing_matrix(&GraphRound::complete(4, 1));
        let dev = consensus_deviation(std::slice::from_ref(&complete)).unwrap();
        assert!(dev < 1e-15);
    }

    #[test]
    fn consensus_decay_beats_envelope_on_simulation_topology() {
        let n = 10;
        let gen = SegmentedRandomGraphs::new(n, 0.1, 3).unwrap();
        let constants = ConsensusConstants::new(n, 1.0 / n as f64, 4);
        for s in [1u64, 9, 33] {
            let window: Vec<_> =
                (s..=s + 40).map(|t| mixing_matrix(&gen.round_graph(t))).collect();
            let dev = consensus_deviation(&window).unwrap();
            assert!(
                dev <= constants.envelope(40),
                "deviation {dev} exceeds envelope {}",
                constants.envelope(40)
            );
        }
    }

    #[test]
    fn deviation_rejects_non_stochastic_input() {
        let mut w = mixing_matrix(&GraphRound::empty(3, 1));
        w.matrix[(0, 0)] = 0.5;
        assert!(matches!(
            consensus_deviation(&[w]),
            Err(GraphError::NotDoublyStochastic(_))
        ));
    }

    #[test]
    fn edge_trace_round_trips() {
        let gen = SegmentedRandomGraphs::new(8, 0.4, 11).unwrap();
        let mut buf = Vec::new();
        let graphs: Vec<_> = (1..=6).map(|t| gen.round_graph(t)).collect();
        for g in &graphs {
            write_edge_trace(&mut buf, g).unwrap();
        }
        let parsed = read_edge_trace(&mut buf.as_slice(), 8).unwrap();
        assert_eq!(parsed, graphs);
    }
}
