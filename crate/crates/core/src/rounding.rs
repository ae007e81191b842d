//! Turning fractional edge scores into feasible binary solutions.
//!
//! A solution is feasible when every node has at most one active incoming and
//! at most one active outgoing edge. Two roundings are provided: a greedy one
//! that keeps the best-scored edge of each violated constraint, and an exact
//! one minimizing `Σ_e (1 − 2ŷ_e)·y_e`, i.e. the squared distance between the
//! binary labels and the scores.
//!
//! Violated-subgraph dump format: one line per edge,
//! `src_id,dst_id,score,label`, where the ids are the endpoints' detection ids
//! and `label` is the rounded value (0 or 1).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_flow_constraints, ConstraintReport, EdgeLabels, Neighbor, TrackingGraph};
use crate::trajectory::{TrackBox, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMethod {
    Greedy,
    #[default]
    Exact,
}

impl fmt::Display for RoundingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Exact => "exact",
        })
    }
}

impl FromStr for RoundingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "exact" => Ok(Self::Exact),
            _ => Err(Error::InvalidParameter(format!("unknown rounding method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySolution {
    pub labels: EdgeLabels,
    pub feasible: bool,
}

fn check_scores(graph: &TrackingGraph, scores: &[f64]) -> Result<()> {
    if scores.len() != graph.num_edges() {
        return Err(Error::IndexMismatch(format!(
            "{} scores for {} edges",
            scores.len(),
            graph.num_edges()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidParameter(format!("score {s} outside [0, 1]")));
    }
    Ok(())
}

/// Labels an edge active iff its score is at least `t`.
pub fn threshold(graph: &TrackingGraph, scores: &[f64], t: f64) -> Result<(BinarySolution, ConstraintReport)> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {t} must lie in (0, 1)")));
    }
    check_scores(graph, scores)?;
    let labels = EdgeLabels::new(scores.iter().map(|&s| s >= t).collect());
    let report = check_flow_constraints(graph, &labels)?;
    Ok((
        BinarySolution {
            labels,
            feasible: report.is_feasible(),
        },
        report,
    ))
}

/// `Σ_e (1 − 2ŷ_e)·y_e`.
pub fn objective(scores: &[f64], labels: &EdgeLabels) -> f64 {
    scores
        .iter()
        .zip(&labels.values)
        .filter(|(_, &y)| y)
        .map(|(&s, _)| 1.0 - 2.0 * s)
        .sum()
}

pub fn greedy_round(graph: &TrackingGraph, scores: &[f64]) -> Result<BinarySolution> {
    greedy_round_counted(graph, scores).map(|(s, _)| s)
}

/// Greedy rounding that also returns the number of primitive steps taken:
/// one per edge while thresholding and one per adjacency entry visited.
///
/// Constraints are visited by ascending node, incoming before outgoing. For a
/// violated constraint only the highest-scored edge among the currently
/// active ones stays active; ties go to the lower edge index.
pub fn greedy_round_counted(graph: &TrackingGraph, scores: &[f64]) -> Result<(BinarySolution, usize)> {
    let (solution, _) = threshold(graph, scores, 0.5)?;
    let mut labels = solution.labels.values;
    let mut steps = labels.len();
    for node in 0..graph.num_nodes() {
        for side in [graph.past_neighbors(node), graph.future_neighbors(node)] {
            steps += side.len();
            if side.iter().filter(|n| labels[n.edge]).count() <= 1 {
                continue;
            }
            steps += side.len();
            let keep = side
                .iter()
                .filter(|n| labels[n.edge])
                .map(|n| n.edge)
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("at least two active edges");
            steps += side.len();
            for n in side {
                if n.edge != keep {
                    labels[n.edge] = false;
                }
            }
        }
    }
    Ok((
        BinarySolution {
            labels: EdgeLabels::new(labels),
            feasible: true,
        },
        steps,
    ))
}

/// Edges taking part in a violated constraint after thresholding.
#[derive(Clone, Debug)]
pub struct ViolatedSubgraph {
    /// Same nodes as the parent graph, only the violated edges.
    pub graph: TrackingGraph,
    /// Parent edge index of every subgraph edge.
    pub parent_edges: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ViolatedSubgraph {
    pub fn is_empty(&self) -> bool {
        self.parent_edges.is_empty()
    }

    /// Debug dump in the format described in the module docs.
    pub fn format(&self, labels: &[bool]) -> String {
        let mut s = String::new();
        for ((e, score), label) in self.graph.edges().iter().zip(&self.scores).zip(labels) {
            let nodes = self.graph.nodes();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                nodes[e.src].id,
                nodes[e.dst].id,
                score,
                u8::from(*label)
            );
        }
        s
    }
}

/// The active edges (score ≥ `t`) that share a violated in- or out-constraint
/// with another active edge. All other edges keep their thresholded label
/// in any optimal rounding: an active edge outside this set shares no
/// constraint with any other active edge.
pub fn violated_subgraph(graph: &TrackingGraph, scores: &[f64], t: f64) -> Result<ViolatedSubgraph> {
    let (solution, report) = threshold(graph, scores, t)?;
    let labels = &solution.labels.values;
    let mut edges = Vec::new();
    for &(node, dir) in &report.violated_nodes {
        let side = match dir {
            crate::graph::FlowDirection::In => graph.past_neighbors(node),
            crate::graph::FlowDirection::Out => graph.future_neighbors(node),
        };
        edges.extend(side.iter().filter(|n| labels[n.edge]).map(|n| n.edge));
    }
    let (sub, parent_edges) = graph.edge_subgraph(&edges);
    let scores = parent_edges.iter().map(|&e| scores[e]).collect();
    Ok(ViolatedSubgraph {
        graph: sub,
        parent_edges,
        scores,
    })
}

/// Exact rounding: the feasible binary labels minimizing
/// `Σ_e (1 − 2ŷ_e)·y_e`.
///
/// Edges consistent after thresholding at 0.5 are fixed first; the violated
/// subgraph is then solved as a minimum-cost bipartite matching between
/// outgoing and incoming node copies over its edges with negative cost.
pub fn exact_round(graph: &TrackingGraph, scores: &[f64]) -> Result<BinarySolution> {
    let (solution, _) = threshold(graph, scores, 0.5)?;
    let mut labels = solution.labels.values;
    let sub = violated_subgraph(graph, scores, 0.5)?;
    for &e in &sub.parent_edges {
        labels[e] = false;
    }
    let candidates: Vec<(usize, usize, f64)> = sub
        .graph
        .edges()
        .iter()
        .zip(&sub.scores)
        .map(|(e, &s)| (e.src, e.dst, 1.0 - 2.0 * s))
        .collect();
    for chosen in min_cost_matching(graph.num_nodes(), &candidates) {
        labels[sub.parent_edges[chosen]] = true;
    }
    Ok(BinarySolution {
        labels: EdgeLabels::new(labels),
        feasible: true,
    })
}

pub fn round(graph: &TrackingGraph, scores: &[f64], method: RoundingMethod) -> Result<BinarySolution> {
    match method {
        RoundingMethod::Greedy => greedy_round(graph, scores),
        RoundingMethod::Exact => exact_round(graph, scores),
    }
}

#[derive(Clone, Copy, Debug)]
struct Arc {
    to: usize,
    cap: u8,
    cost: f64,
    rev: usize,
    /// Candidate index for matching arcs.
    candidate: Option<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Minimum-cost matching of any cardinality between sources and targets,
/// using only candidates `(source, target, cost)` with negative cost. Returns
/// the chosen candidate indices in ascending order.
///
/// Successive shortest augmenting paths with Dijkstra on reduced costs; it
/// stops as soon as the cheapest augmenting path has nonnegative cost.
fn min_cost_matching(num_nodes: usize, candidates: &[(usize, usize, f64)]) -> Vec<usize> {
    let usable: Vec<usize> = (0..candidates.len()).filter(|&c| candidates[c].2 < 0.0).collect();
    if usable.is_empty() {
        return Vec::new();
    }
    // Vertices: 0 = source, then one per used out-copy, one per used in-copy,
    // and the sink last.
    let mut left = vec![usize::MAX; num_nodes];
    let mut right = vec![usize::MAX; num_nodes];
    let mut n = 1;
    for &c in &usable {
        let (u, v, _) = candidates[c];
        if left[u] == usize::MAX {
            left[u] = n;
            n += 1;
        }
        if right[v] == usize::MAX {
            right[v] = n;
            n += 1;
        }
    }
    let sink = n;
    n += 1;
    let mut arcs: Vec<Vec<Arc>> = vec![Vec::new(); n];
    let add = |arcs: &mut Vec<Vec<Arc>>, a: usize, b: usize, cost: f64, candidate| {
        let (ra, rb) = (arcs[b].len(), arcs[a].len());
        arcs[a].push(Arc {
            to: b,
            cap: 1,
            cost,
            rev: ra,
            candidate,
        });
        arcs[b].push(Arc {
            to: a,
            cap: 0,
            cost: -cost,
            rev: rb,
            candidate,
        });
    };
    let mut potential = vec![0.0f64; n];
    for &l in left.iter().filter(|&&l| l != usize::MAX) {
        add(&mut arcs, 0, l, 0.0, None);
    }
    for &c in &usable {
        let (u, v, cost) = candidates[c];
        add(&mut arcs, left[u], right[v], cost, Some(c));
        potential[right[v]] = potential[right[v]].min(cost);
    }
    for v in 0..num_nodes {
        if right[v] != usize::MAX {
            add(&mut arcs, right[v], sink, 0.0, None);
            potential[sink] = potential[sink].min(potential[right[v]]);
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
    loop {
        dist.fill(f64::INFINITY);
        prev.fill(None);
        dist[0] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(HeapEntry(0.0, 0)));
        while let Some(Reverse(HeapEntry(d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for (i, arc) in arcs[u].iter().enumerate() {
                if arc.cap == 0 {
                    continue;
                }
                let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    prev[arc.to] = Some((u, i));
                    heap.push(Reverse(HeapEntry(nd, arc.to)));
                }
            }
        }
        if !dist[sink].is_finite() || dist[sink] + potential[sink] - potential[0] >= 0.0 {
            break;
        }
        let cap = dist[sink];
        for v in 0..n {
            potential[v] += dist[v].min(cap);
        }
        let mut v = sink;
        while let Some((u, i)) = prev[v] {
            arcs[u][i].cap -= 1;
            let rev = arcs[u][i].rev;
            arcs[v][rev].cap += 1;
            v = u;
        }
    }

    let mut chosen: Vec<usize> = arcs
        .iter()
        .enumerate()
        .filter(|(u, _)| *u != 0 && *u != sink)
        .flat_map(|(_, list)| list.iter())
        .filter(|a| a.cap == 0 && a.cost < 0.0 && a.candidate.is_some())
        .filter_map(|a| a.candidate)
        .collect();
    chosen.sort_unstable();
    chosen
}

/// Maximal chains of active edges as lists of node indices, ordered by their
/// first node. Nodes without active edges form single-node chains.
pub fn extract_chains(graph: &TrackingGraph, labels: &EdgeLabels) -> Result<Vec<Vec<usize>>> {
    if !check_flow_constraints(graph, labels)?.is_feasible() {
        return Err(Error::Infeasible);
    }
    let active = |side: &[Neighbor]| side.iter().find(|n| labels.values[n.edge]).map(|n| n.node);
    let mut chains = Vec::new();
    for start in 0..graph.num_nodes() {
        if active(graph.past_neighbors(start)).is_some() {
            continue;
        }
        let mut chain = vec![start];
        let mut node = start;
        while let Some(next) = active(graph.future_neighbors(node)) {
            chain.push(next);
            node = next;
        }
        chains.push(chain);
    }
    Ok(chains)
}

/// Chains as trajectories numbered in chain order. Boxes refer to the nodes'
/// detection ids.
pub fn extract_trajectories(graph: &TrackingGraph, labels: &EdgeLabels) -> Result<Vec<Trajectory>> {
    let chains = extract_chains(graph, labels)?;
    Ok(chains
        .iter()
        .enumerate()
        .map(|(i, chain)| {
            let boxes = chain
                .iter()
                .map(|&n| {
                    let d = &graph.nodes()[n];
                    TrackBox {
                        frame: d.frame,
                        bbox: d.bbox,
                        detection: Some(d.id),
                    }
                })
                .collect();
            Trajectory::new(i as u32, boxes)
        })
        .collect())
}

/// Labels that activate exactly the edges between consecutive chain members.
pub fn labels_from_chains(graph: &TrackingGraph, chains: &[Vec<usize>]) -> Result<EdgeLabels> {
    let mut labels = EdgeLabels::zeros(graph.num_edges());
    for chain in chains {
        for w in chain.windows(2) {
            let e = graph
                .edge_index(w[0], w[1])
                .ok_or_else(|| Error::IndexMismatch(format!("no edge ({}, {})", w[0], w[1])))?;
            labels.values[e] = true;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BBox, Detection};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(frames: &[usize], pairs: &[(usize, usize)]) -> TrackingGraph {
        let nodes = frames
            .iter()
            .enumerate()
            .map(|(i, &f)| Detection::new(i, f, BBox::new(0.0, 0.0, 1.0, 1.0)))
            .collect();
        TrackingGraph::from_edges(nodes, pairs.iter().copied()).unwrap()
    }

    fn scores_for(g: &TrackingGraph, pairs: &[((usize, usize), f64)]) -> Vec<f64> {
        let mut s = vec![0.0; g.num_edges()];
        for &((a, b), v) in pairs {
            s[g.edge_index(a, b).unwrap()] = v;
        }
        s
    }

    fn active_pairs(g: &TrackingGraph, labels: &EdgeLabels) -> Vec<(usize, usize)> {
        g.edges()
            .iter()
            .zip(&labels.values)
            .filter(|(_, &y)| y)
            .map(|(e, _)| (e.src, e.dst))
            .collect()
    }

    /// Random graph with up to `max_edges` edges and dyadic scores `k/1024`,
    /// so that objective sums are exact in floating point.
    fn random_instance(seed: u64, max_nodes: usize, max_edges: usize) -> (TrackingGraph, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=max_nodes);
        let frames: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if frames[a] < frames[b] {
                    pairs.push((a, b));
                }
            }
        }
        let mut chosen = Vec::new();
        while !pairs.is_empty() && chosen.len() < max_edges {
            let i = rng.random_range(0..pairs.len());
            let p = pairs.swap_remove(i);
            if rng.random::<f64>() < 0.7 {
                chosen.push(p);
            }
        }
        let g = graph(&frames, &chosen);
        let scores = (0..g.num_edges())
            .map(|_| {
                // Bias towards the upper half so that violations are common.
                let k: u32 = rng.random_range(0..=1024);
                let k = if rng.random::<f64>() < 0.6 { 512 + k / 2 } else { k };
                k as f64 / 1024.0
            })
            .collect();
        (g, scores)
    }

    /// Brute-force minimum of the rounding objective over feasible labels.
    fn brute_force(g: &TrackingGraph, scores: &[f64]) -> f64 {
        let m = g.num_edges();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << m) {
            let labels = EdgeLabels::new((0..m).map(|e| mask >> e & 1 == 1).collect());
            if check_flow_constraints(g, &labels).unwrap().is_feasible() {
                best = best.min(objective(scores, &labels));
            }
        }
        best
    }

    #[test]
    fn threshold_examples() {
        let chain = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        let (s, r) = threshold(&chain, &[0.9, 0.9], 0.5).unwrap();
        assert!(s.feasible);
        assert_eq!(s.labels.num_active(), 2);
        assert_eq!(r.violated, 0);

        let fan_in = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        let (s, r) = threshold(&fan_in, &[0.9, 0.7], 0.5).unwrap();
        assert!(!s.feasible);
        assert_eq!(r.violated, 1);

        let empty = graph(&[0], &[]);
        assert!(threshold(&empty, &[], 0.5).unwrap().0.feasible);
        assert!(threshold(&empty, &[], 1.0).is_err());
    }

    #[test]
    fn greedy_keeps_the_best_incoming_edge() {
        // Nodes 1 and 2 feed node 3 with scores 0.9 and 0.7.
        let g = graph(&[0, 0, 0, 1], &[(1, 3), (2, 3)]);
        let s = scores_for(&g, &[((1, 3), 0.9), ((2, 3), 0.7)]);
        let out = greedy_round(&g, &s).unwrap();
        assert_eq!(active_pairs(&g, &out.labels), vec![(1, 3)]);
    }

    #[test]
    fn greedy_leaves_feasible_input_alone_and_breaks_ties_low() {
        let chain = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        let s = [0.8, 0.3];
        assert_eq!(
            greedy_round(&chain, &s).unwrap().labels,
            threshold(&chain, &s, 0.5).unwrap().0.labels
        );

        let g = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        let out = greedy_round(&g, &[0.8, 0.8]).unwrap();
        assert_eq!(out.labels.values, vec![true, false]);
    }

    #[test]
    fn exact_prefers_the_larger_score() {
        let g = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        let out = exact_round(&g, &[0.9, 0.7]).unwrap();
        assert_eq!(out.labels.values, vec![true, false]);
        assert_eq!(objective(&[0.9, 0.7], &out.labels), brute_force(&g, &[0.9, 0.7]));
        let low = exact_round(&g, &[0.2, 0.4]).unwrap();
        assert_eq!(low.labels.num_active(), 0);
    }

    #[test]
    fn exact_beats_greedy_on_a_path() {
        // a→c (0.9) conflicts with a→d (0.8) and b→c (0.8); taking the two
        // 0.8 edges is better than the single 0.9 edge greedy keeps.
        let g = graph(&[0, 0, 1, 1], &[(0, 2), (0, 3), (1, 2)]);
        let s = scores_for(&g, &[((0, 2), 0.9), ((0, 3), 0.8), ((1, 2), 0.8)]);
        let greedy = greedy_round(&g, &s).unwrap();
        let exact = exact_round(&g, &s).unwrap();
        assert_eq!(active_pairs(&g, &greedy.labels), vec![(0, 2)]);
        assert_eq!(active_pairs(&g, &exact.labels), vec![(0, 3), (1, 2)]);
        assert!(objective(&s, &exact.labels) < objective(&s, &greedy.labels));
    }

    #[test]
    fn exact_matches_brute_force_on_random_graphs() {
        for seed in 0..100 {
            let (g, s) = random_instance(seed, 8, 16);
            let exact = exact_round(&g, &s).unwrap();
            assert!(check_flow_constraints(&g, &exact.labels).unwrap().is_feasible());
            assert_eq!(objective(&s, &exact.labels), brute_force(&g, &s), "seed {seed}");
        }
    }

    #[test]
    fn violated_subgraph_examples() {
        let chain = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        assert!(violated_subgraph(&chain, &[0.9, 0.9], 0.5).unwrap().is_empty());

        let fan_in = graph(&[0, 0, 0, 0, 1], &[(0, 4), (1, 4), (2, 4), (3, 4)]);
        let sub = violated_subgraph(&fan_in, &[0.9, 0.8, 0.7, 0.2], 0.5).unwrap();
        assert_eq!(sub.parent_edges, vec![0, 1, 2]);
        assert_eq!(sub.scores, vec![0.9, 0.8, 0.7]);
    }

    /// Toy example with four violated constraints: two outgoing (nodes 5 and
    /// 8) and two incoming (nodes 9 and 11), embedded in otherwise clean
    /// trajectories.
    #[test]
    fn toy_example_with_four_violations() {
        let frames = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4];
        let active = [
            (0, 3),
            (1, 4),
            (2, 5),
            (3, 6),
            (4, 7),
            (5, 8),
            (5, 9),
            (6, 9),
            (8, 10),
            (8, 11),
            (7, 11),
            (10, 12),
        ];
        let inactive = [(0, 4), (3, 7), (6, 10), (4, 8)];
        let all: Vec<_> = active.iter().chain(&inactive).copied().collect();
        let g = graph(&frames, &all);
        let mut s = scores_for(&g, &active.iter().map(|&p| (p, 0.9)).collect::<Vec<_>>());
        for (p, v) in [
            ((5, 9), 0.6),
            ((6, 9), 0.8),
            ((8, 11), 0.7),
            ((7, 11), 0.55),
            ((5, 8), 0.85),
            ((8, 10), 0.75),
        ] {
            s[g.edge_index(p.0, p.1).unwrap()] = v;
        }
        for p in inactive {
            s[g.edge_index(p.0, p.1).unwrap()] = 0.2;
        }

        let (_, report) = threshold(&g, &s, 0.5).unwrap();
        use crate::graph::FlowDirection::{In, Out};
        assert_eq!(report.violated_nodes, vec![(5, Out), (8, Out), (9, In), (11, In)]);

        let sub = violated_subgraph(&g, &s, 0.5).unwrap();
        let sub_pairs: Vec<_> = sub.graph.edges().iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(sub_pairs, vec![(5, 8), (5, 9), (6, 9), (7, 11), (8, 10), (8, 11)]);

        for method in [RoundingMethod::Greedy, RoundingMethod::Exact] {
            let out = round(&g, &s, method).unwrap();
            assert!(check_flow_constraints(&g, &out.labels).unwrap().is_feasible());
            // Edges outside the subgraph keep their thresholded labels.
            for (e, &score) in s.iter().enumerate() {
                if !sub.parent_edges.contains(&e) {
                    assert_eq!(out.labels.values[e], score >= 0.5);
                }
            }
        }
        let exact = exact_round(&g, &s).unwrap();
        let kept: Vec<_> = sub
            .parent_edges
            .iter()
            .filter(|&&e| exact.labels.values[e])
            .map(|&e| g.edges()[e])
            .map(|e| (e.src, e.dst))
            .collect();
        assert_eq!(kept, vec![(5, 8), (6, 9), (7, 11), (8, 10)]);
        let dump = sub.format(
            &sub.parent_edges
                .iter()
                .map(|&e| exact.labels.values[e])
                .collect::<Vec<_>>(),
        );
        assert_eq!(dump.lines().next(), Some("5,8,0.85,1"));
    }

    #[test]
    fn trajectory_extraction() {
        let g = graph(&[0, 1, 1, 2, 2, 3], &[(0, 2), (2, 4), (1, 3), (3, 5)]);
        let chains = extract_chains(&g, &EdgeLabels::new(vec![true; 4])).unwrap();
        assert_eq!(chains, vec![vec![0, 2, 4], vec![1, 3, 5]]);
        let none = extract_chains(&g, &EdgeLabels::zeros(4)).unwrap();
        assert_eq!(none.len(), 6);
        let fan_in = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        assert!(matches!(
            extract_chains(&fan_in, &EdgeLabels::new(vec![true, true])),
            Err(Error::Infeasible)
        ));
        let trajs = extract_trajectories(&g, &EdgeLabels::new(vec![true; 4])).unwrap();
        assert_eq!(
            trajs[1].boxes.iter().map(|b| b.frame).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn rounding_invariants(seed in any::<u64>()) {
            let (g, s) = random_instance(seed, 10, 30);
            let (thresholded, _) = threshold(&g, &s, 0.5).unwrap();
            let (greedy, steps) = greedy_round_counted(&g, &s).unwrap();
            let exact = exact_round(&g, &s).unwrap();
            prop_assert!(check_flow_constraints(&g, &greedy.labels).unwrap().is_feasible());
            prop_assert!(check_flow_constraints(&g, &exact.labels).unwrap().is_feasible());
            for (g_label, t_label) in greedy.labels.values.iter().zip(&thresholded.labels.values) {
                prop_assert!(!g_label | t_label);
            }
            prop_assert!(objective(&s, &exact.labels) <= objective(&s, &greedy.labels));
            prop_assert!(steps <= 4 * g.max_degree() * g.num_nodes());
            for sol in [&greedy, &exact] {
                let chains = extract_chains(&g, &sol.labels).unwrap();
                prop_assert_eq!(&labels_from_chains(&g, &chains).unwrap(), &sol.labels);
                let mut seen: Vec<usize> = chains.concat();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..g.num_nodes()).collect::<Vec<_>>());
            }
        }
    }
}
