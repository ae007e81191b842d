//! Detections, tracking graphs and the flow conservation constraints.
//!
//! A [`TrackingGraph`] connects detections in different frames. Every edge is
//! stored with its earlier-frame endpoint first, so "incoming" always means
//! "from the past" and "outgoing" means "to the future". Each node may have at
//! most one active incoming and one active outgoing edge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, top-left corner convention, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }
}

/// One observed object.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub id: usize,
    /// Zero-based frame index.
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub appearance: Vec<f64>,
    /// Ground-truth identity; `None` marks a false positive or unlabeled box.
    pub gt_track: Option<u32>,
}

impl Detection {
    pub fn new(id: usize, frame: usize, bbox: BBox) -> Self {
        Self {
            id,
            frame,
            bbox,
            confidence: 1.0,
            appearance: Vec::new(),
            gt_track: None,
        }
    }

    pub fn with_appearance(mut self, appearance: Vec<f64>) -> Self {
        self.appearance = appearance;
        self
    }

    pub fn with_track(mut self, track: u32) -> Self {
        self.gt_track = Some(track);
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }
}

/// Directed-in-time edge between two node indices, `src` in the earlier frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Adjacency entry: the neighboring node and the index of the connecting edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub edge: usize,
}

#[derive(Clone, Debug)]
pub struct TrackingGraph {
    nodes: Vec<Detection>,
    edges: Vec<Edge>,
    past: Vec<Vec<Neighbor>>,
    future: Vec<Vec<Neighbor>>,
}

impl TrackingGraph {
    /// Builds a graph from explicit node pairs. Pairs are oriented by frame,
    /// deduplicated and stored in ascending `(src, dst)` order.
    pub fn from_edges<I>(nodes: Vec<Detection>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::IndexMismatch(format!(
                    "edge ({a}, {b}) out of range for {} nodes",
                    nodes.len()
                )));
            }
            let (fa, fb) = (nodes[a].frame, nodes[b].frame);
            let edge = match fa.cmp(&fb) {
                std::cmp::Ordering::Less => Edge { src: a, dst: b },
                std::cmp::Ordering::Greater => Edge { src: b, dst: a },
                std::cmp::Ordering::Equal => return Err(Error::SameFrame(a, b)),
            };
            set.insert(edge);
        }
        let edges: Vec<Edge> = set.into_iter().collect();

        let mut past = vec![Vec::new(); nodes.len()];
        let mut future = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            future[edge.src].push(Neighbor {
                node: edge.dst,
                edge: e,
            });
            past[edge.dst].push(Neighbor {
                node: edge.src,
                edge: e,
            });
        }
        // Edges are sorted by (src, dst), so future lists are already ordered.
        for list in past.iter_mut() {
            list.sort_by_key(|n| n.node);
        }
        Ok(Self {
            nodes,
            edges,
            past,
            future,
        })
    }

    pub fn nodes(&self) -> &[Detection] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors in earlier frames, ascending node index.
    pub fn past_neighbors(&self, node: usize) -> &[Neighbor] {
        &self.past[node]
    }

    /// Neighbors in later frames, ascending node index.
    pub fn future_neighbors(&self, node: usize) -> &[Neighbor] {
        &self.future[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.past[node].len() + self.future[node].len()
    }

    /// Maximum total degree over all nodes (Δ(G)).
    pub fn max_degree(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        self.future
            .get(src)?
            .binary_search_by_key(&dst, |n| n.node)
            .ok()
            .map(|pos| self.future[src][pos].edge)
    }

    /// Subgraph over the same nodes keeping only the listed edges. Returns the
    /// subgraph and, for each of its edges, the index in `self`.
    pub fn edge_subgraph(&self, edges: &[usize]) -> (TrackingGraph, Vec<usize>) {
        let mut kept: Vec<usize> = edges.to_vec();
        kept.sort_unstable();
        kept.dedup();
        let pairs = kept.iter().map(|&e| (self.edges[e].src, self.edges[e].dst));
        let sub = TrackingGraph::from_edges(self.nodes.clone(), pairs).expect("subgraph of a valid graph is valid");
        (sub, kept)
    }

    /// Places several graphs side by side. Node and edge indices of the `k`-th
    /// graph are offset by the sizes of the graphs before it, so edges keep
    /// their relative order.
    pub fn disjoint_union(graphs: &[TrackingGraph]) -> TrackingGraph {
        let mut nodes = Vec::new();
        let mut pairs = Vec::new();
        for g in graphs {
            let offset = nodes.len();
            nodes.extend(g.nodes.iter().cloned());
            pairs.extend(g.edges.iter().map(|e| (e.src + offset, e.dst + offset)));
        }
        TrackingGraph::from_edges(nodes, pairs).expect("union of valid graphs is valid")
    }
}

/// Builds a pruned tracking graph.
///
/// Candidate pairs lie in different frames at most `max_frame_gap` apart. A
/// candidate edge survives only if each endpoint is among the other's `k`
/// nearest candidates by Euclidean appearance distance. Distance ties are
/// broken by the lower node index.
pub fn build_graph(detections: &[Detection], max_frame_gap: usize, k: usize) -> Result<TrackingGraph> {
    if detections.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if max_frame_gap == 0 {
        return Err(Error::InvalidParameter("max_frame_gap must be at least 1".into()));
    }
    let dim = detections[0].appearance.len();
    if let Some(bad) = detections.iter().find(|d| d.appearance.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.appearance.len(),
        });
    }

    let n = detections.len();
    let is_candidate = |i: usize, j: usize| {
        let (fi, fj) = (detections[i].frame, detections[j].frame);
        fi != fj && fi.abs_diff(fj) <= max_frame_gap
    };

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&detections[i].appearance, &detections[j].appearance);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut knn: Vec<BTreeSet<usize>> = Vec::with_capacity(n);
    let mut candidates = Vec::new();
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| is_candidate(i, j)));
        if candidates.len() > k {
            candidates.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
            candidates.truncate(k);
        }
        knn.push(candidates.iter().copied().collect());
    }

    let mut pairs = Vec::new();
    for i in 0..n {
        for &j in knn[i].iter().filter(|&&j| j > i) {
            if knn[j].contains(&i) {
                pairs.push((i, j));
            }
        }
    }
    TrackingGraph::from_edges(detections.to_vec(), pairs)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Binary edge labels, indexed like the graph's edge list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeLabels {
    pub values: Vec<bool>,
}

impl EdgeLabels {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_active(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Labels an edge active iff both endpoints share a ground-truth track and no
/// other detection of that track in the graph lies strictly between them.
pub fn ground_truth_labels(graph: &TrackingGraph) -> EdgeLabels {
    let mut frames_by_track: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for det in graph.nodes() {
        if let Some(track) = det.gt_track {
            frames_by_track.entry(track).or_default().push(det.frame);
        }
    }
    for frames in frames_by_track.values_mut() {
        frames.sort_unstable();
    }

    let values = graph
        .edges()
        .iter()
        .map(|edge| {
            let (a, b) = (&graph.nodes()[edge.src], &graph.nodes()[edge.dst]);
            match (a.gt_track, b.gt_track) {
                (Some(ta), Some(tb)) if ta == tb => {
                    let frames = &frames_by_track[&ta];
                    // First frame strictly after a.frame must be b.frame itself.
                    let next = frames.partition_point(|&f| f <= a.frame);
                    next < frames.len() && frames[next] >= b.frame
                }
                _ => false,
            }
        })
        .collect();
    EdgeLabels { values }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowDirection {
    In,
    Out,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintReport {
    pub total_constraints: usize,
    pub violated: usize,
    pub satisfaction_ratio: f64,
    pub violated_nodes: Vec<(usize, FlowDirection)>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violated == 0
    }
}

/// Evaluates the per-node in/out capacity constraints (2·|V| in total).
pub fn check_flow_constraints(graph: &TrackingGraph, labels: &EdgeLabels) -> Result<ConstraintReport> {
    if labels.len() != graph.num_edges() {
        return Err(Error::IndexMismatch(format!(
            "{} labels for {} edges",
            labels.len(),
            graph.num_edges()
        )));
    }
    let mut violated_nodes = Vec::new();
    for node in 0..graph.num_nodes() {
        let active_in = graph
            .past_neighbors(node)
            .iter()
            .filter(|n| labels.values[n.edge])
            .count();
        if active_in > 1 {
            violated_nodes.push((node, FlowDirection::In));
        }
        let active_out = graph
            .future_neighbors(node)
            .iter()
            .filter(|n| labels.values[n.edge])
            .count();
        if active_out > 1 {
            violated_nodes.push((node, FlowDirection::Out));
        }
    }
    let total = 2 * graph.num_nodes();
    let violated = violated_nodes.len();
    let satisfaction_ratio = if total == 0 {
        1.0
    } else {
        1.0 - violated as f64 / total as f64
    };
    Ok(ConstraintReport {
        total_constraints: total,
        violated,
        satisfaction_ratio,
        violated_nodes,
    })
}

/// Sparse 0/1 constraint matrix of shape `2|V| × |E|`.
///
/// Row `2i` is node `i`'s incoming constraint and row `2i + 1` its outgoing
/// constraint. Every column holds exactly two ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintMatrix {
    rows: usize,
    /// Per edge: `[out-row of src, in-row of dst]`.
    columns: Vec<[usize; 2]>,
}

impl ConstraintMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.columns.len())
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        u8::from(self.columns[col].contains(&row))
    }

    pub fn column(&self, col: usize) -> [usize; 2] {
        self.columns[col]
    }

    /// Computes `A·y`.
    pub fn mul(&self, y: &[bool]) -> Vec<usize> {
        let mut out = vec![0; self.rows];
        for (col, &active) in self.columns.iter().zip(y) {
            if active {
                out[col[0]] += 1;
                out[col[1]] += 1;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut dense = vec![vec![0; self.columns.len()]; self.rows];
        for (c, rows) in self.columns.iter().enumerate() {
            for &r in rows {
                dense[r][c] = 1;
            }
        }
        dense
    }
}

pub fn constraint_matrix(graph: &TrackingGraph) -> ConstraintMatrix {
    ConstraintMatrix {
        rows: 2 * graph.num_nodes(),
        columns: graph.edges().iter().map(|e| [2 * e.src + 1, 2 * e.dst]).collect(),
    }
}
