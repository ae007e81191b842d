//! Initial node and edge embeddings.
//!
//! Nodes are embedded by projecting their appearance vector; edges by encoding
//! a 6-dimensional feature vector of relative geometry, elapsed time and
//! appearance distance.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Detection, TrackingGraph};
use crate::nn::{Matrix, ModelParams, NodeId, Tape};
use crate::rng::stream_rng;

pub const EDGE_FEATURE_DIM: usize = 6;
pub const NODE_ENCODER: &str = "node_encoder";
pub const EDGE_ENCODER: &str = "edge_encoder";

/// `(dx, dy, log h ratio, log w ratio, time difference in seconds, appearance distance)`.
pub type EdgeFeatures = [f64; EDGE_FEATURE_DIM];

/// Which edge features the model sees. Disabled features are zeroed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    #[serde(rename = "time")]
    Time,
    #[serde(rename = "time+pos")]
    TimePos,
    #[default]
    #[serde(rename = "time+pos+app")]
    TimePosApp,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Time, FeatureSet::TimePos, FeatureSet::TimePosApp];

    pub fn uses_position(self) -> bool {
        self != FeatureSet::Time
    }

    pub fn uses_appearance(self) -> bool {
        self == FeatureSet::TimePosApp
    }

    pub fn mask(self, mut f: EdgeFeatures) -> EdgeFeatures {
        if !self.uses_position() {
            f[..4].fill(0.0);
        }
        if !self.uses_appearance() {
            f[5] = 0.0;
        }
        f
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Time => "time",
            FeatureSet::TimePos => "time+pos",
            FeatureSet::TimePosApp => "time+pos+app",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(FeatureSet::Time),
            "time+pos" => Ok(FeatureSet::TimePos),
            "time+pos+app" => Ok(FeatureSet::TimePosApp),
            other => Err(Error::InvalidParameter(format!("unknown feature set `{other}`"))),
        }
    }
}

/// Relative geometry of two detections, normalized by their mean height.
pub fn geometry_features(a: &Detection, b: &Detection, fps: f64, appearance_dist: f64) -> Result<EdgeFeatures> {
    if a.frame == b.frame {
        return Err(Error::SameFrame(a.id, b.id));
    }
    if !a.bbox.is_valid() || !b.bbox.is_valid() {
        return Err(Error::InvalidBox);
    }
    if !(fps > 0.0) {
        return Err(Error::InvalidParameter("fps must be positive".into()));
    }
    let (p, q) = (&a.bbox, &b.bbox);
    let mean_h = p.h + q.h;
    Ok([
        2.0 * (q.x - p.x) / mean_h,
        2.0 * (q.y - p.y) / mean_h,
        (p.h / q.h).ln(),
        (p.w / q.w).ln(),
        (b.frame as f64 - a.frame as f64) / fps,
        appearance_dist,
    ])
}

pub fn appearance_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Source of per-detection appearance vectors.
#[derive(Clone, Debug)]
pub enum AppearanceProvider {
    /// Vectors read from disk, keyed by detection id.
    File(HashMap<usize, Vec<f64>>),
    /// Per-identity unit-Gaussian prototype plus `sigma`-scaled Gaussian noise.
    /// Detections without an identity get a fresh random vector.
    Synthetic { dim: usize, sigma: f64, seed: u64 },
}

impl AppearanceProvider {
    pub fn appearance(&self, det: &Detection) -> Result<Vec<f64>> {
        match self {
            AppearanceProvider::File(map) => map
                .get(&det.id)
                .cloned()
                .ok_or_else(|| Error::IndexMismatch(format!("no appearance vector for detection {}", det.id))),
            AppearanceProvider::Synthetic { dim, sigma, seed } => {
                let mut noise = stream_rng(*seed, 2 * det.id as u64 + 1);
                match det.gt_track {
                    Some(track) => {
                        let proto = prototype(*seed, track, *dim);
                        Ok(proto
                            .into_iter()
                            .map(|p| p + sigma * noise.sample::<f64, _>(StandardNormal))
                            .collect())
                    }
                    None => Ok((0..*dim).map(|_| noise.sample(StandardNormal)).collect()),
                }
            }
        }
    }

    /// Fills every detection's appearance vector. All vectors must share one
    /// dimension.
    pub fn assign(&self, detections: &mut [Detection]) -> Result<()> {
        let mut dim = None;
        for det in detections.iter_mut() {
            let v = self.appearance(det)?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    });
                }
                _ => {}
            }
            det.appearance = v;
        }
        Ok(())
    }
}

fn prototype(seed: u64, track: u32, dim: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, 2 * track as u64);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Edge feature matrix, one row per edge, with disabled features zeroed.
pub fn edge_feature_matrix(graph: &TrackingGraph, fps: f64, features: FeatureSet) -> Result<Matrix> {
    let nodes = graph.nodes();
    let mut m = Matrix::zeros(graph.num_edges(), EDGE_FEATURE_DIM);
    for (e, edge) in graph.edges().iter().enumerate() {
        let (a, b) = (&nodes[edge.src], &nodes[edge.dst]);
        let dist = appearance_distance(&a.appearance, &b.appearance)?;
        let f = features.mask(geometry_features(a, b, fps, dist)?);
        m.row_mut(e).copy_from_slice(&f);
    }
    Ok(m)
}

/// Appearance vectors stacked row-wise.
pub fn node_feature_matrix(graph: &TrackingGraph, appearance_dim: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(graph.num_nodes(), appearance_dim);
    for (i, det) in graph.nodes().iter().enumerate() {
        if det.appearance.len() != appearance_dim {
            return Err(Error::DimensionMismatch {
                expected: appearance_dim,
                got: det.appearance.len(),
            });
        }
        m.row_mut(i).copy_from_slice(&det.appearance);
    }
    Ok(m)
}

/// Network inputs of one graph: appearance rows per node and feature rows
/// per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFeatures {
    pub nodes: Matrix,
    pub edges: Matrix,
}

impl GraphFeatures {
    pub fn new(graph: &TrackingGraph, appearance_dim: usize, fps: f64, features: FeatureSet) -> Result<Self> {
        Ok(Self {
            nodes: node_feature_matrix(graph, appearance_dim)?,
            edges: edge_feature_matrix(graph, fps, features)?,
        })
    }

    /// Inputs of the disjoint union of the corresponding graphs.
    pub fn concat(parts: &[GraphFeatures]) -> Self {
        let node_cols = parts.first().map_or(0, |p| p.nodes.cols());
        Self {
            nodes: Matrix::vstack(&parts.iter().map(|p| &p.nodes).collect::<Vec<_>>(), node_cols),
            edges: Matrix::vstack(&parts.iter().map(|p| &p.edges).collect::<Vec<_>>(), EDGE_FEATURE_DIM),
        }
    }
}

/// Records the step-0 embeddings of precomputed inputs on `tape`.
pub fn encode_features(tape: &mut Tape, params: &ModelParams, inputs: &GraphFeatures) -> Result<(NodeId, NodeId)> {
    let node_net = params.id(NODE_ENCODER)?;
    let edge_net = params.id(EDGE_ENCODER)?;
    let node_in = tape.constant(inputs.nodes.clone());
    let edge_in = tape.constant(inputs.edges.clone());
    let nodes = tape.mlp(params, node_net, node_in)?;
    let edges = tape.mlp(params, edge_net, edge_in)?;
    Ok((nodes, edges))
}

/// Records the step-0 embeddings on `tape`: `|V| × 32` node embeddings and
/// `|E| × 16` edge embeddings.
pub fn encode_initial(
    tape: &mut Tape,
    graph: &TrackingGraph,
    params: &ModelParams,
    fps: f64,
    features: FeatureSet,
) -> Result<(NodeId, NodeId)> {
    let appearance_dim = params.by_name(NODE_ENCODER)?.spec.input_dim();
    params.id(EDGE_ENCODER)?;
    let inputs = GraphFeatures::new(graph, appearance_dim, fps, features)?;
    encode_features(tape, params, &inputs)
}
