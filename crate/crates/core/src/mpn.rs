//! Message passing over tracking graphs and the edge classifier.
//!
//! Each step first updates every edge from its endpoints (node → edge), then
//! every node from its incident edges (edge → node). The time-aware node
//! update aggregates past and future neighbors separately and fuses the two
//! sums; the vanilla update sums messages from all neighbors at once.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{encode_features, FeatureSet, GraphFeatures, EDGE_ENCODER, EDGE_FEATURE_DIM, NODE_ENCODER};
use crate::error::{Error, Result};
use crate::graph::TrackingGraph;
use crate::nn::{Activation, Groups, Mlp, MlpSpec, ModelParams, NodeId, Tape};

pub const NODE_DIM: usize = 32;
pub const EDGE_DIM: usize = 16;

pub const EDGE_UPDATE: &str = "edge_update";
pub const NODE_PAST: &str = "node_past";
pub const NODE_FUTURE: &str = "node_future";
pub const NODE_UPDATE: &str = "node_update";
pub const NODE_MESSAGE: &str = "node_message";
pub const CLASSIFIER: &str = "classifier";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Vanilla,
    #[default]
    TimeAware,
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::Vanilla => "vanilla",
            UpdateMode::TimeAware => "time_aware",
        })
    }
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(UpdateMode::Vanilla),
            "time_aware" | "time-aware" => Ok(UpdateMode::TimeAware),
            other => Err(Error::InvalidParameter(format!("unknown update mode `{other}`"))),
        }
    }
}

/// Architecture of a message passing model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: UpdateMode,
    /// Number of message passing steps.
    pub steps: usize,
    pub appearance_dim: usize,
    /// Hidden width of the appearance projection.
    pub node_encoder_hidden: usize,
    /// Reuse the same update networks at every step.
    pub shared_weights: bool,
    pub features: FeatureSet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: UpdateMode::TimeAware,
            steps: 12,
            appearance_dim: 32,
            node_encoder_hidden: 128,
            shared_weights: true,
            features: FeatureSet::TimePosApp,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.appearance_dim == 0 || self.node_encoder_hidden == 0 {
            return Err(Error::InvalidParameter("network widths must be positive".into()));
        }
        Ok(())
    }

    /// Default first supervised step: `⌈L/2⌉ + 1`, capped at `L`.
    pub fn default_first_supervised_step(&self) -> usize {
        (self.steps.div_ceil(2) + 1).min(self.steps)
    }

    /// Network name used at message passing step `step` (1-based).
    pub fn step_net_name(&self, base: &str, step: usize) -> String {
        if self.shared_weights {
            base.to_string()
        } else {
            format!("{base}.{step}")
        }
    }

    fn step_networks(&self) -> Vec<(&'static str, Vec<usize>)> {
        let message_in = NODE_DIM + EDGE_DIM + NODE_DIM;
        let mut nets = vec![(EDGE_UPDATE, vec![4 * NODE_DIM + 2 * EDGE_DIM, 80, EDGE_DIM])];
        match self.mode {
            UpdateMode::TimeAware => {
                nets.push((NODE_PAST, vec![message_in, 56, NODE_DIM]));
                nets.push((NODE_FUTURE, vec![message_in, 56, NODE_DIM]));
                nets.push((NODE_UPDATE, vec![2 * NODE_DIM, NODE_DIM]));
            }
            UpdateMode::Vanilla => nets.push((NODE_MESSAGE, vec![message_in, 56, NODE_DIM])),
        }
        nets
    }

    /// Freshly initialized parameters for every network of this architecture.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams> {
        self.validate()?;
        let mut params = ModelParams::new();
        let relu = |sizes: &[usize]| MlpSpec::new(sizes, Activation::Relu);
        params.insert(
            NODE_ENCODER,
            Mlp::init(relu(&[self.appearance_dim, self.node_encoder_hidden, NODE_DIM])?, rng),
        );
        params.insert(
            EDGE_ENCODER,
            Mlp::init(relu(&[EDGE_FEATURE_DIM, 18, 18, EDGE_DIM])?, rng),
        );
        let copies = if self.shared_weights {
            1.min(self.steps)
        } else {
            self.steps
        };
        for step in 1..=copies {
            for (base, sizes) in self.step_networks() {
                params.insert(self.step_net_name(base, step), Mlp::init(relu(&sizes)?, rng));
            }
        }
        params.insert(
            CLASSIFIER,
            Mlp::init(MlpSpec::new(&[EDGE_DIM, 8, 1], Activation::Sigmoid)?, rng),
        );
        Ok(params)
    }

    /// Key/value form stored in checkpoints.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("mode".into(), self.mode.to_string());
        m.insert("steps".into(), self.steps.to_string());
        m.insert("appearance_dim".into(), self.appearance_dim.to_string());
        m.insert("node_encoder_hidden".into(), self.node_encoder_hidden.to_string());
        m.insert("shared_weights".into(), self.shared_weights.to_string());
        m.insert("features".into(), self.features.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            meta.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing model key `{key}`")))
        }
        fn num<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            get(meta, key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
        }
        let cfg = Self {
            mode: get(meta, "mode")?.parse()?,
            steps: num(meta, "steps")?,
            appearance_dim: num(meta, "appearance_dim")?,
            node_encoder_hidden: num(meta, "node_encoder_hidden")?,
            shared_weights: num(meta, "shared_weights")?,
            features: get(meta, "features")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Row index structures for one graph, shared by every step.
pub struct GraphIndex {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    /// Per node: edges arriving from the past, by ascending neighbor id.
    past: Arc<Groups>,
    /// Per node: edges leaving to the future, by ascending neighbor id.
    future: Arc<Groups>,
    /// Vanilla messages are laid out as `|E|` rows addressed to `dst`
    /// followed by `|E|` rows addressed to `src`.
    message_target: Arc<[usize]>,
    message_edge: Arc<[usize]>,
    /// Per node: message rows from all neighbors, by ascending neighbor id.
    all: Arc<Groups>,
}

impl GraphIndex {
    pub fn new(graph: &TrackingGraph) -> Self {
        let n_edges = graph.num_edges();
        let src: Vec<usize> = graph.edges().iter().map(|e| e.src).collect();
        let dst: Vec<usize> = graph.edges().iter().map(|e| e.dst).collect();
        let mut past = Vec::with_capacity(graph.num_nodes());
        let mut future = Vec::with_capacity(graph.num_nodes());
        let mut all = Vec::with_capacity(graph.num_nodes());
        for i in 0..graph.num_nodes() {
            let p = graph.past_neighbors(i);
            let f = graph.future_neighbors(i);
            past.push(p.iter().map(|nb| nb.edge).collect());
            future.push(f.iter().map(|nb| nb.edge).collect());
            let mut rows: Vec<(usize, usize)> = p
                .iter()
                .map(|nb| (nb.node, nb.edge))
                .chain(f.iter().map(|nb| (nb.node, n_edges + nb.edge)))
                .collect();
            rows.sort_unstable();
            all.push(rows.into_iter().map(|(_, r)| r).collect());
        }
        let message_target: Vec<usize> = dst.iter().chain(src.iter()).copied().collect();
        let message_edge: Vec<usize> = (0..n_edges).chain(0..n_edges).collect();
        Self {
            src: src.into(),
            dst: dst.into(),
            past: Arc::new(past),
            future: Arc::new(future),
            message_target: message_target.into(),
            message_edge: message_edge.into(),
            all: Arc::new(all),
        }
    }
}

/// Tape handles of the node and edge embeddings at every step `0..=L`.
#[derive(Clone, Debug)]
pub struct EmbeddingState {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<NodeId>,
}

impl EmbeddingState {
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }
}

fn check_step(state: &EmbeddingState, step: usize) -> Result<()> {
    if step == 0 || step > state.nodes.len() {
        return Err(Error::InvalidParameter(format!(
            "message passing step {step} out of range 1..={}",
            state.nodes.len()
        )));
    }
    Ok(())
}

/// Edge embeddings at `step` from the previous node/edge embeddings and the
/// initial ones. Requires node and edge embeddings up to `step − 1`.
pub fn edge_update(
    tape: &mut Tape,
    index: &GraphIndex,
    params: &ModelParams,
    config: &ModelConfig,
    state: &EmbeddingState,
    step: usize,
) -> Result<NodeId> {
    check_step(state, step)?;
    if state.edges.len() < step {
        return Err(Error::InvalidParameter(format!(
            "edge embeddings for step {} missing",
            step - 1
        )));
    }
    let net = params.id(&config.step_net_name(EDGE_UPDATE, step))?;
    let (h_prev, e_prev) = (state.nodes[step - 1], state.edges[step - 1]);
    let (h0, e0) = (state.nodes[0], state.edges[0]);
    let parts = [
        tape.gather_rows(h_prev, index.src.clone())?,
        tape.gather_rows(h_prev, index.dst.clone())?,
        e_prev,
        tape.gather_rows(h0, index.src.clone())?,
        tape.gather_rows(h0, index.dst.clone())?,
        e0,
    ];
    let input = tape.concat_cols(&parts)?;
    tape.mlp(params, net, input)
}

/// Messages `N([h_i^{l-1}, h_e^l, h_i^0])` for every row of `edge_rows`,
/// addressed to node `targets[row]`.
fn messages(
    tape: &mut Tape,
    params: &ModelParams,
    net_name: &str,
    state: &EmbeddingState,
    step: usize,
    edges_now: NodeId,
    targets: Arc<[usize]>,
    edge_rows: Option<Arc<[usize]>>,
) -> Result<NodeId> {
    let net = params.id(net_name)?;
    let receiver = tape.gather_rows(state.nodes[step - 1], targets.clone())?;
    let initial = tape.gather_rows(state.nodes[0], targets)?;
    let edge = match edge_rows {
        Some(rows) => tape.gather_rows(edges_now, rows)?,
        None => edges_now,
    };
    let input = tape.concat_cols(&[receiver, edge, initial])?;
    tape.mlp(params, net, input)
}

/// Sum of messages from all neighbors, without distinguishing time direction.
pub fn node_update_vanilla(
    tape: &mut Tape,
    index: &GraphIndex,
    params: &ModelParams,
    config: &ModelConfig,
    state: &EmbeddingState,
    edges_now: NodeId,
    step: usize,
) -> Result<NodeId> {
    check_step(state, step)?;
    let name = config.step_net_name(NODE_MESSAGE, step);
    let msgs = messages(
        tape,
        params,
        &name,
        state,
        step,
        edges_now,
        index.message_target.clone(),
        Some(index.message_edge.clone()),
    )?;
    tape.scatter_sum(msgs, index.all.clone())
}

/// Separate sums over past and future neighbors, fused by a final network.
pub fn node_update_time_aware(
    tape: &mut Tape,
    index: &GraphIndex,
    params: &ModelParams,
    config: &ModelConfig,
    state: &EmbeddingState,
    edges_now: NodeId,
    step: usize,
) -> Result<NodeId> {
    check_step(state, step)?;
    // An edge (i, j) is a past link for j and a future link for i.
    let past_name = config.step_net_name(NODE_PAST, step);
    let past_msgs = messages(
        tape,
        params,
        &past_name,
        state,
        step,
        edges_now,
        index.dst.clone(),
        None,
    )?;
    let future_name = config.step_net_name(NODE_FUTURE, step);
    let future_msgs = messages(
        tape,
        params,
        &future_name,
        state,
        step,
        edges_now,
        index.src.clone(),
        None,
    )?;
    let past = tape.scatter_sum(past_msgs, index.past.clone())?;
    let future = tape.scatter_sum(future_msgs, index.future.clone())?;
    let fused = tape.concat_cols(&[past, future])?;
    let net = params.id(&config.step_net_name(NODE_UPDATE, step))?;
    tape.mlp(params, net, fused)
}

/// Runs `config.steps` rounds of message passing after encoding.
pub fn propagate(
    tape: &mut Tape,
    index: &GraphIndex,
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &GraphFeatures,
) -> Result<EmbeddingState> {
    let (h0, e0) = encode_features(tape, params, inputs)?;
    let mut state = EmbeddingState {
        nodes: vec![h0],
        edges: vec![e0],
    };
    for step in 1..=config.steps {
        let edges = edge_update(tape, index, params, config, &state, step)?;
        state.edges.push(edges);
        let nodes = match config.mode {
            UpdateMode::TimeAware => node_update_time_aware(tape, index, params, config, &state, edges, step)?,
            UpdateMode::Vanilla => node_update_vanilla(tape, index, params, config, &state, edges, step)?,
        };
        state.nodes.push(nodes);
    }
    Ok(state)
}

/// Classifier outputs for steps `first..=last`, as `|E| × 1` tape values.
pub fn classify_edges(
    tape: &mut Tape,
    params: &ModelParams,
    state: &EmbeddingState,
    first: usize,
    last: usize,
) -> Result<Vec<NodeId>> {
    if first > last {
        return Err(Error::InvalidParameter(format!(
            "first supervised step {first} exceeds last step {last}"
        )));
    }
    if last > state.steps() {
        return Err(Error::InvalidParameter(format!(
            "step {last} not computed (have {})",
            state.steps()
        )));
    }
    let net = params.id(CLASSIFIER)?;
    (first..=last).map(|l| tape.mlp(params, net, state.edges[l])).collect()
}

/// Final-step edge scores for one graph.
pub fn predict_scores(graph: &TrackingGraph, params: &ModelParams, config: &ModelConfig, fps: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let index = GraphIndex::new(graph);
    let inputs = GraphFeatures::new(graph, config.appearance_dim, fps, config.features)?;
    let state = propagate(&mut tape, &index, params, config, &inputs)?;
    let out = classify_edges(&mut tape, params, &state, config.steps, config.steps)?;
    Ok(tape.value(out[0]).data().to_vec())
}
