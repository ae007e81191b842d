//! Sequence-level inference: filtering, sliding-window scoring, score
//! averaging, rounding and trajectory post-processing.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Detection, TrackingGraph};
use crate::mpn::{predict_scores, ModelConfig};
use crate::nn::ModelParams;
use crate::rounding::{extract_chains, round, threshold, violated_subgraph, RoundingMethod};
use crate::trainer::frame_stride;
use crate::trajectory::{TrackBox, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sampled frames per window.
    pub window_frames: usize,
    /// Sampled frames shared by consecutive windows.
    pub overlap_frames: usize,
    pub fps_static: f64,
    pub fps_moving: f64,
    pub moving_camera: bool,
    /// Longest edge in sampled frames; defaults to `window_frames`.
    pub max_frame_gap: Option<usize>,
    pub k: usize,
    /// Threshold for the constraint-satisfaction diagnostic.
    pub threshold: f64,
    pub rounding: RoundingMethod,
    pub conf_min: f64,
    pub nms_iou: f64,
    pub interpolate: bool,
    pub drop_singletons: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_frames: 15,
            overlap_frames: 14,
            fps_static: 6.0,
            fps_moving: 9.0,
            moving_camera: false,
            max_frame_gap: None,
            k: 50,
            threshold: 0.5,
            rounding: RoundingMethod::Exact,
            conf_min: 0.5,
            nms_iou: 0.85,
            interpolate: true,
            drop_singletons: true,
        }
    }
}

impl PipelineConfig {
    pub fn target_fps(&self) -> f64 {
        if self.moving_camera {
            self.fps_moving
        } else {
            self.fps_static
        }
    }

    pub fn max_gap(&self) -> usize {
        self.max_frame_gap.unwrap_or(self.window_frames)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.window_frames == 0 || self.overlap_frames >= self.window_frames {
            return bad("window_frames must be positive and exceed overlap_frames");
        }
        if !(self.fps_static > 0.0 && self.fps_moving > 0.0) {
            return bad("target frame rates must be positive");
        }
        if self.k == 0 || self.max_frame_gap == Some(0) {
            return bad("k and max_frame_gap must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.conf_min) || !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("conf_min and nms_iou must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Indices of the detections that survive the confidence filter and
/// per-frame non-maximum suppression, in input order. Within a frame, boxes
/// are visited by descending confidence (ties by index) and a box is
/// suppressed when its IoU with a kept box exceeds `nms_iou`.
pub fn prefilter(detections: &[Detection], conf_min: f64, nms_iou: f64) -> Vec<usize> {
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        if d.confidence >= conf_min {
            by_frame.entry(d.frame).or_default().push(i);
        }
    }
    let mut kept = Vec::new();
    for mut idx in by_frame.into_values() {
        idx.sort_by(|&a, &b| {
            detections[b]
                .confidence
                .total_cmp(&detections[a].confidence)
                .then(a.cmp(&b))
        });
        let mut frame_kept: Vec<usize> = Vec::new();
        for i in idx {
            if frame_kept
                .iter()
                .all(|&j| detections[i].bbox.iou(&detections[j].bbox) <= nms_iou)
            {
                frame_kept.push(i);
            }
        }
        kept.extend(frame_kept);
    }
    kept.sort_unstable();
    kept
}

/// Window ranges over `num_frames` sampled frames, advancing by
/// `window − overlap`. The last window ends at the last frame; a sequence
/// no longer than one window gets a single window.
pub fn window_ranges(num_frames: usize, window: usize, overlap: usize) -> Vec<Range<usize>> {
    if num_frames <= window {
        return vec![0..num_frames];
    }
    let step = window - overlap;
    let last = num_frames - window;
    let mut out: Vec<Range<usize>> = (0..=last).step_by(step).map(|s| s..s + window).collect();
    if out.last().is_some_and(|r| r.start != last) {
        out.push(last..num_frames);
    }
    out
}

/// What happened while tracking one sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub input_detections: usize,
    pub kept_detections: usize,
    pub frame_stride: usize,
    pub sampled_frames: usize,
    pub windows: usize,
    pub nodes: usize,
    pub edges: usize,
    /// Edges scored in more than one window.
    pub averaged_edges: usize,
    pub total_constraints: usize,
    pub violated_constraints: usize,
    /// Satisfied fraction of flow constraints of the thresholded averaged
    /// scores, before rounding.
    pub constraint_satisfaction: f64,
    pub violated_subgraph_edges: usize,
    pub rounding: RoundingMethod,
    pub active_edges: usize,
    pub trajectories: usize,
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    pub trajectories: Vec<Trajectory>,
    pub diagnostics: Diagnostics,
    /// Union graph over all windows; node `i` is kept detection `i` with
    /// frames in sampled units.
    pub graph: TrackingGraph,
    /// Averaged score of every union-graph edge.
    pub scores: Vec<f64>,
}

/// Tracks with a trained model, windowing as configured.
pub fn track_sequence(
    detections: &[Detection],
    native_fps: f64,
    params: &ModelParams,
    model: &ModelConfig,
    config: &PipelineConfig,
) -> Result<SequenceResult> {
    track_with_scorer(detections, native_fps, config, false, |g, fps| {
        predict_scores(g, params, model, fps)
    })
}

/// Tracks with a trained model on one graph spanning the whole sequence.
pub fn track_single_graph(
    detections: &[Detection],
    native_fps: f64,
    params: &ModelParams,
    model: &ModelConfig,
    config: &PipelineConfig,
) -> Result<SequenceResult> {
    track_with_scorer(detections, native_fps, config, true, |g, fps| {
        predict_scores(g, params, model, fps)
    })
}

/// The pipeline with an arbitrary edge scorer, called once per window with
/// the window graph and its frame rate.
pub fn track_with_scorer<F>(
    detections: &[Detection],
    native_fps: f64,
    config: &PipelineConfig,
    single_graph: bool,
    mut scorer: F,
) -> Result<SequenceResult>
where
    F: FnMut(&TrackingGraph, f64) -> Result<Vec<f64>>,
{
    config.validate()?;
    if !(native_fps > 0.0) {
        return Err(Error::InvalidParameter("native fps must be positive".into()));
    }
    if let Some(d) = detections.iter().find(|d| !d.bbox.is_valid()) {
        return Err(Error::InvalidParameter(format!(
            "detection {} has an invalid box",
            d.id
        )));
    }
    let mut diag = Diagnostics {
        input_detections: detections.len(),
        rounding: config.rounding,
        ..Diagnostics::default()
    };

    let stride = frame_stride(native_fps, config.target_fps());
    diag.frame_stride = stride;
    let kept = prefilter(detections, config.conf_min, config.nms_iou);
    diag.kept_detections = kept.len();
    let first = kept.iter().map(|&i| detections[i].frame).min().unwrap_or(0);
    // Nodes: kept detections on sampled frames, frames renumbered; node ids
    // are input positions.
    let nodes: Vec<Detection> = kept
        .iter()
        .filter(|&&i| (detections[i].frame - first).is_multiple_of(stride))
        .map(|&i| {
            let mut d = detections[i].clone();
            d.id = i;
            d.frame = (d.frame - first) / stride;
            d
        })
        .collect();
    if nodes.is_empty() {
        return Ok(SequenceResult {
            trajectories: Vec::new(),
            diagnostics: diag,
            graph: TrackingGraph::from_edges(Vec::new(), std::iter::empty())?,
            scores: Vec::new(),
        });
    }
    let num_frames = nodes.iter().map(|d| d.frame).max().expect("nonempty") + 1;
    diag.sampled_frames = num_frames;
    let fps = native_fps / stride as f64;
    let ranges = if single_graph {
        vec![0..num_frames]
    } else {
        window_ranges(num_frames, config.window_frames, config.overlap_frames)
    };
    diag.windows = ranges.len();

    // Sum and count of window scores per node pair.
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for range in &ranges {
        let members: Vec<usize> = (0..nodes.len()).filter(|&i| range.contains(&nodes[i].frame)).collect();
        if members.is_empty() {
            continue;
        }
        let window_nodes: Vec<Detection> = members.iter().map(|&i| nodes[i].clone()).collect();
        let graph = build_graph(&window_nodes, config.max_gap(), config.k)?;
        if graph.num_edges() == 0 {
            continue;
        }
        let scores = scorer(&graph, fps)?;
        if scores.len() != graph.num_edges() {
            return Err(Error::IndexMismatch(format!(
                "scorer returned {} scores for {} edges",
                scores.len(),
                graph.num_edges()
            )));
        }
        for (e, s) in graph.edges().iter().zip(scores) {
            let entry = acc.entry((members[e.src], members[e.dst])).or_insert((0.0, 0));
            entry.0 += s;
            entry.1 += 1;
        }
    }
    diag.averaged_edges = acc.values().filter(|(_, c)| *c > 1).count();

    let graph = TrackingGraph::from_edges(nodes, acc.keys().copied())?;
    // `acc` iterates in (src, dst) order, which is the graph's edge order.
    let scores: Vec<f64> = acc
        .values()
        .map(|&(sum, count)| (sum / count as f64).clamp(0.0, 1.0))
        .collect();
    diag.nodes = graph.num_nodes();
    diag.edges = graph.num_edges();

    let (_, report) = threshold(&graph, &scores, config.threshold)?;
    diag.total_constraints = report.total_constraints;
    diag.violated_constraints = report.violated;
    diag.constraint_satisfaction = report.satisfaction_ratio;
    diag.violated_subgraph_edges = violated_subgraph(&graph, &scores, 0.5)?.parent_edges.len();

    let solution = round(&graph, &scores, config.rounding)?;
    diag.active_edges = solution.labels.num_active();
    let chains = extract_chains(&graph, &solution.labels)?;
    let raw: Vec<Trajectory> = chains
        .iter()
        .map(|chain| {
            let boxes = chain
                .iter()
                .map(|&n| {
                    let i = graph.nodes()[n].id;
                    TrackBox {
                        frame: detections[i].frame,
                        bbox: detections[i].bbox,
                        detection: Some(i),
                    }
                })
                .collect();
            Trajectory::new(0, boxes)
        })
        .collect();
    let trajectories = postprocess(raw, config);
    diag.trajectories = trajectories.len();
    Ok(SequenceResult {
        trajectories,
        diagnostics: diag,
        graph,
        scores,
    })
}

/// Inserts linearly interpolated boxes at every missing frame between
/// consecutive boxes.
pub fn interpolate_trajectory(traj: &Trajectory) -> Trajectory {
    let mut boxes = Vec::with_capacity(traj.len());
    for (i, b) in traj.boxes.iter().enumerate() {
        if let Some(next) = traj.boxes.get(i + 1) {
            boxes.push(*b);
            let gap = next.frame - b.frame;
            for step in 1..gap {
                let t = step as f64 / gap as f64;
                let lerp = |a: f64, c: f64| a + t * (c - a);
                let (p, q) = (b.bbox, next.bbox);
                boxes.push(TrackBox {
                    frame: b.frame + step,
                    bbox: crate::graph::BBox::new(lerp(p.x, q.x), lerp(p.y, q.y), lerp(p.w, q.w), lerp(p.h, q.h)),
                    detection: None,
                });
            }
        } else {
            boxes.push(*b);
        }
    }
    Trajectory { id: traj.id, boxes }
}

/// Drops single-detection trajectories and interpolates gaps as configured,
/// then numbers trajectories from 1 in order of first appearance (ties by
/// first detection index).
pub fn postprocess(trajectories: Vec<Trajectory>, config: &PipelineConfig) -> Vec<Trajectory> {
    let mut out: Vec<Trajectory> = trajectories
        .into_iter()
        .filter(|t| !t.is_empty() && !(config.drop_singletons && t.len() == 1))
        .map(|t| {
            if config.interpolate {
                interpolate_trajectory(&t)
            } else {
                t
            }
        })
        .collect();
    out.sort_by_key(|t| (t.first_frame(), t.boxes[0].detection));
    for (i, t) in out.iter_mut().enumerate() {
        t.id = i as u32 + 1;
    }
    out
}
