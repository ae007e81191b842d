//! Training sequences, clip sampling and augmentation.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{build_graph, ground_truth_labels, BBox, Detection, EdgeLabels, TrackingGraph};
use crate::io::SyntheticSequence;

/// A labeled sequence of detections.
#[derive(Clone, Debug)]
pub struct TrainingSequence {
    pub detections: Vec<Detection>,
    pub n_frames: usize,
    /// Native frame rate.
    pub fps: f64,
    pub moving_camera: bool,
}

impl From<SyntheticSequence> for TrainingSequence {
    fn from(s: SyntheticSequence) -> Self {
        Self {
            detections: s.detections,
            n_frames: s.n_frames,
            fps: s.fps,
            moving_camera: false,
        }
    }
}

/// How clips are cut out of a sequence and connected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipParams {
    pub clip_frames: usize,
    pub target_fps: f64,
    pub max_frame_gap: usize,
    pub k: usize,
}

/// A graph built over one clip, with its ground-truth labels.
#[derive(Clone, Debug)]
pub struct ClipGraph {
    pub graph: TrackingGraph,
    pub labels: EdgeLabels,
    /// Frame rate of the clip's (subsampled) frame indices.
    pub fps: f64,
}

impl ClipGraph {
    pub fn from_detections(detections: Vec<Detection>, fps: f64, params: &ClipParams) -> Result<Self> {
        let graph = build_graph(&detections, params.max_frame_gap, params.k)?;
        let labels = ground_truth_labels(&graph);
        Ok(Self { graph, labels, fps })
    }
}

/// Native frames between two sampled frames.
pub fn frame_stride(native_fps: f64, target_fps: f64) -> usize {
    ((native_fps / target_fps).round() as usize).max(1)
}

/// Native frames covered by a clip of `clip_frames` sampled frames.
pub fn clip_span(clip_frames: usize, stride: usize) -> usize {
    (clip_frames.max(1) - 1) * stride + 1
}

/// Detections on the sampled frames `start, start + stride, …` within
/// `start..start + span`, with frames renumbered to sampled-frame indices.
pub fn subsample(detections: &[Detection], start: usize, span: usize, stride: usize) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.frame >= start && d.frame < start + span && (d.frame - start).is_multiple_of(stride))
        .map(|d| {
            let mut d = d.clone();
            d.frame = (d.frame - start) / stride;
            d
        })
        .collect()
}

/// Cuts a clip with a uniformly drawn start inside `frames` and builds its
/// labeled graph. Returns `Ok(None)` if the clip holds no detections.
pub fn sample_clip<R: Rng + ?Sized>(
    seq: &TrainingSequence,
    params: &ClipParams,
    frames: Range<usize>,
    rng: &mut R,
) -> Result<Option<ClipGraph>> {
    let stride = frame_stride(seq.fps, params.target_fps);
    let span = clip_span(params.clip_frames, stride);
    let available = frames.end.saturating_sub(frames.start);
    if available < span {
        return Err(Error::SequenceTooShort {
            needed: span,
            available,
        });
    }
    let start = rng.random_range(frames.start..=frames.end - span);
    let dets = subsample(&seq.detections, start, span, stride);
    if dets.is_empty() {
        return Ok(None);
    }
    let fps = seq.fps / stride as f64;
    ClipGraph::from_detections(dets, fps, params).map(Some)
}

/// Drops each node with probability `drop_prob`, perturbs surviving boxes by
/// Gaussian noise with standard deviation `jitter × size`, and rebuilds the
/// graph and labels. Returns `Ok(None)` if every node was dropped.
pub fn augment<R: Rng + ?Sized>(
    clip: &ClipGraph,
    rng: &mut R,
    drop_prob: f64,
    jitter: f64,
    params: &ClipParams,
) -> Result<Option<ClipGraph>> {
    if !(0.0..=1.0).contains(&drop_prob) || jitter < 0.0 {
        return Err(Error::InvalidParameter(
            "drop_prob must lie in [0, 1] and jitter be nonnegative".into(),
        ));
    }
    if drop_prob == 0.0 && jitter == 0.0 {
        return Ok(Some(clip.clone()));
    }
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut kept = Vec::with_capacity(clip.graph.num_nodes());
    for det in clip.graph.nodes() {
        if drop_prob > 0.0 && rng.random::<f64>() < drop_prob {
            continue;
        }
        let mut d = det.clone();
        if jitter > 0.0 {
            let b = d.bbox;
            let mut n = || unit.sample(rng) * jitter;
            let (dx, dy, dw, dh) = (n() * b.w, n() * b.h, n() * b.w, n() * b.h);
            d.bbox = BBox::new(
                b.x + dx,
                b.y + dy,
                (b.w + dw).max(0.25 * b.w),
                (b.h + dh).max(0.25 * b.h),
            );
        }
        kept.push(d);
    }
    if kept.is_empty() {
        return Ok(None);
    }
    ClipGraph::from_detections(kept, clip.fps, params).map(Some)
}

/// Non-overlapping clips tiling `frames`; a shorter tail becomes its own clip.
pub fn tile_clips(seq: &TrainingSequence, params: &ClipParams, frames: Range<usize>) -> Result<Vec<ClipGraph>> {
    let stride = frame_stride(seq.fps, params.target_fps);
    let span = clip_span(params.clip_frames, stride);
    let fps = seq.fps / stride as f64;
    let mut out = Vec::new();
    let mut start = frames.start;
    while start < frames.end {
        let len = span.min(frames.end - start);
        let dets = subsample(&seq.detections, start, len, stride);
        if !dets.is_empty() {
            out.push(ClipGraph::from_detections(dets, fps, params)?);
        }
        start += span;
    }
    Ok(out)
}
