//! Supervised training of the message passing model.

mod data;
mod loss;

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use data::{
    augment, clip_span, frame_stride, sample_clip, subsample, tile_clips, ClipGraph, ClipParams, TrainingSequence,
};
pub use loss::{bce_loss, positive_weight, LossOutput, SCORE_EPS};

use crate::encoders::GraphFeatures;
use crate::error::{Error, Result};
use crate::graph::{check_flow_constraints, EdgeLabels, TrackingGraph};
use crate::mpn::{classify_edges, predict_scores, propagate, GraphIndex, ModelConfig};
use crate::nn::{adam_step, AdamConfig, ModelParams, Tape};
use crate::rng::{derive_seed, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decoupled_weight_decay: bool,
    /// Clips per optimizer step.
    pub batch_graphs: usize,
    /// Sampled frames per clip.
    pub clip_frames: usize,
    pub fps_static: f64,
    pub fps_moving: f64,
    /// Longest edge in sampled frames; defaults to `clip_frames`.
    pub max_frame_gap: Option<usize>,
    /// Reciprocal nearest-neighbor count used for graph pruning.
    pub k: usize,
    /// First message passing step whose predictions are supervised; defaults
    /// to `⌈L/2⌉ + 1`.
    pub first_supervised_step: Option<usize>,
    /// Fixed weight of positive edges; defaults to the per-batch
    /// negative/positive ratio.
    pub positive_weight: Option<f64>,
    pub drop_prob: f64,
    /// Box noise as a fraction of box size.
    pub jitter: f64,
    /// Trailing fraction of every sequence reserved for monitoring.
    pub heldout_fraction: f64,
    pub log_interval: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 15000,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decoupled_weight_decay: false,
            batch_graphs: 8,
            clip_frames: 15,
            fps_static: 6.0,
            fps_moving: 9.0,
            max_frame_gap: None,
            k: 50,
            first_supervised_step: None,
            positive_weight: None,
            drop_prob: 0.1,
            jitter: 0.05,
            heldout_fraction: 0.2,
            log_interval: 100,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            decoupled_weight_decay: self.decoupled_weight_decay,
        }
    }

    pub fn first_step(&self) -> usize {
        self.first_supervised_step
            .unwrap_or_else(|| self.model.default_first_supervised_step())
    }

    pub fn clip_params(&self, moving_camera: bool) -> ClipParams {
        ClipParams {
            clip_frames: self.clip_frames,
            target_fps: if moving_camera {
                self.fps_moving
            } else {
                self.fps_static
            },
            max_frame_gap: self.max_frame_gap.unwrap_or(self.clip_frames),
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.model.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let l0 = self.first_step();
        if self.model.steps == 0 {
            if l0 != 0 {
                return bad("with zero message passing steps only step 0 can be supervised");
            }
        } else if l0 == 0 || l0 > self.model.steps {
            return bad("first supervised step must lie in 1..=steps");
        }
        if self.batch_graphs == 0 || self.clip_frames < 2 || self.k == 0 {
            return bad("batch_graphs and k must be positive and clip_frames at least 2");
        }
        if self.max_frame_gap == Some(0) {
            return bad("max_frame_gap must be positive");
        }
        if !(self.fps_static > 0.0 && self.fps_moving > 0.0) {
            return bad("target frame rates must be positive");
        }
        if !(0.0..1.0).contains(&self.drop_prob) || self.jitter < 0.0 {
            return bad("drop_prob must lie in [0, 1) and jitter be nonnegative");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must lie in [0, 1)");
        }
        if matches!(self.positive_weight, Some(w) if !(w > 0.0)) {
            return bad("positive_weight must be positive");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    /// Held-out edge accuracy at threshold 0.5.
    pub edge_accuracy: f64,
    /// Held-out fraction of satisfied flow constraints at threshold 0.5.
    pub constraint_satisfaction: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "iteration,loss,edge_accuracy,constraint_satisfaction,wall_ms";

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.loss, r.edge_accuracy, r.constraint_satisfaction, r.wall_ms
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    /// Iteration and parameters with the best held-out edge accuracy.
    pub best: Option<(usize, ModelParams)>,
}

/// Edge classification quality at threshold 0.5, pooled over clips.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeEval {
    pub edges: usize,
    pub accuracy: f64,
    pub constraint_satisfaction: f64,
}

pub fn evaluate_clips(params: &ModelParams, model: &ModelConfig, clips: &[ClipGraph]) -> Result<EdgeEval> {
    let (mut correct, mut edges, mut violated, mut constraints) = (0usize, 0usize, 0usize, 0usize);
    for clip in clips {
        let scores = predict_scores(&clip.graph, params, model, clip.fps)?;
        let predicted = EdgeLabels::new(scores.iter().map(|&s| s >= 0.5).collect());
        correct += predicted
            .values
            .iter()
            .zip(&clip.labels.values)
            .filter(|(a, b)| a == b)
            .count();
        edges += scores.len();
        let report = check_flow_constraints(&clip.graph, &predicted)?;
        violated += report.violated;
        constraints += report.total_constraints;
    }
    Ok(EdgeEval {
        edges,
        accuracy: if edges == 0 { 1.0 } else { correct as f64 / edges as f64 },
        constraint_satisfaction: if constraints == 0 {
            1.0
        } else {
            1.0 - violated as f64 / constraints as f64
        },
    })
}

/// Loss and gradient of one batch; gradients are accumulated into `params`.
pub fn batch_loss(
    params: &mut ModelParams,
    model: &ModelConfig,
    clips: &[ClipGraph],
    first_step: usize,
    weight: Option<f64>,
) -> Result<f64> {
    loss_with_gradient(params, model, clips, first_step, weight, true)
}

fn loss_with_gradient(
    params: &mut ModelParams,
    model: &ModelConfig,
    clips: &[ClipGraph],
    first_step: usize,
    weight: Option<f64>,
    with_gradient: bool,
) -> Result<f64> {
    let graphs: Vec<TrackingGraph> = clips.iter().map(|c| c.graph.clone()).collect();
    let union = TrackingGraph::disjoint_union(&graphs);
    let labels = EdgeLabels::new(clips.iter().flat_map(|c| c.labels.values.iter().copied()).collect());
    let inputs = clips
        .iter()
        .map(|c| GraphFeatures::new(&c.graph, model.appearance_dim, c.fps, model.features))
        .collect::<Result<Vec<_>>>()?;
    let inputs = GraphFeatures::concat(&inputs);
    let w = weight.unwrap_or_else(|| positive_weight(clips.iter().map(|c| &c.labels)));

    let mut tape = Tape::new();
    let index = GraphIndex::new(&union);
    let state = propagate(&mut tape, &index, params, model, &inputs)?;
    let outputs = classify_edges(&mut tape, params, &state, first_step, model.steps)?;
    let scores: Vec<&[f64]> = outputs.iter().map(|&o| tape.value(o).data()).collect();
    let LossOutput { loss, seeds } = bce_loss(&scores, &labels, w)?;
    if with_gradient {
        let seeds: Vec<_> = outputs.into_iter().zip(seeds).collect();
        tape.backward(params, &seeds)?;
    }
    Ok(loss)
}

const INIT_STREAM: u64 = 0;
const CLIP_STREAM: u64 = 1;
const MAX_RESAMPLES: usize = 100;

fn training_range(seq: &TrainingSequence, cfg: &TrainConfig) -> std::ops::Range<usize> {
    let cut = ((seq.n_frames as f64) * (1.0 - cfg.heldout_fraction)).floor() as usize;
    0..cut
}

/// Held-out clips tiling the trailing part of every sequence.
pub fn heldout_clips(dataset: &[TrainingSequence], cfg: &TrainConfig) -> Result<Vec<ClipGraph>> {
    let mut clips = Vec::new();
    for seq in dataset {
        let cut = training_range(seq, cfg).end;
        clips.extend(tile_clips(seq, &cfg.clip_params(seq.moving_camera), cut..seq.n_frames)?);
    }
    Ok(clips)
}

/// Draws one augmented training clip.
fn draw_clip<R: Rng>(dataset: &[TrainingSequence], cfg: &TrainConfig, rng: &mut R) -> Result<ClipGraph> {
    for _ in 0..MAX_RESAMPLES {
        let seq = &dataset[rng.random_range(0..dataset.len())];
        let params = cfg.clip_params(seq.moving_camera);
        let Some(clip) = sample_clip(seq, &params, training_range(seq, cfg), rng)? else {
            continue;
        };
        if let Some(aug) = augment(&clip, rng, cfg.drop_prob, cfg.jitter, &params)? {
            return Ok(aug);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no non-empty clip after {MAX_RESAMPLES} attempts"
    )))
}

/// The clips of training iteration `iteration`. Each clip has its own random
/// stream, so batches do not depend on how they are prepared.
pub fn training_batch(dataset: &[TrainingSequence], cfg: &TrainConfig, iteration: usize) -> Result<Vec<ClipGraph>> {
    let clip_seed = derive_seed(cfg.seed, CLIP_STREAM);
    (0..cfg.batch_graphs)
        .map(|b| {
            let mut rng = stream_rng(clip_seed, (iteration * cfg.batch_graphs + b) as u64);
            draw_clip(dataset, cfg, &mut rng)
        })
        .collect()
}

pub fn initial_params(cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.model.init_params(&mut stream_rng(cfg.seed, INIT_STREAM))
}

pub fn train(dataset: &[TrainingSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, |_| {})
}

/// Trains with `on_log` called for every log row as it is produced.
pub fn train_with<F>(dataset: &[TrainingSequence], cfg: &TrainConfig, mut on_log: F) -> Result<TrainOutcome>
where
    F: FnMut(&LogRow),
{
    cfg.validate()?;
    let mut params = initial_params(cfg)?;
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            params,
            log: Vec::new(),
            best: None,
        });
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let heldout = heldout_clips(dataset, cfg)?;
    let adam = cfg.adam();
    let first_step = cfg.first_step();
    let start = Instant::now();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for it in 0..cfg.iterations {
        let clips = training_batch(dataset, cfg, it)?;
        let loss = batch_loss(&mut params, &cfg.model, &clips, first_step, cfg.positive_weight)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        adam_step(&mut params, &adam)?;
        loss_sum += loss;
        loss_count += 1;

        let done = it + 1;
        if done % cfg.log_interval.max(1) == 0 || done == cfg.iterations {
            let eval = if heldout.is_empty() {
                evaluate_clips(&params, &cfg.model, &clips)?
            } else {
                evaluate_clips(&params, &cfg.model, &heldout)?
            };
            let row = LogRow {
                iteration: done,
                loss: loss_sum / loss_count as f64,
                edge_accuracy: eval.accuracy,
                constraint_satisfaction: eval.constraint_satisfaction,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            info!(
                "iter {:>6}  loss {:.5}  edge acc {:.4}  constr {:.4}",
                row.iteration, row.loss, row.edge_accuracy, row.constraint_satisfaction
            );
            on_log(&row);
            if best.as_ref().is_none_or(|b| eval.accuracy > b.1) {
                best = Some((done, eval.accuracy, params.clone()));
            }
            log.push(row);
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        best: best.map(|(it, _, p)| (it, p)),
    })
}

/// Six detections in three frames forming two tracks, with every pair of
/// consecutive-frame detections connected: 8 edges, 2 of each 4 active.
pub fn gradcheck_clip(appearance_dim: usize, seed: u64) -> Result<ClipGraph> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream_rng(seed, 0);
    let mut nodes = Vec::new();
    for frame in 0..3 {
        for track in 0..2u32 {
            let x = 100.0 + 300.0 * track as f64 + 7.0 * frame as f64 + rng.random_range(-3.0..3.0);
            let y = 200.0 + rng.random_range(-3.0..3.0);
            let h = 120.0 + rng.random_range(-10.0..10.0);
            let appearance = (0..appearance_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            nodes.push(
                crate::graph::Detection::new(nodes.len(), frame, crate::graph::BBox::new(x, y, 0.4 * h, h))
                    .with_track(track)
                    .with_appearance(appearance),
            );
        }
    }
    let pairs = (0..2).flat_map(|f| (0..2).flat_map(move |a| (0..2).map(move |b| (2 * f + a, 2 * (f + 1) + b))));
    let graph = TrackingGraph::from_edges(nodes, pairs)?;
    let labels = crate::graph::ground_truth_labels(&graph);
    Ok(ClipGraph {
        graph,
        labels,
        fps: 6.0,
    })
}

/// Compares back-propagated gradients of the full training loss (encoders,
/// message passing, classifier and weighted cross-entropy) with central
/// finite differences.
pub fn check_gradients(
    params: &mut ModelParams,
    model: &ModelConfig,
    clip: &ClipGraph,
    first_step: usize,
    positive_weight: f64,
    opts: &crate::nn::GradCheckOptions,
) -> Result<crate::nn::GradCheckReport> {
    let clips = std::slice::from_ref(clip);
    crate::nn::grad_check(
        params,
        |p, with_gradient| loss_with_gradient(p, model, clips, first_step, Some(positive_weight), with_gradient),
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_synthetic, SyntheticConfig};
    use crate::mpn::UpdateMode;

    fn tiny_dataset(seed: u64) -> Vec<TrainingSequence> {
        vec![generate_synthetic(&SyntheticConfig {
            n_tracks: 4,
            n_frames: 60,
            native_fps: 6.0,
            min_track_frames: 20,
            miss_prob: 0.1,
            appearance_dim: 8,
            appearance_sigma: 0.3,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .into()]
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_graphs: 1,
            clip_frames: 6,
            k: 6,
            log_interval: 5,
            learning_rate: 3e-3,
            model: ModelConfig {
                steps: 2,
                appearance_dim: 8,
                node_encoder_hidden: 16,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_initial_parameters() {
        let cfg = tiny_config(0);
        let out = train(&tiny_dataset(1), &cfg).unwrap();
        assert_eq!(out.params, initial_params(&cfg).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn fixed_seed_gives_bit_identical_parameters() {
        let cfg = tiny_config(6);
        let data = tiny_dataset(2);
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.log[1].iteration, 6);
    }

    #[test]
    fn overfits_a_single_clip() {
        let data = tiny_dataset(3);
        let cfg = tiny_config(0);
        let params = cfg.clip_params(false);
        let clip = tile_clips(&data[0], &params, 0..6).unwrap().remove(0);
        assert!(clip.labels.num_active() > 0);
        let mut p = initial_params(&cfg).unwrap();
        let adam = AdamConfig {
            learning_rate: 3e-3,
            ..cfg.adam()
        };
        for _ in 0..200 {
            batch_loss(&mut p, &cfg.model, std::slice::from_ref(&clip), cfg.first_step(), None).unwrap();
            adam_step(&mut p, &adam).unwrap();
        }
        let eval = evaluate_clips(&p, &cfg.model, &[clip]).unwrap();
        assert_eq!(eval.accuracy, 1.0);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let model = ModelConfig {
            steps: 2,
            appearance_dim: 4,
            node_encoder_hidden: 8,
            ..ModelConfig::default()
        };
        let clip = gradcheck_clip(4, 1).unwrap();
        assert_eq!((clip.graph.num_nodes(), clip.graph.num_edges()), (6, 8));
        assert_eq!(clip.labels.num_active(), 4);
        let mut params = model.init_params(&mut stream_rng(1, 0)).unwrap();
        let report = check_gradients(
            &mut params,
            &model,
            &clip,
            1,
            1.5,
            &crate::nn::GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "max relative error {}", report.max_rel_error);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(1);
        cfg.first_supervised_step = Some(3);
        assert!(cfg.validate().is_err());
        cfg.first_supervised_step = None;
        cfg.model.steps = 0;
        assert_eq!(cfg.first_step(), 0);
        assert!(cfg.validate().is_ok());
        cfg.model.steps = 12;
        assert_eq!(cfg.first_step(), 7);
        cfg.model.steps = 1;
        assert_eq!(cfg.first_step(), 1);
    }

    #[test]
    fn toml_config_fills_defaults() {
        let text = "iterations = 10\nseed = 4\n[model]\nmode = \"vanilla\"\nsteps = 3\nfeatures = \"time+pos\"\n";
        let cfg: TrainConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.model.mode, UpdateMode::Vanilla);
        assert_eq!(cfg.k, 50);
        assert!(toml::from_str::<TrainConfig>("iteratons = 3\n").is_err());
    }

    #[test]
    fn log_csv_has_documented_header() {
        let rows = vec![LogRow {
            iteration: 1,
            loss: 0.5,
            edge_accuracy: 0.75,
            constraint_satisfaction: 1.0,
            wall_ms: 3,
        }];
        assert_eq!(
            format_log(&rows),
            "iteration,loss,edge_accuracy,constraint_satisfaction,wall_ms\n1,0.5,0.75,1,3\n"
        );
    }
}
