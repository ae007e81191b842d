//! Ablation experiments on synthetic data: architecture, number of message
//! passing steps, and edge-feature subsets.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::encoders::FeatureSet;
use crate::error::{Error, Result};
use crate::graph::ground_truth_labels;
use crate::io::{generate_synthetic, SyntheticConfig, SyntheticSequence};
use crate::metrics::{evaluate, EvalResult, DEFAULT_IOU};
use crate::mpn::{ModelConfig, UpdateMode};
use crate::nn::ModelParams;
use crate::pipeline::{track_sequence, PipelineConfig, SequenceResult};
use crate::rng::derive_seed;
use crate::trainer::{train, TrainConfig, TrainingSequence};

/// Synthetic data, training and tracking settings shared by all variants of
/// an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Benchmark {
    /// Template for every generated sequence; its seed is replaced.
    pub data: SyntheticConfig,
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            data: SyntheticConfig {
                n_tracks: 20,
                n_frames: 300,
                miss_prob: 0.15,
                appearance_sigma: 0.3,
                ..SyntheticConfig::default()
            },
            train_sequences: 2,
            eval_sequences: 1,
            train: TrainConfig {
                iterations: 3000,
                batch_graphs: 1,
                clip_frames: 10,
                max_frame_gap: Some(5),
                k: 12,
                log_interval: 500,
                model: ModelConfig {
                    steps: 6,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            },
            pipeline: PipelineConfig {
                window_frames: 10,
                overlap_frames: 9,
                max_frame_gap: Some(5),
                k: 12,
                ..PipelineConfig::default()
            },
        }
    }
}

const TRAIN_DATA_STREAM: u64 = 100;
const EVAL_DATA_STREAM: u64 = 200;

impl Benchmark {
    fn sequences(&self, seed: u64, stream: u64, count: usize) -> Result<Vec<SyntheticSequence>> {
        (0..count)
            .map(|i| {
                generate_synthetic(&SyntheticConfig {
                    seed: derive_seed(seed, stream + i as u64),
                    ..self.data.clone()
                })
            })
            .collect()
    }

    /// Training sequences of run `seed`.
    pub fn train_data(&self, seed: u64) -> Result<Vec<SyntheticSequence>> {
        self.sequences(seed, TRAIN_DATA_STREAM, self.train_sequences)
    }

    /// Held-out sequences of run `seed`, disjoint from the training data.
    pub fn eval_data(&self, seed: u64) -> Result<Vec<SyntheticSequence>> {
        self.sequences(seed, EVAL_DATA_STREAM, self.eval_sequences)
    }

    pub fn train_config(&self, seed: u64, model: ModelConfig) -> TrainConfig {
        TrainConfig {
            seed,
            model,
            ..self.train.clone()
        }
    }
}

/// Held-out quality of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub metrics: EvalResult,
    /// Pooled per constraint over all held-out sequences.
    pub constraint_satisfaction: f64,
    /// Thresholded averaged scores against ground-truth labels of the
    /// sequence graphs.
    pub edge_accuracy: f64,
}

/// Tracks every sequence and pools the results.
pub fn evaluate_model(
    params: &ModelParams,
    model: &ModelConfig,
    pipeline: &PipelineConfig,
    sequences: &[SyntheticSequence],
) -> Result<(Evaluation, Vec<SequenceResult>)> {
    let mut results = Vec::new();
    let mut per_seq = Vec::new();
    let (mut violated, mut constraints, mut correct, mut edges) = (0, 0, 0, 0);
    for seq in sequences {
        let out = track_sequence(&seq.detections, seq.fps, params, model, pipeline)?;
        per_seq.push(evaluate(&seq.ground_truth, &out.trajectories, DEFAULT_IOU)?);
        violated += out.diagnostics.violated_constraints;
        constraints += out.diagnostics.total_constraints;
        let labels = ground_truth_labels(&out.graph);
        correct += out
            .scores
            .iter()
            .zip(&labels.values)
            .filter(|(&s, &y)| (s >= 0.5) == y)
            .count();
        edges += out.scores.len();
        results.push(out);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((
        Evaluation {
            metrics: EvalResult::aggregate(&per_seq)?,
            constraint_satisfaction: 1.0 - ratio(violated, constraints),
            edge_accuracy: ratio(correct, edges),
        },
        results,
    ))
}

/// One trained and evaluated variant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub variant: String,
    pub seed: u64,
    pub evaluation: Evaluation,
    pub train_ms: u64,
}

/// Trains `model` on the run's training data and evaluates it on the run's
/// held-out data.
pub fn run_variant(bench: &Benchmark, variant: &str, seed: u64, model: ModelConfig) -> Result<ExperimentRow> {
    let train_data: Vec<TrainingSequence> = bench.train_data(seed)?.into_iter().map(Into::into).collect();
    let eval_data = bench.eval_data(seed)?;
    let cfg = bench.train_config(seed, model);
    let start = Instant::now();
    let outcome = train(&train_data, &cfg)?;
    let train_ms = start.elapsed().as_millis() as u64;
    let (evaluation, _) = evaluate_model(&outcome.params, &cfg.model, &bench.pipeline, &eval_data)?;
    info!(
        "{variant} seed {seed}: MOTA {:.3} IDF1 {:.3} IDSW {} Constr {:.4} acc {:.4}",
        evaluation.metrics.mota,
        evaluation.metrics.idf1,
        evaluation.metrics.id_switches,
        evaluation.constraint_satisfaction,
        evaluation.edge_accuracy
    );
    Ok(ExperimentRow {
        variant: variant.to_string(),
        seed,
        evaluation,
        train_ms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Vanilla against time-aware node updates.
    Arch,
    /// Number of message passing steps.
    Steps,
    /// Edge-feature subsets.
    Features,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch" => Ok(Self::Arch),
            "steps" => Ok(Self::Steps),
            "features" => Ok(Self::Features),
            _ => Err(Error::InvalidParameter(format!("unknown ablation `{s}`"))),
        }
    }
}

pub const STEP_SWEEP: [usize; 7] = [0, 1, 2, 4, 6, 8, 12];

/// Named model variants of an ablation, derived from the benchmark's model.
pub fn variants(bench: &Benchmark, ablation: Ablation, steps: &[usize]) -> Vec<(String, ModelConfig)> {
    let base = bench.train.model.clone();
    match ablation {
        Ablation::Arch => [UpdateMode::Vanilla, UpdateMode::TimeAware]
            .into_iter()
            .map(|mode| (mode.to_string(), ModelConfig { mode, ..base.clone() }))
            .collect(),
        Ablation::Steps => steps
            .iter()
            .map(|&s| {
                (
                    format!("L={s}"),
                    ModelConfig {
                        steps: s,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        Ablation::Features => FeatureSet::ALL
            .into_iter()
            .map(|features| {
                (
                    features.to_string(),
                    ModelConfig {
                        features,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

/// Runs every variant for every seed.
pub fn run_ablation(
    bench: &Benchmark,
    ablation: Ablation,
    steps: &[usize],
    seeds: &[u64],
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for (name, model) in variants(bench, ablation, steps) {
        for &seed in seeds {
            rows.push(run_variant(bench, &name, seed, model.clone())?);
        }
    }
    Ok(rows)
}

pub const ROWS_HEADER: &str = "variant,seed,MOTA,IDF1,MT,ML,FP,FN,IDSW,Constr,edge_accuracy,train_ms";

/// Ratios as percentages with three decimals.
pub fn format_rows(rows: &[ExperimentRow]) -> String {
    let mut s = String::from(ROWS_HEADER);
    s.push('\n');
    for r in rows {
        let (e, m) = (&r.evaluation, &r.evaluation.metrics);
        let _ = writeln!(
            s,
            "{},{},{:.3},{:.3},{},{},{},{},{},{:.3},{:.3},{}",
            r.variant,
            r.seed,
            100.0 * m.mota,
            100.0 * m.idf1,
            m.mostly_tracked,
            m.mostly_lost,
            m.false_positives,
            m.false_negatives,
            m.id_switches,
            100.0 * e.constraint_satisfaction,
            100.0 * e.edge_accuracy,
            r.train_ms
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Benchmark {
        let mut b = Benchmark::default();
        b.data.n_tracks = 3;
        b.data.n_frames = 80;
        b.data.min_track_frames = 40;
        b.data.appearance_dim = 8;
        b.train.iterations = 4;
        b.train.clip_frames = 5;
        b.train.model.appearance_dim = 8;
        b.train.model.node_encoder_hidden = 8;
        b.train.model.steps = 2;
        b.pipeline.window_frames = 5;
        b.pipeline.overlap_frames = 4;
        b
    }

    #[test]
    fn train_and_eval_data_differ() {
        let b = tiny();
        let train = b.train_data(1).unwrap();
        let eval = b.eval_data(1).unwrap();
        assert_eq!(train.len(), 2);
        assert_ne!(train[0].detections[0].bbox, eval[0].detections[0].bbox);
    }

    #[test]
    fn variant_names() {
        let b = tiny();
        let names: Vec<String> = variants(&b, Ablation::Arch, &[]).into_iter().map(|v| v.0).collect();
        assert_eq!(names, vec!["vanilla", "time_aware"]);
        let names: Vec<String> = variants(&b, Ablation::Steps, &[0, 2])
            .into_iter()
            .map(|v| v.0)
            .collect();
        assert_eq!(names, vec!["L=0", "L=2"]);
        assert_eq!(variants(&b, Ablation::Features, &[]).len(), 3);
    }

    #[test]
    fn ablation_rows_are_reproducible() {
        let b = tiny();
        let a = run_ablation(&b, Ablation::Arch, &[], &[5]).unwrap();
        let again = run_ablation(&b, Ablation::Arch, &[], &[5]).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&again) {
            assert_eq!(x.evaluation, y.evaluation);
        }
        let csv = format_rows(&a);
        assert!(csv.starts_with(ROWS_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}
