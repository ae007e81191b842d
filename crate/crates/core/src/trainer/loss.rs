use log::warn;

use crate::error::{Error, Result};
use crate::graph::EdgeLabels;
use crate::nn::Matrix;

/// Scores are clamped to `[EPS, 1 − EPS]` inside the logarithms.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// ∂loss/∂score for every supervised step, each `|E| × 1`.
    pub seeds: Vec<Matrix>,
}

/// Weighted binary cross-entropy summed over the supervised steps and
/// divided by the number of edges:
///
/// `(1/|E|) Σ_l Σ_e −[w·y·log ŷ + (1 − y)·log(1 − ŷ)]`
pub fn bce_loss(step_scores: &[&[f64]], labels: &EdgeLabels, positive_weight: f64) -> Result<LossOutput> {
    if !(positive_weight > 0.0) {
        return Err(Error::InvalidParameter("positive weight must be positive".into()));
    }
    let n = labels.len();
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(step_scores.len());
    for scores in step_scores {
        if scores.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: scores.len(),
            });
        }
        let mut seed = Vec::with_capacity(n);
        for (&s, &y) in scores.iter().zip(&labels.values) {
            let clamped = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
            let inside = clamped == s;
            if y {
                loss -= positive_weight * clamped.ln();
                seed.push(if inside { -positive_weight / s } else { 0.0 });
            } else {
                loss -= (1.0 - clamped).ln();
                seed.push(if inside { 1.0 / (1.0 - s) } else { 0.0 });
            }
        }
        seeds.push(Matrix::from_vec(n, 1, seed));
    }
    if n > 0 {
        let scale = 1.0 / n as f64;
        loss *= scale;
        for s in &mut seeds {
            s.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    Ok(LossOutput { loss, seeds })
}

/// Ratio of negative to positive labels; 1 (with a warning) when either
/// class is absent.
pub fn positive_weight<'a>(labels: impl IntoIterator<Item = &'a EdgeLabels>) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels {
        let p = l.num_active();
        pos += p;
        neg += l.len() - p;
    }
    if pos == 0 || neg == 0 {
        warn!("batch has {pos} positive and {neg} negative edges; using positive weight 1");
        return 1.0;
    }
    neg as f64 / pos as f64
}
