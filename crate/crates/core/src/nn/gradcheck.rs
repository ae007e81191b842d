use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{ModelParams, ParamCoord};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Floor on the denominator of the relative error.
    pub floor: f64,
    /// Largest relative error that still passes.
    pub tolerance: f64,
    /// Check a random subset of this many coordinates instead of all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamCoord>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients against central finite differences.
///
/// `objective(params, with_gradient)` returns the loss and, when
/// `with_gradient` is set, accumulates its gradient into the parameter
/// gradient buffers. The relative error of a coordinate is
/// `|analytic − numeric| / max(|numeric|, floor)`.
pub fn grad_check<F>(params: &mut ModelParams, mut objective: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut ModelParams, bool) -> Result<f64>,
{
    params.zero_grad();
    objective(params, true)?;
    let mut coords = params.coordinates();
    let analytic: Vec<f64> = coords.iter().map(|&c| params.grad(c)).collect();
    let mut pairs: Vec<(ParamCoord, f64)> = coords.drain(..).zip(analytic).collect();
    if let Some(n) = opts.max_coords {
        if n < pairs.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, pairs.len(), n).into_vec();
            picked.sort_unstable();
            pairs = picked.into_iter().map(|i| pairs[i]).collect();
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: pairs.len(),
        passed: true,
    };
    for (c, a) in pairs {
        let original = params.value(c);
        params.set_value(c, original + opts.step);
        let plus = objective(params, false)?;
        params.set_value(c, original - opts.step);
        let minus = objective(params, false)?;
        params.set_value(c, original);
        let numeric = (plus - minus) / (2.0 * opts.step);
        let rel = (a - numeric).abs() / numeric.abs().max(opts.floor);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some(c);
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    params.zero_grad();
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}
