//! Shared kernel hyperparameters chosen by maximizing the summed variational
//! bound over all sample datasets.

use super::kernel::{Kernel, KernelParams};
use super::sparse::{GprFit, NoiseModel, PriorMean};
use crate::error::{Error, Result};
use crate::optim::{bounded_maximize, coordinate_search, SearchOptions};
use rand::Rng;
use rayon::prelude::*;

/// One dataset entering the shared objective.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub pseudo_inputs: Vec<f64>,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    /// `Λ(Zₙ)` per training input.
    pub noise: Vec<f64>,
    pub prior_mean: PriorMean,
}

impl TrainingSet {
    pub fn objective(&self, kernel: Kernel) -> f64 {
        GprFit::new(
            kernel,
            self.pseudo_inputs.clone(),
            self.inputs.clone(),
            self.outputs.clone(),
            self.prior_mean.clone(),
            self.noise.clone(),
            NoiseModel::Constant(1.0),
        )
        .map(|f| f.objective())
        .unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub params: KernelParams,
    pub objective: f64,
    pub initial_objective: f64,
    /// Best summed objective after each search pass.
    pub history: Vec<f64>,
}

/// Summed objective; the per-set terms are computed in parallel and added in
/// order so the result does not depend on scheduling.
pub fn total_objective(sets: &[TrainingSet], kernel: Kernel) -> f64 {
    let parts: Vec<f64> = sets.par_iter().map(|s| s.objective(kernel)).collect();
    let total: f64 = parts.iter().sum();
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Log-space bounds: twelve e-folds either side of the starting point.
const LOG_RANGE: f64 = 12.0;

/// Compass search over `(ln variance, ln lengthscale)` starting at `init`.
/// The returned objective is never below the objective at `init`.
pub fn tune_hyperparameters(sets: &[TrainingSet], init: Kernel) -> Result<TuneResult> {
    if sets.is_empty() {
        return Err(Error::invalid("hyperparameter tuning needs at least one dataset"));
    }
    init.params.validate()?;
    let initial = total_objective(sets, init);
    if !initial.is_finite() {
        return Err(Error::OptimFailed(format!(
            "objective is {initial} at the initial hyperparameters"
        )));
    }
    let x0 = [init.params.variance.ln(), init.params.lengthscale.ln()];
    let lower = [x0[0] - LOG_RANGE, x0[1] - LOG_RANGE];
    let upper = [x0[0] + LOG_RANGE, x0[1] + LOG_RANGE];
    let eval = |x: &[f64]| match KernelParams::new(x[0].exp(), x[1].exp()) {
        Ok(p) => total_objective(sets, init.with_params(p)),
        Err(_) => f64::NEG_INFINITY,
    };
    let r = coordinate_search(eval, &x0, &lower, &upper, SearchOptions::default());
    let params = KernelParams::new(r.x[0].exp(), r.x[1].exp())?;
    log::debug!(
        "kernel tuned: variance {:.4}, lengthscale {:.4}, objective {:.4} -> {:.4} in {} evaluations",
        params.variance,
        params.lengthscale,
        initial,
        r.value,
        r.evaluations
    );
    Ok(TuneResult {
        params,
        objective: r.value,
        initial_objective: initial,
        history: r.history,
    })
}

/// Homoscedastic variant: alternates the shared kernel search with a 1-D
/// search for each dataset's constant noise level. Every accepted move
/// raises the summed objective. Returns the tuned kernel and noise levels.
pub fn tune_homoscedastic(
    sets: &[TrainingSet],
    init: Kernel,
    init_noise: &[f64],
    rounds: usize,
) -> Result<(TuneResult, Vec<f64>)> {
    if init_noise.len() != sets.len() {
        return Err(Error::invalid("one noise level per dataset is required"));
    }
    let mut sets = sets.to_vec();
    let mut noise = init_noise.to_vec();
    for (s, &l) in sets.iter_mut().zip(&noise) {
        s.noise = vec![l; s.inputs.len()];
    }
    let mut result = tune_hyperparameters(&sets, init)?;
    let initial = result.initial_objective;
    let mut history = result.history.clone();
    for _ in 0..rounds {
        let kernel = init.with_params(result.params);
        let before = result.objective;
        for (s, l) in sets.iter_mut().zip(noise.iter_mut()) {
            let current = s.objective(kernel);
            let base = l.ln();
            let n = s.inputs.len();
            let mut trial = s.clone();
            let (x, v) = bounded_maximize(
                |t| {
                    trial.noise = vec![t.exp(); n];
                    trial.objective(kernel)
                },
                base - LOG_RANGE,
                base + LOG_RANGE,
                25,
                1e-6,
            );
            if v > current {
                *l = x.exp();
                s.noise = vec![*l; n];
            }
        }
        let next = tune_hyperparameters(&sets, kernel)?;
        history.extend(next.history.iter().copied());
        result = next;
        if result.objective - before <= 1e-9 * before.abs().max(1.0) {
            break;
        }
    }
    result.initial_objective = initial;
    result.history = history;
    Ok((result, noise))
}

/// Stratified pseudo-inputs: the distinct training inputs split into
/// `count` runs of consecutive values, one uniform pick from each run.
/// Never more than the number of distinct inputs; all of them when
/// `count` reaches it.
pub fn stratified_pseudo_inputs<R: Rng + ?Sized>(inputs: &[f64], count: usize, rng: &mut R) -> Vec<f64> {
    let mut distinct = inputs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let n = distinct.len();
    let m = count.min(n);
    (0..m)
        .map(|i| {
            let (a, b) = (i * n / m, (i + 1) * n / m);
            distinct[rng.random_range(a..b)]
        })
        .collect()
}

/// Default pseudo-input count: `min(64, N)`.
pub fn default_pseudo_count(n: usize) -> usize {
    n.min(64)
}
