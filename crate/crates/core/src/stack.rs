//! The outer loop: align every signal to the profile, flag outliers, and
//! rebuild the profile from the sampled alignments until it settles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{AlignmentSample, CalibrationCurve, ProxyDatum, Signal};
use crate::em::{run_em_all, EmOptions, SignalParams};
use crate::error::{Error, Result};
use crate::gpr::{
    combine_profile, default_pseudo_count, fit_heteroscedastic, profile_grid, stratified_pseudo_inputs,
    tune_homoscedastic, GprFit, Kernel, KernelParams, PriorMean, Profile, TrainingSet,
};
use crate::sampler::derive_seed;

/// Ratio of the outlier density to the regular density at standardized
/// residual `e`: `½(exp(3e − 9/2) + exp(−3e − 9/2))`.
pub fn outlier_density_ratio(e: f64) -> f64 {
    0.5 * ((3.0 * e - 4.5).exp() + (-3.0 * e - 4.5).exp())
}

/// Posterior outlier probability of a value whose standardized residual is `e`.
pub fn outlier_probability(e: f64, delta: f64) -> f64 {
    let g = delta * outlier_density_ratio(e);
    if g.is_infinite() {
        return 1.0;
    }
    g / (g + (1.0 - delta))
}

/// Posterior probability that `y` (in profile units) at age `z` is an
/// outlier, the alternative being an equal mixture of Gaussians centred
/// three profile sds either side of the profile mean.
pub fn outlier_posterior(y: f64, z: f64, profile: &Profile, delta: f64) -> f64 {
    let (m, v) = profile.eval_unchecked(z);
    outlier_probability((y - m) / v.sqrt(), delta)
}

/// Standardized values `(y − h)/σ` of the synchronizing data at each position.
pub fn standardized_values(signal: &Signal, params: &SignalParams) -> Vec<Vec<f64>> {
    let (h, s) = (params.emission.shift, params.emission.scale);
    signal
        .observations()
        .iter()
        .map(|data| {
            data.iter()
                .filter_map(|d| match *d {
                    ProxyDatum::D18O { value } => Some((value - h) / s),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

/// Draws outlier indicators for every sample and synchronizing datum;
/// returns `flags[l][n][k]` and records per-position flags in the samples.
pub fn classify_outliers<R: Rng + ?Sized>(
    bank: &mut [AlignmentSample],
    values: &[Vec<f64>],
    profile: &Profile,
    delta: f64,
    rng: &mut R,
) -> Vec<Vec<Vec<bool>>> {
    bank.iter_mut()
        .map(|s| {
            let flags: Vec<Vec<bool>> = values
                .iter()
                .enumerate()
                .map(|(n, ys)| {
                    ys.iter()
                        .map(|&y| rng.random::<f64>() < outlier_posterior(y, s.values[n], profile, delta))
                        .collect()
                })
                .collect();
            s.outliers = flags.iter().map(|f| f.iter().any(|&b| b)).collect();
            flags
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StackOptions {
    pub max_outer_iters: usize,
    /// Convergence threshold on the largest grid change of the profile mean,
    /// relative to the pooled standard deviation of the training outputs.
    pub tol: f64,
    pub heteroscedastic: bool,
    /// Pseudo-inputs per sample; `min(64, N)` when `None`.
    pub pseudo_count: Option<usize>,
    /// Number of samples whose data enter the kernel search.
    pub tune_samples: usize,
    /// Noise-level search rounds alternated with the kernel search.
    pub tune_rounds: usize,
    /// Age range of the profile.
    pub domain: (f64, f64),
    pub classify_outliers: bool,
    pub delta: f64,
    /// Add signals to the initial profile one at a time, in input order,
    /// before the joint iterations.
    pub progressive: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 10,
            tol: 1e-3,
            heteroscedastic: false,
            pseudo_count: None,
            tune_samples: 16,
            tune_rounds: 2,
            domain: (0.0, 1.0),
            classify_outliers: true,
            delta: 0.05,
            progressive: true,
        }
    }
}

impl StackOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain.1 > self.domain.0) {
            return Err(Error::invalid("profile domain must have positive width"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.tol > 0.0) || self.tune_samples == 0 {
            return Err(Error::invalid("stack options need 0 < delta < 1, tol > 0 and tune_samples >= 1"));
        }
        Ok(())
    }
}

/// Per-sample training data pooled over signals, outliers excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// Pools sample `l` of every signal; flagged data are left out.
pub fn pool_sample(
    l: usize,
    banks: &[Vec<AlignmentSample>],
    values: &[Vec<Vec<f64>>],
    flags: &[Vec<Vec<Vec<bool>>>],
) -> PooledSample {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for m in 0..banks.len() {
        let s = &banks[m][l % banks[m].len()];
        for (n, ys) in values[m].iter().enumerate() {
            for (k, &y) in ys.iter().enumerate() {
                let flagged = flags.get(m).is_some_and(|f| f[l % f.len()][n][k]);
                if !flagged {
                    inputs.push(s.values[n]);
                    outputs.push(y);
                }
            }
        }
    }
    PooledSample { inputs, outputs }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

/// Fitted profile and the kernel and noise levels behind it.
#[derive(Debug, Clone)]
pub struct ProfileFit {
    pub profile: Profile,
    pub kernel: KernelParams,
    /// Constant noise level of every sample (initial levels when heteroscedastic).
    pub noise: Vec<f64>,
    /// Pooled standard deviation of the training outputs.
    pub output_sd: f64,
}

/// Builds the profile from pooled per-sample training data: shared kernel
/// search, one fit per sample, moment-matched combination on the grid.
pub fn fit_profile(
    samples: &[PooledSample],
    kernel_init: Option<KernelParams>,
    opts: &StackOptions,
    seed: u64,
) -> Result<ProfileFit> {
    if samples.is_empty() || samples.iter().any(|s| s.inputs.is_empty()) {
        return Err(Error::invalid("every sample needs at least one training point"));
    }
    let all: Vec<f64> = samples.iter().flat_map(|s| s.outputs.iter().copied()).collect();
    let (mean, var) = mean_var(&all);
    let var = var.max(1e-12);
    let prior_mean = PriorMean::Constant(mean);
    let (lo, hi) = opts.domain;
    let init = kernel_init.unwrap_or(KernelParams {
        variance: var,
        lengthscale: 0.1 * (hi - lo),
    });
    let sets: Vec<TrainingSet> = samples
        .iter()
        .enumerate()
        .map(|(l, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, l as u64));
            let count = opts.pseudo_count.unwrap_or_else(|| default_pseudo_count(s.inputs.len()));
            TrainingSet {
                pseudo_inputs: stratified_pseudo_inputs(&s.inputs, count, &mut rng),
                inputs: s.inputs.clone(),
                outputs: s.outputs.clone(),
                noise: vec![0.1 * var; s.inputs.len()],
                prior_mean: prior_mean.clone(),
            }
        })
        .collect();
    let k = opts.tune_samples.min(sets.len());
    let (tuned, levels) = tune_homoscedastic(&sets[..k], Kernel::ou(init), &vec![0.1 * var; k], opts.tune_rounds)?;
    let kernel = Kernel::ou(tuned.params);
    let mut sorted = levels.clone();
    sorted.sort_by(f64::total_cmp);
    let typical = sorted[sorted.len() / 2];
    let noise: Vec<f64> = (0..sets.len()).map(|l| if l < k { levels[l] } else { typical }).collect();
    let fits: Vec<GprFit> = sets
        .into_par_iter()
        .zip(noise.par_iter())
        .map(|(s, &lambda)| {
            if opts.heteroscedastic {
                fit_heteroscedastic(kernel, s.pseudo_inputs, s.inputs, s.outputs, s.prior_mean, lambda)
            } else {
                GprFit::homoscedastic(kernel, s.pseudo_inputs, s.inputs, s.outputs, s.prior_mean, lambda)
            }
        })
        .collect::<Result<_>>()?;
    let profile = combine_profile(fits, profile_grid(lo, hi, tuned.params.lengthscale))?;
    Ok(ProfileFit {
        profile,
        kernel: tuned.params,
        noise,
        output_sd: var.sqrt(),
    })
}

/// Initial profile from one signal read with ages equal to positions times
/// `depth_scale` plus `offset`.
pub fn identity_profile(
    signal: &Signal,
    depth_scale: f64,
    offset: f64,
    kernel_init: Option<KernelParams>,
    opts: &StackOptions,
    seed: u64,
) -> Result<ProfileFit> {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (x, data) in signal.positions().iter().zip(signal.observations()) {
        for d in data {
            if let ProxyDatum::D18O { value } = *d {
                inputs.push(offset + depth_scale * x);
                outputs.push(value);
            }
        }
    }
    fit_profile(&[PooledSample { inputs, outputs }], kernel_init, opts, seed)
}

/// Result of the outer loop.
#[derive(Debug, Clone)]
pub struct StackRun {
    pub profile: Profile,
    pub kernel: KernelParams,
    pub params: Vec<SignalParams>,
    pub banks: Vec<Vec<AlignmentSample>>,
    /// Outlier probability at each position averaged over the final bank.
    pub outlier_rates: Vec<Vec<f64>>,
    /// Final `Q` of each signal's EM per outer iteration.
    pub q_final: Vec<Vec<f64>>,
    /// Scaled profile change per outer iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Mean outlier indicator per position over a bank.
pub fn outlier_rates(bank: &[AlignmentSample]) -> Vec<f64> {
    let n = bank.first().map_or(0, |s| s.values.len());
    (0..n)
        .map(|i| bank.iter().filter(|s| s.outliers.get(i).copied().unwrap_or(false)).count() as f64 / bank.len() as f64)
        .collect()
}

/// Flags outliers in every bank against `current` and refits the profile
/// from the pooled samples.
fn rebuild_profile(
    signals: &[Signal],
    params: &[SignalParams],
    banks: &mut [Vec<AlignmentSample>],
    current: &ProfileFit,
    opts: &StackOptions,
    step_seed: u64,
) -> Result<ProfileFit> {
    let values: Vec<Vec<Vec<f64>>> = signals.iter().zip(params).map(|(s, p)| standardized_values(s, p)).collect();
    let flags: Vec<Vec<Vec<Vec<bool>>>> = if opts.classify_outliers {
        banks
            .iter_mut()
            .zip(&values)
            .enumerate()
            .map(|(m, (bank, v))| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, 1 + m as u64));
                classify_outliers(bank, v, &current.profile, opts.delta, &mut rng)
            })
            .collect()
    } else {
        Vec::new()
    };
    let l_max = banks.iter().map(Vec::len).max().unwrap_or(0);
    let pooled: Vec<PooledSample> = (0..l_max).map(|l| pool_sample(l, banks, &values, &flags)).collect();
    fit_profile(&pooled, Some(current.kernel), opts, derive_seed(step_seed, u64::MAX))
}

/// Alternates per-signal EM against the current profile with profile
/// reconstruction from the resulting alignment samples.
pub fn build_stack(
    signals: &[Signal],
    init_profile: ProfileFit,
    init_params: &[SignalParams],
    em_opts: &[EmOptions],
    curve: Option<&CalibrationCurve>,
    opts: &StackOptions,
    seed: u64,
) -> Result<StackRun> {
    opts.validate()?;
    if signals.is_empty() {
        return Err(Error::invalid("stack construction needs at least one signal"));
    }
    if init_params.len() != signals.len() || em_opts.len() != signals.len() {
        return Err(Error::invalid("one parameter set and EM configuration per signal is required"));
    }
    let mut current = init_profile;
    let mut params = init_params.to_vec();
    let mut banks: Vec<Vec<AlignmentSample>> = Vec::new();
    let mut q_final = vec![Vec::new(); signals.len()];
    let mut history = Vec::new();
    let mut converged = false;
    if opts.progressive && signals.len() > 1 && opts.max_outer_iters > 0 {
        // signals join one at a time, each aligned to the profile of those before it
        let stream = derive_seed(seed, u64::MAX);
        let mut added: Vec<Vec<AlignmentSample>> = Vec::new();
        for a in 2..=signals.len() {
            let step_seed = derive_seed(stream, a as u64);
            let from = added.len();
            let results = run_em_all(
                &signals[from..a],
                &params[from..a],
                &current.profile,
                curve,
                &em_opts[from..a],
                derive_seed(step_seed, 0),
            );
            for (i, r) in results.into_iter().enumerate() {
                let r = r?;
                params[from + i] = r.params;
                added.push(r.bank);
            }
            current = rebuild_profile(&signals[..a], &params[..a], &mut added, &current, opts, step_seed)?;
            log::info!("profile initialized from {a} of {} signals", signals.len());
        }
    }
    for outer in 0..opts.max_outer_iters.max(1) {
        let step_seed = derive_seed(seed, outer as u64);
        let results = run_em_all(signals, &params, &current.profile, curve, em_opts, derive_seed(step_seed, 0));
        banks.clear();
        for (m, r) in results.into_iter().enumerate() {
            let r = r?;
            params[m] = r.params;
            q_final[m].push(r.q_final());
            banks.push(r.bank);
        }
        if opts.max_outer_iters == 0 {
            break;
        }
        let next = rebuild_profile(signals, &params, &mut banks, &current, opts, step_seed)?;
        let change = next
            .profile
            .grid()
            .iter()
            .zip(next.profile.means())
            .map(|(&z, &m)| (m - current.profile.eval_unchecked(z).0).abs())
            .fold(0.0, f64::max)
            / next.output_sd;
        log::info!("outer iteration {}: profile change {change:.3e}", outer + 1);
        history.push(change);
        current = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged && opts.max_outer_iters > 0 {
        log::warn!(
            "profile did not converge in {} outer iterations (last change {:.3e})",
            opts.max_outer_iters,
            history.last().copied().unwrap_or(f64::NAN)
        );
    }
    let outlier = banks.iter().map(|b| outlier_rates(b)).collect();
    Ok(StackRun {
        profile: current.profile,
        kernel: current.kernel,
        params,
        banks,
        outlier_rates: outlier,
        q_final,
        history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn posterior_at_mean() {
        let d: f64 = 0.05;
        let expect = d * (-4.5f64).exp() / (d * (-4.5f64).exp() + 1.0 - d);
        assert!((outlier_probability(0.0, d) - expect).abs() < 1e-15);
        assert!((expect - 0.000584).abs() < 1e-6);
    }

    #[test]
    fn posterior_three_sd_out() {
        let d: f64 = 0.05;
        let a = d * (1.0 + (-18.0f64).exp()) / 2.0;
        let expect = a / (a + (1.0 - d) * (-4.5f64).exp());
        assert!((outlier_probability(3.0, d) - expect).abs() < 1e-12);
        assert!((outlier_probability(-3.0, d) - 0.703).abs() < 1e-3);
    }

    #[test]
    fn posterior_is_delta_where_densities_cross() {
        // ratio 1 where cosh(3e) = e^{4.5}
        let e = ((4.5f64).exp()).acosh() / 3.0;
        assert!((outlier_density_ratio(e) - 1.0).abs() < 1e-12);
        assert!((outlier_probability(e, 0.2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn posterior_through_profile() {
        let p = Profile::new(vec![0.0, 1.0], vec![1.0, 3.0], vec![4.0, 4.0]).unwrap();
        // z = 0.5: mean 2, sd 2; y = 8 is three sds out
        assert!((outlier_posterior(8.0, 0.5, &p, 0.05) - outlier_probability(3.0, 0.05)).abs() < 1e-15);
    }

    #[test]
    fn tiny_delta_flags_nothing() {
        let p = Profile::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut bank = vec![AlignmentSample::new(vec![0.2, 0.6], 0.0); 50];
        let values = vec![vec![0.5], vec![2.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flags = classify_outliers(&mut bank, &values, &p, 1e-300, &mut rng);
        assert!(flags.iter().flatten().flatten().all(|&f| !f));
        assert!(bank.iter().all(|s| s.outliers.iter().all(|&o| !o)));
    }

    #[test]
    fn flag_rates_follow_posterior() {
        let p = Profile::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut bank = vec![AlignmentSample::new(vec![0.2, 0.6], 0.0); 4000];
        let values = vec![vec![0.0], vec![5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        classify_outliers(&mut bank, &values, &p, 0.05, &mut rng);
        let rates = outlier_rates(&bank);
        assert!(rates[0] < 0.005);
        assert!(rates[1] > 0.99);
    }

    #[test]
    fn flagged_points_are_not_pooled() {
        let banks = vec![vec![AlignmentSample::new(vec![0.1, 0.2, 0.3], 0.0)]];
        let values = vec![vec![vec![1.0], vec![2.0, 2.5], vec![3.0]]];
        let flags = vec![vec![vec![vec![false], vec![true, false], vec![true]]]];
        let p = pool_sample(0, &banks, &values, &flags);
        assert_eq!(p.inputs, vec![0.1, 0.2]);
        assert_eq!(p.outputs, vec![1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn posterior_monotone_beyond_crossing(delta in 1e-4f64..0.5, a in 1.5f64..8.0, gap in 1e-3f64..2.0) {
            let b = a + gap;
            prop_assert!(outlier_probability(b, delta) >= outlier_probability(a, delta));
            prop_assert!(outlier_probability(-b, delta) >= outlier_probability(-a, delta));
        }
    }
}
