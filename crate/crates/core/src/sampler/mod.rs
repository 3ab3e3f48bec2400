//! Posterior sampling of continuous alignments: a particle smoother draws
//! initial paths and single-site Metropolis–Hastings sweeps refine them.
//!
//! The sampler works in chain order on a state-space model whose values
//! increase strictly along the chain. Signals whose chain runs from the
//! deepest position upwards are mapped onto this form by negating ages
//! (see [`SignalModel`]).

mod mh;
mod proposal;
mod signal;
mod smoother;

pub use mh::{log_posterior, log_prior, mh_refine, MhStats};
pub use proposal::{BankProposal, CorridorProposal, Proposal};
pub use signal::{radiocarbon_initial_support, InitialSupport, SignalModel};
pub use smoother::{smoother_backward, smoother_forward, ParticleSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A hidden Markov chain over continuous values with an optional discrete
/// regime attached to each step. Steps are indexed `0..len()` in chain order.
pub trait StateSpaceModel: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn n_regimes(&self) -> usize {
        1
    }

    /// Bounds every value must respect.
    fn domain(&self) -> (f64, f64);

    /// Support of the first value's prior.
    fn initial_support(&self) -> (f64, f64) {
        self.domain()
    }

    fn log_initial(&self, z: f64, w: usize) -> f64;

    /// Log probability of the regime switch into step `t`.
    fn log_switch(&self, _t: usize, _from: usize, _to: usize) -> f64 {
        0.0
    }

    /// Log density of `z` at step `t >= 1` given `z_prev` and the regime `to` of step `t`.
    fn log_kernel(&self, t: usize, z_prev: f64, z: f64, to: usize) -> f64;

    fn log_emission(&self, t: usize, z: f64) -> f64;

    /// The regime of step `t` when it is a function of the increment; models
    /// refined by Metropolis–Hastings must provide it.
    fn regime_of(&self, _t: usize, _z_prev: f64, _z: f64) -> Option<usize> {
        Some(0)
    }

    /// Range `[min, max]` of `z_t − z_{t−1}` holding nearly all prior mass.
    fn increment_range(&self, t: usize) -> (f64, f64);
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    /// Particles per step.
    pub particles: usize,
    /// Alignment samples drawn.
    pub samples: usize,
    /// Metropolis–Hastings sweeps per sample.
    pub sweeps: usize,
    /// Half-width of the proposal intervals around previous samples; chosen
    /// from the bank's spread when `None`.
    pub bandwidth: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            particles: 500,
            samples: 100,
            sweeps: 200,
            bandwidth: None,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.samples == 0 {
            return Err(Error::invalid("particle and sample counts must be at least 1"));
        }
        if let Some(d) = self.bandwidth {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// One sampled path in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub values: Vec<f64>,
    pub regimes: Vec<usize>,
    pub log_posterior: f64,
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub paths: Vec<ChainPath>,
    /// Smallest effective sample size over the forward steps.
    pub min_ess: f64,
    /// Metropolis–Hastings acceptance rate over all samples.
    pub acceptance: f64,
}

/// Deterministic child seed for a labelled sub-task (SplitMix64 mixing).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Default interval half-width: the median over steps of the bank's
/// standard deviation, floored at a thousandth of the domain.
pub fn default_bandwidth(bank: &[Vec<f64>], domain: (f64, f64)) -> f64 {
    let floor = 1e-3 * (domain.1 - domain.0).abs().max(f64::MIN_POSITIVE);
    if bank.is_empty() {
        return floor;
    }
    let t_len = bank[0].len();
    let l = bank.len() as f64;
    let mut sds: Vec<f64> = (0..t_len)
        .map(|t| {
            let mean = bank.iter().map(|p| p[t]).sum::<f64>() / l;
            (bank.iter().map(|p| (p[t] - mean).powi(2)).sum::<f64>() / l).sqrt()
        })
        .collect();
    if sds.is_empty() {
        return floor;
    }
    sds.sort_by(f64::total_cmp);
    sds[sds.len() / 2].max(floor)
}

/// Runs the forward pass with the bank proposal when a bank is given,
/// doubling the bandwidth on degenerate weights up to three times before
/// falling back to the feasibility corridor, where the particle count is
/// doubled on degenerate weights up to three times.
fn forward_with_fallback<M: StateSpaceModel>(
    model: &M,
    bank: Option<&[Vec<f64>]>,
    opts: &SamplerOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleSet> {
    if let Some(bank) = bank.filter(|b| !b.is_empty()) {
        let mut d = opts.bandwidth.unwrap_or_else(|| default_bandwidth(bank, model.domain()));
        for attempt in 0..4 {
            let proposal = BankProposal::new(bank, d)?;
            match smoother_forward(model, &proposal, opts.particles, rng) {
                Ok(ps) => return Ok(ps),
                Err(Error::DegenerateWeights { step }) => {
                    log::warn!("degenerate weights at step {step} with bandwidth {d:.4} (attempt {})", attempt + 1);
                    d *= 2.0;
                }
                Err(e) => return Err(e),
            }
        }
        log::warn!("falling back to the feasibility corridor proposal");
    }
    let corridor = CorridorProposal::new(model)?;
    let mut k = opts.particles;
    for attempt in 0..3 {
        match smoother_forward(model, &corridor, k, rng) {
            Err(Error::DegenerateWeights { step }) => {
                log::warn!("degenerate weights at step {step} with {k} corridor particles (attempt {})", attempt + 1);
                k *= 2;
            }
            other => return other,
        }
    }
    smoother_forward(model, &corridor, k, rng)
}

/// Draws `opts.samples` independent paths: one forward pass, then for each
/// sample an independent backward draw and Metropolis–Hastings refinement.
/// Sample `l` uses its own random stream, so results do not depend on the
/// number of threads.
pub fn sample_paths<M: StateSpaceModel>(
    model: &M,
    bank: Option<&[Vec<f64>]>,
    opts: &SamplerOptions,
    seed: u64,
) -> Result<SamplerRun> {
    opts.validate()?;
    if model.is_empty() {
        return Err(Error::invalid("cannot sample an empty chain"));
    }
    let mut rng = stream_rng(seed, 0);
    let ps = forward_with_fallback(model, bank, opts, &mut rng)?;
    let min_ess = ps.ess().iter().copied().fold(f64::INFINITY, f64::min);
    let results: Vec<Result<(ChainPath, MhStats)>> = (0..opts.samples)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream_rng(seed, l as u64 + 1);
            let init = smoother_backward(&ps, model, &mut rng)?;
            let (values, stats) = mh_refine(model, init.values, opts.sweeps, &mut rng);
            let regimes = mh::sample_regimes(model, &values, &mut rng);
            let log_posterior = log_posterior(model, &values);
            Ok((
                ChainPath {
                    values,
                    regimes,
                    log_posterior,
                },
                stats,
            ))
        })
        .collect();
    let mut paths = Vec::with_capacity(opts.samples);
    let (mut acc, mut prop) = (0usize, 0usize);
    for r in results {
        let (p, s) = r?;
        acc += s.accepted;
        prop += s.proposed;
        paths.push(p);
    }
    let acceptance = if prop > 0 { acc as f64 / prop as f64 } else { 0.0 };
    log::debug!("sampled {} paths: min ESS {min_ess:.1}, MH acceptance {acceptance:.3}", paths.len());
    Ok(SamplerRun {
        paths,
        min_ess,
        acceptance,
    })
}

/// Log-sum-exp of a slice, `−∞` when empty or all `−∞`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Draws an index with probability proportional to `exp(log_w)`.
pub(crate) fn sample_log_categorical<R: rand::Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let total: f64 = log_w.iter().map(|x| (x - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, x) in log_w.iter().enumerate() {
        let w = (x - m).exp();
        if w > 0.0 {
            last = i;
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    Some(last)
}

#[cfg(test)]
pub(crate) mod toys;
