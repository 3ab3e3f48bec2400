use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{log_sum_exp, sample_log_categorical, StateSpaceModel};

#[derive(Debug, Clone, Copy, Default)]
pub struct MhStats {
    pub proposed: usize,
    pub accepted: usize,
}

/// Log prior term of step `t >= 1` with regimes read off the increments;
/// the first regime is summed out inside the term of step 1.
fn term<M: StateSpaceModel + ?Sized>(model: &M, c: &[f64], t: usize) -> f64 {
    let Some(w) = model.regime_of(t, c[t - 1], c[t]) else {
        return f64::NEG_INFINITY;
    };
    let kern = model.log_kernel(t, c[t - 1], c[t], w);
    if kern == f64::NEG_INFINITY {
        return kern;
    }
    if t == 1 {
        let head: Vec<f64> = (0..model.n_regimes())
            .map(|w0| model.log_initial(c[0], w0) + model.log_switch(1, w0, w))
            .collect();
        log_sum_exp(&head) + kern
    } else {
        match model.regime_of(t - 1, c[t - 2], c[t - 1]) {
            Some(wp) => model.log_switch(t, wp, w) + kern,
            None => f64::NEG_INFINITY,
        }
    }
}

fn initial_only<M: StateSpaceModel + ?Sized>(model: &M, z: f64) -> f64 {
    let v: Vec<f64> = (0..model.n_regimes()).map(|w| model.log_initial(z, w)).collect();
    log_sum_exp(&v)
}

/// Log prior density of a chain, the first regime summed out.
pub fn log_prior<M: StateSpaceModel + ?Sized>(model: &M, c: &[f64]) -> f64 {
    if c.len() == 1 {
        return initial_only(model, c[0]);
    }
    (1..c.len()).map(|t| term(model, c, t)).sum()
}

/// Unnormalized log posterior: prior plus all emissions.
pub fn log_posterior<M: StateSpaceModel + ?Sized>(model: &M, c: &[f64]) -> f64 {
    let lp = log_prior(model, c);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + c.iter().enumerate().map(|(t, &z)| model.log_emission(t, z)).sum::<f64>()
}

/// Terms of the log posterior that depend on `c[t]`.
fn local<M: StateSpaceModel + ?Sized>(model: &M, c: &[f64], t: usize) -> f64 {
    let (lo, hi) = model.domain();
    if !(c[t] >= lo && c[t] <= hi) {
        return f64::NEG_INFINITY;
    }
    let e = model.log_emission(t, c[t]);
    if e == f64::NEG_INFINITY {
        return e;
    }
    let n = c.len();
    if n == 1 {
        return e + initial_only(model, c[0]);
    }
    let mut s = e;
    for j in t.max(1)..=(t + 2).min(n - 1) {
        s += term(model, c, j);
        if s == f64::NEG_INFINITY {
            break;
        }
    }
    s
}

fn ln_normal(x: f64, m: f64, var: f64) -> f64 {
    -0.5 * (x - m) * (x - m) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// One single-site update of `c[t]`.
fn update<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(model: &M, c: &mut [f64], t: usize, rng: &mut R) -> bool {
    let n = c.len();
    let current = c[t];
    let before = local(model, c, t);
    let (proposal, log_q_ratio) = if n == 1 {
        let sd = 0.01 * (model.domain().1 - model.domain().0);
        (current + sd * Normal::new(0.0, 1.0).unwrap().sample(rng), 0.0)
    } else if t > 0 && t + 1 < n {
        (c[t - 1] + (c[t + 1] - c[t - 1]) * rng.random::<f64>(), 0.0)
    } else {
        // endpoint: variance is an eighth of the gap to the single neighbour
        let neighbour = if t == 0 { c[1] } else { c[n - 2] };
        let gap = |z: f64| (neighbour - z).abs();
        let var = gap(current) / 8.0;
        if !(var > 0.0) {
            return false;
        }
        let prop = current + var.sqrt() * Normal::new(0.0, 1.0).unwrap().sample(rng);
        let var_back = gap(prop) / 8.0;
        if !(var_back > 0.0) {
            return false;
        }
        (prop, ln_normal(current, prop, var_back) - ln_normal(prop, current, var))
    };
    if proposal == current {
        return true;
    }
    c[t] = proposal;
    let after = local(model, c, t);
    let log_alpha = after - before + log_q_ratio;
    if after != f64::NEG_INFINITY && (log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha) {
        true
    } else {
        c[t] = current;
        false
    }
}

/// Metropolis–Hastings sweeps over the chain: every other step starting with
/// the first, then the remaining ones. Interior steps are proposed uniformly
/// between their neighbours; endpoints by a Gaussian around the current
/// value whose variance is an eighth of the gap to the neighbour, with the
/// Hastings correction.
pub fn mh_refine<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mut c: Vec<f64>,
    sweeps: usize,
    rng: &mut R,
) -> (Vec<f64>, MhStats) {
    let n = c.len();
    let mut stats = MhStats::default();
    for _ in 0..sweeps {
        for parity in [0, 1] {
            for t in (parity..n).step_by(2) {
                stats.proposed += 1;
                if update(model, &mut c, t, rng) {
                    stats.accepted += 1;
                }
            }
        }
    }
    (c, stats)
}

/// Regimes of a refined chain: read off the increments, with the first
/// drawn from its conditional given the first value and the next regime.
pub(crate) fn sample_regimes<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(model: &M, c: &[f64], rng: &mut R) -> Vec<usize> {
    let n = c.len();
    let s = model.n_regimes();
    let mut w = vec![0usize; n];
    for t in 1..n {
        w[t] = model.regime_of(t, c[t - 1], c[t]).unwrap_or(0);
    }
    if s > 1 {
        let lp: Vec<f64> = (0..s)
            .map(|w0| model.log_initial(c[0], w0) + if n > 1 { model.log_switch(1, w0, w[1]) } else { 0.0 })
            .collect();
        w[0] = sample_log_categorical(&lp, rng).unwrap_or(0);
    }
    w
}
