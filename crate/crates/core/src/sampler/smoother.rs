use rand::Rng;
use rayon::prelude::*;

use super::{sample_log_categorical, Proposal, StateSpaceModel};
use crate::error::{Error, Result};

/// Particles and normalized weights of the forward pass. Each particle
/// carries one weight per regime, so the discrete regime is summed out
/// exactly.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Vec<f64>>,
    /// `weights[t][k * regimes + w]`, summing to one over `(k, w)`.
    weights: Vec<Vec<f64>>,
    regimes: usize,
    ess: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self, t: usize) -> &[f64] {
        &self.particles[t]
    }

    pub fn weights(&self, t: usize) -> &[f64] {
        &self.weights[t]
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes
    }

    /// Weight of particle `k` summed over regimes.
    pub fn particle_weight(&self, t: usize, k: usize) -> f64 {
        let s = self.regimes;
        self.weights[t][k * s..(k + 1) * s].iter().sum()
    }

    pub fn ess(&self) -> &[f64] {
        &self.ess
    }
}

/// Running log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct Lse {
    max: f64,
    sum: f64,
}

impl Lse {
    const EMPTY: Lse = Lse {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    #[inline]
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Normalizes log weights in place into linear weights; returns the ESS.
fn normalize(lw: &mut [f64], step: usize) -> Result<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights { step });
    }
    let mut total = 0.0;
    for x in lw.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    let mut sq = 0.0;
    for x in lw.iter_mut() {
        *x /= total;
        sq += *x * *x;
    }
    Ok(1.0 / sq)
}

/// Forward pass: at every step draws `k` particles from the proposal and
/// weights them by emission / proposal times the transition mass from the
/// previous step's weighted particles.
pub fn smoother_forward<M: StateSpaceModel + ?Sized, P: Proposal + ?Sized, R: Rng>(
    model: &M,
    proposal: &P,
    k: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    if k == 0 {
        return Err(Error::invalid("at least one particle is required"));
    }
    let t_len = model.len();
    let s = model.n_regimes();
    let mut particles: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut ess = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let z: Vec<f64> = (0..k).map(|i| proposal.sample(t, i, k, rng)).collect();
        let mut lw = vec![f64::NEG_INFINITY; k * s];
        if t == 0 {
            for (i, &zi) in z.iter().enumerate() {
                let base = model.log_emission(0, zi) - proposal.log_density(0, zi);
                if base == f64::NEG_INFINITY || base.is_nan() {
                    continue;
                }
                for w in 0..s {
                    lw[i * s + w] = base + model.log_initial(zi, w);
                }
            }
        } else {
            let prev_z = &particles[t - 1];
            let prev_w: &Vec<f64> = &weights[t - 1];
            // a[j][to] = log Σ_from ω_{j,from} · switch(from → to), kept for live particles only
            let mut live: Vec<(f64, Vec<f64>)> = Vec::new();
            for j in 0..k {
                let wj = &prev_w[j * s..(j + 1) * s];
                if wj.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let a: Vec<f64> = (0..s)
                    .map(|to| {
                        let mut acc = Lse::EMPTY;
                        for (from, &x) in wj.iter().enumerate() {
                            if x > 0.0 {
                                acc.push(x.ln() + model.log_switch(t, from, to));
                            }
                        }
                        acc.value()
                    })
                    .collect();
                live.push((prev_z[j], a));
            }
            lw.par_chunks_mut(s).enumerate().for_each(|(i, out)| {
                let zi = z[i];
                let base = model.log_emission(t, zi) - proposal.log_density(t, zi);
                if base == f64::NEG_INFINITY || base.is_nan() {
                    return;
                }
                for (to, o) in out.iter_mut().enumerate() {
                    let mut acc = Lse::EMPTY;
                    for (zj, a) in &live {
                        if a[to] == f64::NEG_INFINITY {
                            continue;
                        }
                        let kern = model.log_kernel(t, *zj, zi, to);
                        if kern != f64::NEG_INFINITY {
                            acc.push(a[to] + kern);
                        }
                    }
                    *o = base + acc.value();
                }
            });
        }
        let e = normalize(&mut lw, t)?;
        if e < 2.0 {
            log::warn!("effective sample size {e:.2} at step {t}");
        }
        ess.push(e);
        particles.push(z);
        weights.push(lw);
    }
    Ok(ParticleSet {
        particles,
        weights,
        regimes: s,
        ess,
    })
}

/// One backward draw: the last step from its weights, then each earlier
/// step in proportion to weight times the transition into the value and
/// regime already drawn.
pub fn smoother_backward<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(
    ps: &ParticleSet,
    model: &M,
    rng: &mut R,
) -> Result<super::ChainPath> {
    let t_len = ps.len();
    let s = ps.regimes;
    let mut values = vec![0.0; t_len];
    let mut regimes = vec![0usize; t_len];
    let last = t_len - 1;
    let lw: Vec<f64> = ps.weights[last].iter().map(|w| w.ln()).collect();
    let idx = sample_log_categorical(&lw, rng).ok_or(Error::DegenerateWeights { step: last })?;
    values[last] = ps.particles[last][idx / s];
    regimes[last] = idx % s;
    let mut lp = vec![f64::NEG_INFINITY; ps.particles.first().map_or(0, |p| p.len()) * s];
    for t in (0..last).rev() {
        let (zn, wn) = (values[t + 1], regimes[t + 1]);
        let zs = &ps.particles[t];
        let ws = &ps.weights[t];
        for (j, &zj) in zs.iter().enumerate() {
            let kern = model.log_kernel(t + 1, zj, zn, wn);
            for from in 0..s {
                let w = ws[j * s + from];
                lp[j * s + from] = if w > 0.0 && kern != f64::NEG_INFINITY {
                    w.ln() + kern + model.log_switch(t + 1, from, wn)
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        let idx = sample_log_categorical(&lp, rng).ok_or(Error::DegenerateWeights { step: t })?;
        values[t] = zs[idx / s];
        regimes[t] = idx % s;
    }
    Ok(super::ChainPath {
        values,
        regimes,
        log_posterior: f64::NAN,
    })
}
