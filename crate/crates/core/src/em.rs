//! Monte-Carlo EM for the per-signal transition and emission parameters.
//!
//! Each iteration draws a bank of alignments at the current parameters and
//! maximizes the bank average of the complete-data log posterior `Q`. The
//! transition and emission parts of `Q` separate, so each is maximized on
//! its own and only replaced when it does not decrease.

use std::path::Path;

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::data::{fmt_sig9, write_table, AlignmentSample, CalibrationCurve, FixedHyperparams, Signal};
use crate::emission::{emission_prior_logpdf, EmissionParams, PreparedEmission, StudentT};
use crate::error::{Error, Result};
use crate::gpr::Profile;
use crate::optim::{bisect_root, bounded_maximize, coordinate_search, SearchOptions};
use crate::sampler::{derive_seed, log_posterior, log_sum_exp, InitialSupport, SamplerOptions, SignalModel};
use crate::transition::{gamma_prior_logpdf, ChainDirection, CaeTransitionParams, GammaTransitionParams, PreparedTransition};

const PHI_PSEUDO_COUNT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitionParams {
    Gamma(GammaTransitionParams),
    Cae(CaeTransitionParams),
}

impl TransitionParams {
    pub fn validate(&self) -> Result<()> {
        match self {
            TransitionParams::Gamma(p) => p.validate(),
            TransitionParams::Cae(p) => p.validate(),
        }
    }

    pub fn prepare(&self, fixed: &FixedHyperparams) -> PreparedTransition {
        match *self {
            TransitionParams::Gamma(p) => PreparedTransition::gamma(p),
            TransitionParams::Cae(p) => PreparedTransition::cae(p, fixed),
        }
    }

    pub fn depth_scale(&self) -> f64 {
        match self {
            TransitionParams::Gamma(p) => p.depth_scale,
            TransitionParams::Cae(p) => p.depth_scale,
        }
    }

    fn with_depth_scale(mut self, r: f64) -> Self {
        match &mut self {
            TransitionParams::Gamma(p) => p.depth_scale = r,
            TransitionParams::Cae(p) => p.depth_scale = r,
        }
        self
    }

    /// Log prior: the Gamma-parameter prior (when present) plus a log-uniform
    /// prior on the depth scale.
    pub fn log_prior(&self, fixed: &FixedHyperparams) -> f64 {
        match self {
            TransitionParams::Gamma(p) => gamma_prior_logpdf(p.alpha, p.beta, fixed) - p.depth_scale.ln(),
            TransitionParams::Cae(p) => -p.depth_scale.ln(),
        }
    }
}

/// Learned parameters of one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalParams {
    pub transition: TransitionParams,
    pub emission: EmissionParams,
}

impl SignalParams {
    pub fn validate(&self) -> Result<()> {
        self.transition.validate()?;
        self.emission.validate()
    }
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop when the relative change of `Q` between iterations falls below this.
    pub tol: f64,
    pub sampler: SamplerOptions,
    /// Learn the emission scale; otherwise it stays at its initial value.
    pub learn_scale: bool,
    /// Learn the transition parameters; otherwise only the emission is learned.
    pub learn_transition: bool,
    pub fixed: FixedHyperparams,
    pub initial: InitialSupport,
    /// Bounds on the depth scale; derived from the profile and signal spans when `None`.
    pub depth_scale_bounds: Option<(f64, f64)>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-4,
            sampler: SamplerOptions::default(),
            learn_scale: false,
            learn_transition: true,
            fixed: FixedHyperparams::default(),
            initial: InitialSupport::Domain,
            depth_scale_bounds: None,
        }
    }
}

/// Ratio of the profile's age span to the signal's depth span.
pub fn reference_depth_scale(signal: &Signal, profile: &Profile) -> f64 {
    let (a, b) = profile.domain();
    (b - a) / signal.depth_span()
}

/// A signal aligned against a fixed profile.
pub struct EmProblem<'a> {
    pub signal: &'a Signal,
    pub profile: &'a Profile,
    pub curve: Option<&'a CalibrationCurve>,
    pub opts: &'a EmOptions,
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: SignalParams,
    /// The last bank drawn.
    pub bank: Vec<AlignmentSample>,
    /// `Q` of the updated parameters on each iteration's bank.
    pub q_history: Vec<f64>,
    /// Monte-Carlo standard error of each `Q` value.
    pub q_se: Vec<f64>,
}

impl EmResult {
    pub fn q_final(&self) -> f64 {
        self.q_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Log transition density of a chain with the first regime summed out
/// uniformly; excludes the initial-age density, which has no parameters.
fn chain_transition_logpdf(pt: &PreparedTransition, chain: &[f64], dx: &[f64]) -> f64 {
    let s = pt.n_regimes();
    let mut total = 0.0;
    let mut prev: Option<usize> = None;
    for t in 1..chain.len() {
        let dz = chain[t] - chain[t - 1];
        let Some(w) = pt.regime_of(dz, dx[t]) else {
            return f64::NEG_INFINITY;
        };
        let switch = match prev {
            Some(wp) => pt.ln_switch(wp, w),
            None => {
                let head: Vec<f64> = (0..s).map(|w0| pt.ln_switch(w0, w)).collect();
                log_sum_exp(&head) - (s as f64).ln()
            }
        };
        total += switch + pt.log_increment(dz, dx[t], w);
        if total == f64::NEG_INFINITY {
            return total;
        }
        prev = Some(w);
    }
    total
}

impl<'a> EmProblem<'a> {
    pub fn new(
        signal: &'a Signal,
        profile: &'a Profile,
        curve: Option<&'a CalibrationCurve>,
        opts: &'a EmOptions,
    ) -> Self {
        Self {
            signal,
            profile,
            curve,
            opts,
        }
    }

    pub fn depth_scale_bounds(&self) -> (f64, f64) {
        self.opts.depth_scale_bounds.unwrap_or_else(|| {
            let r = reference_depth_scale(self.signal, self.profile);
            (0.1 * r, 10.0 * r)
        })
    }

    pub fn model(&self, params: &SignalParams) -> Result<SignalModel<'a>> {
        params.validate()?;
        let fixed = &self.opts.fixed;
        SignalModel::new(
            self.signal,
            params.transition.prepare(fixed),
            PreparedEmission::new(self.signal.observations(), params.emission, self.curve, fixed),
            self.profile,
            self.curve,
            self.opts.initial,
        )
    }

    /// Per-sample complete-data log densities at `params`.
    pub fn sample_log_joints(&self, params: &SignalParams, bank: &[AlignmentSample]) -> Result<Vec<f64>> {
        let model = self.model(params)?;
        Ok(bank
            .iter()
            .map(|s| log_posterior(&model, &model.to_chain(&s.values)))
            .collect())
    }

    /// Monte-Carlo estimate of `Q` at `params` over `bank`, with its standard error.
    pub fn q_value_se(&self, params: &SignalParams, bank: &[AlignmentSample]) -> Result<(f64, f64)> {
        if bank.is_empty() {
            return Err(Error::invalid("Q needs a nonempty sample bank"));
        }
        let joints = self.sample_log_joints(params, bank)?;
        let (m, se) = mean_se(&joints);
        let prior = params.transition.log_prior(&self.opts.fixed)
            + emission_prior_logpdf(&params.emission, &self.opts.fixed, self.opts.learn_scale);
        Ok((prior + m, se))
    }

    pub fn q_value(&self, params: &SignalParams, bank: &[AlignmentSample]) -> Result<f64> {
        self.q_value_se(params, bank).map(|(q, _)| q)
    }

    /// Chains of the bank in transition order and the depth gap of each step.
    fn chain_geometry(&self, pt: &PreparedTransition, bank: &[AlignmentSample]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.signal.len();
        let (order, sign): (Vec<usize>, f64) = match pt.direction() {
            ChainDirection::TopDown => ((0..n).collect(), 1.0),
            ChainDirection::BottomUp => ((0..n).rev().collect(), -1.0),
        };
        let x = self.signal.positions();
        let dx = (0..n)
            .map(|t| if t == 0 { 0.0 } else { (x[order[t]] - x[order[t - 1]]).abs() })
            .collect();
        let chains = bank
            .iter()
            .map(|s| order.iter().map(|&i| sign * s.values[i]).collect())
            .collect();
        (chains, dx)
    }

    /// Transition part of `Q`: prior plus the bank-averaged chain log density.
    fn q_transition(&self, tp: &TransitionParams, chains: &[Vec<f64>], dx: &[f64]) -> f64 {
        let pt = tp.prepare(&self.opts.fixed);
        let total: f64 = chains.iter().map(|c| chain_transition_logpdf(&pt, c, dx)).sum();
        tp.log_prior(&self.opts.fixed) + total / chains.len() as f64
    }

    fn m_step_transition(&self, current: &TransitionParams, bank: &[AlignmentSample]) -> Result<TransitionParams> {
        let fixed = &self.opts.fixed;
        let (chains, dx) = self.chain_geometry(&current.prepare(fixed), bank);
        let (r_lo, r_hi) = self.depth_scale_bounds();
        let q_current = self.q_transition(current, &chains, &dx);
        let candidate = match *current {
            TransitionParams::Gamma(p) => {
                // sufficient statistics of the accumulation ratios
                let l = chains.len() as f64;
                let steps = (dx.len() - 1) as f64;
                let (mut s_log, mut s_lin) = (0.0, 0.0);
                for c in &chains {
                    for t in 1..c.len() {
                        let v = (c[t] - c[t - 1]) / dx[t];
                        s_log += v.ln();
                        s_lin += v;
                    }
                }
                s_log /= l;
                s_lin /= l;
                let s_jac: f64 = dx[1..].iter().map(|d| d.ln()).sum();
                let q = |x: &[f64]| {
                    let (a, b, r) = (x[0].exp(), x[1].exp(), x[2].exp());
                    steps * (a * b.ln() - ln_gamma(a)) + (a - 1.0) * (s_log - steps * r.ln()) - b * s_lin / r
                        - steps * r.ln()
                        - s_jac
                        + gamma_prior_logpdf(a, b, fixed)
                        - r.ln()
                };
                let x0 = [p.alpha.ln(), p.beta.ln(), p.depth_scale.clamp(r_lo, r_hi).ln()];
                let res = coordinate_search(
                    q,
                    &x0,
                    &[(1e-3f64).ln(), (1e-3f64).ln(), r_lo.ln()],
                    &[(1e4f64).ln(), (1e4f64).ln(), r_hi.ln()],
                    SearchOptions {
                        initial_step: 0.5,
                        min_step: 1e-7,
                        max_evals: 20_000,
                        restarts: 3,
                    },
                );
                if !res.value.is_finite() {
                    return Err(Error::OptimFailed("Gamma transition M-step found no finite optimum".into()));
                }
                TransitionParams::Gamma(GammaTransitionParams {
                    alpha: res.x[0].exp(),
                    beta: res.x[1].exp(),
                    depth_scale: res.x[2].exp(),
                })
            }
            TransitionParams::Cae(p) => {
                let pt = current.prepare(fixed);
                let mut counts = [[PHI_PSEUDO_COUNT; 3]; 3];
                for (c, s) in chains.iter().zip(bank) {
                    let mut prev = if s.regimes.is_empty() {
                        None
                    } else {
                        Some(s.regimes[self.signal.len() - 1].index())
                    };
                    for t in 1..c.len() {
                        let w = pt.regime_of(c[t] - c[t - 1], dx[t]);
                        if let (Some(a), Some(b)) = (prev, w) {
                            counts[a][b] += 1.0;
                        }
                        prev = w;
                    }
                }
                let mut phi = [[0.0; 3]; 3];
                for (i, row) in counts.iter().enumerate() {
                    let s: f64 = row.iter().sum();
                    for j in 0..3 {
                        phi[i][j] = row[j] / s;
                    }
                    let s2: f64 = phi[i].iter().sum();
                    phi[i][2] += 1.0 - s2;
                }
                let with_phi = TransitionParams::Cae(CaeTransitionParams { phi, ..p });
                let (log_r, _) = bounded_maximize(
                    |lr| self.q_transition(&with_phi.with_depth_scale(lr.exp()), &chains, &dx),
                    r_lo.ln(),
                    r_hi.ln(),
                    25,
                    1e-7,
                );
                with_phi.with_depth_scale(log_r.exp())
            }
        };
        let q_new = self.q_transition(&candidate, &chains, &dx);
        if q_new >= q_current {
            return Ok(candidate);
        }
        // counts alone may lose to the current matrix; try them at the old scale
        if let TransitionParams::Cae(_) = candidate {
            let fallback = candidate.with_depth_scale(current.depth_scale());
            if self.q_transition(&fallback, &chains, &dx) >= q_current {
                return Ok(fallback);
            }
        }
        Ok(*current)
    }

    fn m_step_emission(&self, current: &EmissionParams, bank: &[AlignmentSample]) -> Result<EmissionParams> {
        let fixed = &self.opts.fixed;
        let t = StudentT::new(2.0 * fixed.a2);
        let nu = t.dof;
        let ratio = fixed.b2 / fixed.a2;
        let inv_l = 1.0 / bank.len() as f64;
        // (y, profile mean, ratio × profile variance) for every sampled δ¹⁸O datum
        let mut obs: Vec<(f64, f64, f64)> = Vec::new();
        for s in bank {
            for (n, data) in self.signal.observations().iter().enumerate() {
                let mut mv = None;
                for y in data.iter().filter_map(|d| match *d {
                    crate::data::ProxyDatum::D18O { value } => Some(value),
                    _ => None,
                }) {
                    let (m, v) = *mv.get_or_insert_with(|| self.profile.eval_unchecked(s.values[n]));
                    obs.push((y, m, ratio * v));
                }
            }
        }
        if obs.is_empty() {
            return Ok(*current);
        }
        let q = |p: &EmissionParams| -> f64 {
            let sum: f64 = obs
                .iter()
                .map(|&(y, m, c)| t.logpdf_var(y, p.scale * m + p.shift, c * p.scale * p.scale))
                .sum();
            emission_prior_logpdf(p, fixed, self.opts.learn_scale) + inv_l * sum
        };
        let q_current = q(current);
        let prior_prec = 1.0 / (fixed.sigma_bar * fixed.sigma_bar);
        let mut p = *current;
        for _round in 0..20 {
            let before = p;
            // shift: majorize-minimize, each step a penalized weighted least-squares solve
            for _ in 0..200 {
                let (mut num, mut den) = (fixed.h_bar * prior_prec, prior_prec);
                let s2 = p.scale * p.scale;
                let (mut a, mut b) = (0.0, 0.0);
                for &(y, m, c) in &obs {
                    let var = c * s2;
                    let e = y - p.scale * m - p.shift;
                    let w = (nu + 1.0) / (nu + e * e / var);
                    a += w * (y - p.scale * m) / var;
                    b += w / var;
                }
                num += inv_l * a;
                den += inv_l * b;
                let h = num / den;
                let done = (h - p.shift).abs() <= 1e-13 * (1.0 + h.abs());
                p.shift = h;
                if done {
                    break;
                }
            }
            if self.opts.learn_scale {
                let h = p.shift;
                let dq = |u: f64| {
                    let sigma = u.exp();
                    let mut g = 0.0;
                    for &(y, m, c) in &obs {
                        let a = (y - h) / sigma - m;
                        let qv = a * a / (nu * c);
                        let dqv = -2.0 * a * (y - h) / sigma / (nu * c);
                        g += -1.0 - 0.5 * (nu + 1.0) * dqv / (1.0 + qv);
                    }
                    inv_l * g - 2.0 * (fixed.alpha_bar + 1.0) + 2.0 * fixed.beta_bar / (sigma * sigma)
                };
                let u0 = p.scale.ln();
                let mut width = 2.0;
                let mut root = None;
                while width <= 64.0 && root.is_none() {
                    root = bisect_root(dq, u0 - width, u0 + width, 1e-8);
                    width *= 2.0;
                }
                if let Some(u) = root {
                    let cand = EmissionParams { scale: u.exp(), ..p };
                    if q(&cand) >= q(&p) {
                        p = cand;
                    }
                }
            }
            if (p.shift - before.shift).abs() < 1e-10 && (p.scale - before.scale).abs() < 1e-10 * p.scale {
                break;
            }
        }
        if !p.shift.is_finite() || !(p.scale > 0.0) {
            return Err(Error::OptimFailed("emission M-step diverged".into()));
        }
        Ok(if q(&p) >= q_current { p } else { *current })
    }

    /// Maximizes `Q` over the parameters on a fixed bank.
    pub fn m_step(&self, bank: &[AlignmentSample], current: &SignalParams) -> Result<SignalParams> {
        if bank.is_empty() {
            return Err(Error::invalid("M-step needs a nonempty sample bank"));
        }
        let transition = if self.opts.learn_transition {
            self.m_step_transition(&current.transition, bank)?
        } else {
            current.transition
        };
        let emission = self.m_step_emission(&current.emission, bank)?;
        Ok(SignalParams { transition, emission })
    }

    /// Alternates sampling and M-steps; `max_iters == 0` returns the initial
    /// parameters with one bank drawn at them.
    pub fn run(&self, init: SignalParams, seed: u64) -> Result<EmResult> {
        init.validate()?;
        let mut params = init;
        let mut bank: Option<Vec<AlignmentSample>> = None;
        let mut q_history = Vec::new();
        let mut q_se = Vec::new();
        if self.opts.max_iters == 0 {
            let model = self.model(&params)?;
            let b = model.sample(None, &self.opts.sampler, derive_seed(seed, 0))?;
            return Ok(EmResult {
                params,
                bank: b,
                q_history,
                q_se,
            });
        }
        for it in 0..self.opts.max_iters {
            let model = self.model(&params)?;
            let b = model.sample(bank.as_deref(), &self.opts.sampler, derive_seed(seed, it as u64))?;
            let next = self.m_step(&b, &params)?;
            let (q, se) = self.q_value_se(&next, &b)?;
            log::info!("signal {}: EM iteration {} Q = {q:.6} (se {se:.3})", self.signal.id(), it + 1);
            let converged = q_history
                .last()
                .is_some_and(|&prev: &f64| (q - prev).abs() <= self.opts.tol * prev.abs());
            q_history.push(q);
            q_se.push(se);
            params = next;
            bank = Some(b);
            if converged {
                break;
            }
        }
        Ok(EmResult {
            params,
            bank: bank.expect("at least one iteration"),
            q_history,
            q_se,
        })
    }
}

/// Runs EM for every signal in parallel; signal `m` uses seed stream `m`.
pub fn run_em_all(
    signals: &[Signal],
    inits: &[SignalParams],
    profile: &Profile,
    curve: Option<&CalibrationCurve>,
    opts: &[EmOptions],
    seed: u64,
) -> Vec<Result<EmResult>> {
    signals
        .par_iter()
        .enumerate()
        .map(|(m, s)| EmProblem::new(s, profile, curve, &opts[m]).run(inits[m], derive_seed(seed, m as u64)))
        .collect()
}

/// Writes one row per signal: shift, scale, depth scale, Gamma shape and
/// rate, the regime matrix (row-major; empty for the Gamma model) and final `Q`.
pub fn write_parameter_report(path: &Path, rows: &[(String, SignalParams, f64)]) -> Result<()> {
    let mut header = String::from("signal_id,h,sigma,r,alpha,beta");
    for a in ['C', 'A', 'E'] {
        for b in ['C', 'A', 'E'] {
            header.push_str(&format!(",phi_{a}{b}"));
        }
    }
    header.push_str(",Q_final");
    let out = rows.iter().map(|(id, p, q)| {
        let mut row = vec![id.clone(), fmt_sig9(p.emission.shift), fmt_sig9(p.emission.scale)];
        match p.transition {
            TransitionParams::Gamma(g) => {
                row.extend([fmt_sig9(g.depth_scale), fmt_sig9(g.alpha), fmt_sig9(g.beta)]);
                row.extend(std::iter::repeat_n(String::new(), 9));
            }
            TransitionParams::Cae(c) => {
                row.extend([fmt_sig9(c.depth_scale), fmt_sig9(c.gamma_shape), fmt_sig9(c.gamma_rate)]);
                row.extend(c.phi.iter().flatten().map(|&v| fmt_sig9(v)));
            }
        }
        row.push(fmt_sig9(*q));
        row
    });
    write_table(path, &header, out)
}
