//! Priors over alignment increments.
//!
//! Two families are provided: a Gamma prior on the accumulation ratio
//! `u = Δz / (r·Δx)` that runs from the top of a signal downwards, and the
//! regime-switching contraction/average/expansion model, which runs from the
//! bottom (oldest) position upwards and draws `u` from a Gamma truncated to
//! the interval of the current regime.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardUniform};
use statrs::function::gamma::{checked_gamma_lr, checked_gamma_ur, ln_gamma};

use crate::data::FixedHyperparams;
use crate::error::{Error, Result};

/// Accumulation regime of one increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Contraction,
    Average,
    Expansion,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Contraction, Regime::Average, Regime::Expansion];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Regime {
        Regime::ALL[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Regime::Contraction => 'C',
            Regime::Average => 'A',
            Regime::Expansion => 'E',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaTransitionParams {
    pub alpha: f64,
    pub beta: f64,
    pub depth_scale: f64,
}

impl GammaTransitionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("depth_scale", self.depth_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaeTransitionParams {
    /// `phi[from][to]`, rows indexed by the regime of the deeper increment.
    pub phi: [[f64; 3]; 3],
    pub depth_scale: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
}

impl CaeTransitionParams {
    pub fn uniform(depth_scale: f64, gamma_shape: f64, gamma_rate: f64) -> Self {
        Self {
            phi: [[1.0 / 3.0; 3]; 3],
            depth_scale,
            gamma_shape,
            gamma_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.phi {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid("transition matrix entries must be >= 0"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "transition matrix row sums to {s}, expected 1"
                )));
            }
        }
        for (name, v) in [
            ("depth_scale", self.depth_scale),
            ("gamma_shape", self.gamma_shape),
            ("gamma_rate", self.gamma_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Log density of `Gamma(shape, rate)` at `u`; `-inf` outside `u > 0`.
pub fn gamma_logpdf(u: f64, shape: f64, rate: f64) -> f64 {
    if !(u > 0.0) || !u.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * u.ln() - rate * u
}

/// Density of `z` given `z_prev` when the accumulation ratio
/// `(z - z_prev) / (r (x - x_prev))` is `Gamma(alpha, beta)`.
pub fn gamma_log_transition(
    z_prev: f64,
    z: f64,
    x_prev: f64,
    x: f64,
    params: &GammaTransitionParams,
) -> f64 {
    let scale = params.depth_scale * (x - x_prev);
    if !(z > z_prev) || !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    gamma_logpdf((z - z_prev) / scale, params.alpha, params.beta) - scale.ln()
}

/// Log prior of the Gamma transition parameters, up to a constant.
pub fn gamma_prior_logpdf(alpha: f64, beta: f64, fixed: &FixedHyperparams) -> f64 {
    if !(alpha > 0.0 && beta > 0.0) {
        return f64::NEG_INFINITY;
    }
    (alpha - 1.0) * fixed.p_bar.ln() - fixed.r_bar * ln_gamma(alpha)
        + alpha * fixed.s_bar * beta.ln()
        - beta * fixed.q_bar
}

/// `ln P(lo < U < hi)` for `U ~ Gamma(shape, rate)`.
pub fn gamma_interval_log_mass(shape: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = (rate * lo.max(0.0), rate * hi);
    let lower_a = if a > 0.0 { reg_lower(shape, a) } else { 0.0 };
    let mass = if lower_a > 0.5 {
        let upper_a = reg_upper(shape, a);
        let upper_b = if b.is_finite() { reg_upper(shape, b) } else { 0.0 };
        upper_a - upper_b
    } else {
        let lower_b = if b.is_finite() { reg_lower(shape, b) } else { 1.0 };
        lower_b - lower_a
    };
    if mass > 0.0 {
        mass.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Backward regime-switching transition:
/// `ln phi[w_next][w] + ln TruncGamma(u | I_w) - ln(r Δx)` with
/// `u = (z_next - z) / (r (x_next - x))`.
#[allow(clippy::too_many_arguments)]
pub fn cae_log_transition(
    z_next: f64,
    w_next: Regime,
    z: f64,
    w: Regime,
    x: f64,
    x_next: f64,
    params: &CaeTransitionParams,
    fixed: &FixedHyperparams,
) -> f64 {
    let scale = params.depth_scale * (x_next - x);
    if !(z_next > z) || !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let u = (z_next - z) / scale;
    if fixed.regime_of(u) != Some(w) {
        return f64::NEG_INFINITY;
    }
    let (lo, hi) = fixed.regime_interval(w);
    params.phi[w_next.index()][w.index()].ln()
        + gamma_logpdf(u, params.gamma_shape, params.gamma_rate)
        - gamma_interval_log_mass(params.gamma_shape, params.gamma_rate, lo, hi)
        - scale.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`, total over `x >= 0`.
pub(crate) fn reg_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        checked_gamma_lr(a, x).unwrap_or(f64::NAN)
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`, total over `x >= 0`.
pub(crate) fn reg_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x == f64::INFINITY {
        0.0
    } else {
        checked_gamma_ur(a, x).unwrap_or(f64::NAN)
    }
}

/// Solves `P(shape, x) = p` (or `Q(shape, x) = p` when `upper`) for `x`
/// inside `[lo, hi]` by safeguarded Newton iteration.
fn invert_incomplete_gamma(shape: f64, p: f64, upper: bool, mut lo: f64, mut hi: f64) -> f64 {
    let f = |x: f64| {
        if upper {
            p - reg_upper(shape, x)
        } else {
            reg_lower(shape, x) - p
        }
    };
    if !hi.is_finite() {
        hi = (lo.max(shape)).max(1.0) * 2.0;
        while f(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
    }
    let ln_g = ln_gamma(shape);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = ((shape - 1.0) * x.ln() - x - ln_g).exp();
        let newton = x - fx / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    x
}

/// Draws `U ~ Gamma(shape, rate)` conditioned on `lo <= U < hi` by inversion.
/// The result always lies in `[lo, hi)` (and in `(0, hi)` when `lo == 0`).
pub fn sample_truncated_gamma<R: Rng + ?Sized>(
    rng: &mut R,
    shape: f64,
    rate: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let (a, b) = (rate * lo.max(0.0), rate * hi);
    let v: f64 = rng.sample(StandardUniform);
    let lower_a = if a > 0.0 { reg_lower(shape, a) } else { 0.0 };
    let x = if lower_a > 0.5 {
        let qa = reg_upper(shape, a);
        let qb = if b.is_finite() { reg_upper(shape, b) } else { 0.0 };
        if !(qa - qb > 0.0) {
            // no representable mass: fall back to the exponential tail at `a`
            let e: f64 = -(1.0 - v).ln();
            (a + e).min(if b.is_finite() { b } else { f64::INFINITY })
        } else {
            invert_incomplete_gamma(shape, qa - v * (qa - qb), true, a, b)
        }
    } else {
        let pb = if b.is_finite() { reg_lower(shape, b) } else { 1.0 };
        invert_incomplete_gamma(shape, lower_a + v * (pb - lower_a), false, a, b)
    };
    let mut u = x / rate;
    if u < lo {
        u = lo;
    }
    if u >= hi {
        u = f64::from_bits(hi.to_bits() - 1);
    }
    if !(u > 0.0) {
        u = f64::MIN_POSITIVE.max(lo);
    }
    u
}

/// Direction in which a transition chain walks through the positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainDirection {
    /// Starts at the first (shallowest) position; ages increase along the chain.
    TopDown,
    /// Starts at the last (deepest) position; ages decrease along the chain.
    BottomUp,
}

/// A transition model with its constants precomputed for repeated evaluation.
#[derive(Debug, Clone)]
pub enum PreparedTransition {
    Gamma {
        params: GammaTransitionParams,
        log_norm: f64,
    },
    Cae {
        params: CaeTransitionParams,
        ln_phi: [[f64; 3]; 3],
        log_norm: f64,
        region_log_mass: [f64; 3],
        bounds: [(f64, f64); 3],
        fixed: FixedHyperparams,
    },
}

impl PreparedTransition {
    pub fn gamma(params: GammaTransitionParams) -> Self {
        PreparedTransition::Gamma {
            params,
            log_norm: params.alpha * params.beta.ln() - ln_gamma(params.alpha),
        }
    }

    pub fn cae(params: CaeTransitionParams, fixed: &FixedHyperparams) -> Self {
        let mut ln_phi = [[0.0; 3]; 3];
        for (i, row) in params.phi.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                ln_phi[i][j] = p.ln();
            }
        }
        let bounds = Regime::ALL.map(|w| fixed.regime_interval(w));
        let region_log_mass = bounds.map(|(lo, hi)| {
            gamma_interval_log_mass(params.gamma_shape, params.gamma_rate, lo, hi)
        });
        PreparedTransition::Cae {
            params,
            ln_phi,
            log_norm: params.gamma_shape * params.gamma_rate.ln() - ln_gamma(params.gamma_shape),
            region_log_mass,
            bounds,
            fixed: fixed.clone(),
        }
    }

    pub fn direction(&self) -> ChainDirection {
        match self {
            PreparedTransition::Gamma { .. } => ChainDirection::TopDown,
            PreparedTransition::Cae { .. } => ChainDirection::BottomUp,
        }
    }

    pub fn n_regimes(&self) -> usize {
        match self {
            PreparedTransition::Gamma { .. } => 1,
            PreparedTransition::Cae { .. } => 3,
        }
    }

    pub fn depth_scale(&self) -> f64 {
        match self {
            PreparedTransition::Gamma { params, .. } => params.depth_scale,
            PreparedTransition::Cae { params, .. } => params.depth_scale,
        }
    }

    fn shape_rate(&self) -> (f64, f64) {
        match self {
            PreparedTransition::Gamma { params, .. } => (params.alpha, params.beta),
            PreparedTransition::Cae { params, .. } => (params.gamma_shape, params.gamma_rate),
        }
    }

    /// Log probability of switching regime `from -> to` (0 without regimes).
    #[inline]
    pub fn ln_switch(&self, from: usize, to: usize) -> f64 {
        match self {
            PreparedTransition::Gamma { .. } => 0.0,
            PreparedTransition::Cae { ln_phi, .. } => ln_phi[from][to],
        }
    }

    /// Log density of an increment given the regime it is drawn in.
    #[inline]
    pub fn log_increment(&self, dz: f64, dx: f64, to: usize) -> f64 {
        if !(dz > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self {
            PreparedTransition::Gamma { params, log_norm } => {
                let scale = params.depth_scale * dx;
                let u = dz / scale;
                log_norm + (params.alpha - 1.0) * u.ln() - params.beta * u - scale.ln()
            }
            PreparedTransition::Cae {
                params,
                log_norm,
                region_log_mass,
                bounds,
                ..
            } => {
                let scale = params.depth_scale * dx;
                let u = dz / scale;
                let (lo, hi) = bounds[to];
                let inside = if to == 0 { u > lo && u < hi } else { u >= lo && u < hi };
                if !inside {
                    return f64::NEG_INFINITY;
                }
                log_norm + (params.gamma_shape - 1.0) * u.ln() - params.gamma_rate * u
                    - region_log_mass[to]
                    - scale.ln()
            }
        }
    }

    /// Log density of an age increment `dz` (positive in the direction of
    /// the chain) over a depth increment `dx > 0`, moving from regime index
    /// `from` to `to`.
    #[inline]
    pub fn log_step(&self, dz: f64, dx: f64, from: usize, to: usize) -> f64 {
        self.ln_switch(from, to) + self.log_increment(dz, dx, to)
    }

    /// Regime implied by an increment, for models whose regime is a function of it.
    pub fn regime_of(&self, dz: f64, dx: f64) -> Option<usize> {
        match self {
            PreparedTransition::Gamma { .. } => Some(0),
            PreparedTransition::Cae { params, fixed, .. } => fixed
                .regime_of(dz / (params.depth_scale * dx))
                .map(Regime::index),
        }
    }

    /// Draws the next regime index and a positive increment (in the chain direction).
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R, dx: f64, from: usize) -> (usize, f64) {
        let scale = self.depth_scale() * dx;
        match self {
            PreparedTransition::Gamma { params, .. } => {
                let g = Gamma::new(params.alpha, 1.0 / params.beta).expect("valid gamma");
                (0, g.sample(rng) * scale)
            }
            PreparedTransition::Cae {
                params, bounds, ..
            } => {
                let v: f64 = rng.sample(StandardUniform);
                let row = &params.phi[from];
                let mut acc = 0.0;
                let mut to = 2;
                for (j, &p) in row.iter().enumerate() {
                    acc += p;
                    if v < acc {
                        to = j;
                        break;
                    }
                }
                let (lo, hi) = bounds[to];
                let u = sample_truncated_gamma(rng, params.gamma_shape, params.gamma_rate, lo, hi);
                (to, u * scale)
            }
        }
    }

    /// Increment range `[min, max]` holding all but `tail` of the ratio's
    /// probability mass, scaled to an age increment over `dx`.
    pub fn increment_range(&self, dx: f64, tail: f64) -> (f64, f64) {
        let (shape, rate) = self.shape_rate();
        let scale = self.depth_scale() * dx;
        let lo = invert_incomplete_gamma(shape, tail, false, 0.0, f64::INFINITY) / rate;
        let hi = invert_incomplete_gamma(shape, tail, true, 0.0, f64::INFINITY) / rate;
        (lo * scale, hi * scale)
    }
}
