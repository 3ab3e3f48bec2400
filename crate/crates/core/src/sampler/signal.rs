use super::{sample_paths, SamplerOptions, StateSpaceModel};
use crate::data::{AlignmentSample, CalibrationCurve, ProxyDatum, Signal};
use crate::emission::PreparedEmission;
use crate::error::{Error, Result};
use crate::gpr::Profile;
use crate::transition::{ChainDirection, PreparedTransition, Regime};

const TAIL: f64 = 1e-9;

/// Prior on the age of the position where the chain starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialSupport {
    /// Uniform over the whole profile domain.
    Domain,
    /// Uniform over an explicit age interval.
    Interval(f64, f64),
}

/// Start-age prior from the radiocarbon datum nearest the chain's starting
/// position: the ages whose calibrated mean lies within six standard
/// deviations of the datum, widened by the prior increment range over the
/// depth gap. The whole domain when the signal has no usable datum.
pub fn radiocarbon_initial_support(
    signal: &Signal,
    curve: &CalibrationCurve,
    transition: &PreparedTransition,
) -> InitialSupport {
    let x = signal.positions();
    let start = match transition.direction() {
        ChainDirection::TopDown => 0,
        ChainDirection::BottomUp => x.len() - 1,
    };
    let nearest = signal
        .observations()
        .iter()
        .enumerate()
        .flat_map(|(n, data)| data.iter().map(move |d| (n, *d)))
        .filter_map(|(n, d)| match d {
            ProxyDatum::Radiocarbon {
                value,
                reservoir_offset,
                extra_variance,
            } => Some((n, value - reservoir_offset, extra_variance)),
            _ => None,
        })
        .min_by(|a, b| (x[a.0] - x[start]).abs().total_cmp(&(x[b.0] - x[start]).abs()));
    let Some((n, y, extra)) = nearest else {
        return InitialSupport::Domain;
    };
    let (lo, hi) = curve.range();
    let steps = 4000;
    let mut window: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let z = lo + (hi - lo) * i as f64 / steps as f64;
        let (m, sd) = curve.at(z).expect("inside the curve");
        if (y - m).abs() <= 6.0 * (sd * sd + extra).sqrt() {
            window = Some(window.map_or((z, z), |(a, _)| (a, z)));
        }
    }
    let Some((a, b)) = window else {
        return InitialSupport::Domain;
    };
    let gap = (x[start] - x[n]).abs();
    if gap == 0.0 {
        return InitialSupport::Interval(a, b);
    }
    let (inc_lo, inc_hi) = transition.increment_range(gap, TAIL);
    match transition.direction() {
        ChainDirection::TopDown => InitialSupport::Interval(a - inc_hi, b - inc_lo),
        ChainDirection::BottomUp => InitialSupport::Interval(a + inc_lo, b + inc_hi),
    }
}

/// A signal's alignment posterior in chain form. Chain step `t` is position
/// `order[t]`; chain values are ages, negated when the chain starts at the
/// deepest position so that they always increase along the chain.
pub struct SignalModel<'a> {
    order: Vec<usize>,
    dx: Vec<f64>,
    sign: f64,
    transition: PreparedTransition,
    emission: PreparedEmission,
    profile: &'a Profile,
    curve: Option<&'a CalibrationCurve>,
    domain: (f64, f64),
    initial: (f64, f64),
    log_initial_density: f64,
}

impl<'a> SignalModel<'a> {
    pub fn new(
        signal: &Signal,
        transition: PreparedTransition,
        emission: PreparedEmission,
        profile: &'a Profile,
        curve: Option<&'a CalibrationCurve>,
        initial: InitialSupport,
    ) -> Result<Self> {
        let n = signal.len();
        if emission.len() != n {
            return Err(Error::invalid("emission data do not match the signal"));
        }
        let x = signal.positions();
        let (order, sign): (Vec<usize>, f64) = match transition.direction() {
            ChainDirection::TopDown => ((0..n).collect(), 1.0),
            ChainDirection::BottomUp => ((0..n).rev().collect(), -1.0),
        };
        let dx = (0..n)
            .map(|t| if t == 0 { 0.0 } else { (x[order[t]] - x[order[t - 1]]).abs() })
            .collect();
        let (a, b) = profile.domain();
        let age_initial = match initial {
            InitialSupport::Domain => (a, b),
            InitialSupport::Interval(lo, hi) => (lo.max(a), hi.min(b)),
        };
        if !(age_initial.1 > age_initial.0) {
            return Err(Error::invalid(format!(
                "initial age interval [{}, {}] misses the profile domain [{a}, {b}]",
                age_initial.0, age_initial.1
            )));
        }
        let to_chain = |lo: f64, hi: f64| if sign > 0.0 { (lo, hi) } else { (-hi, -lo) };
        let s = transition.n_regimes() as f64;
        Ok(Self {
            order,
            dx,
            sign,
            log_initial_density: -(age_initial.1 - age_initial.0).ln() - s.ln(),
            transition,
            emission,
            profile,
            curve,
            domain: to_chain(a, b),
            initial: to_chain(age_initial.0, age_initial.1),
        })
    }

    /// Position index of chain step `t`.
    pub fn position_of(&self, t: usize) -> usize {
        self.order[t]
    }

    pub fn to_chain(&self, ages: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&n| self.sign * ages[n]).collect()
    }

    pub fn to_ages(&self, chain: &[f64]) -> Vec<f64> {
        let mut ages = vec![0.0; chain.len()];
        for (t, &c) in chain.iter().enumerate() {
            ages[self.order[t]] = self.sign * c;
        }
        ages
    }

    pub fn transition(&self) -> &PreparedTransition {
        &self.transition
    }

    pub fn emission(&self) -> &PreparedEmission {
        &self.emission
    }

    /// Draws alignment samples (ages in position order). `bank` holds the
    /// previous round's samples for the proposal.
    pub fn sample(&self, bank: Option<&[AlignmentSample]>, opts: &SamplerOptions, seed: u64) -> Result<Vec<AlignmentSample>> {
        let chain_bank: Option<Vec<Vec<f64>>> = bank.map(|b| b.iter().map(|s| self.to_chain(&s.values)).collect());
        let run = sample_paths(self, chain_bank.as_deref(), opts, seed)?;
        Ok(run
            .paths
            .into_iter()
            .map(|p| {
                let mut s = AlignmentSample::new(self.to_ages(&p.values), p.log_posterior);
                if self.transition.n_regimes() > 1 {
                    let mut regimes = vec![Regime::Average; p.regimes.len()];
                    for (t, &w) in p.regimes.iter().enumerate() {
                        regimes[self.order[t]] = Regime::from_index(w);
                    }
                    s.regimes = regimes;
                }
                s
            })
            .collect())
    }
}

impl StateSpaceModel for SignalModel<'_> {
    fn len(&self) -> usize {
        self.order.len()
    }

    fn n_regimes(&self) -> usize {
        self.transition.n_regimes()
    }

    fn domain(&self) -> (f64, f64) {
        self.domain
    }

    fn initial_support(&self) -> (f64, f64) {
        self.initial
    }

    fn log_initial(&self, z: f64, _w: usize) -> f64 {
        if z >= self.initial.0 && z <= self.initial.1 {
            self.log_initial_density
        } else {
            f64::NEG_INFINITY
        }
    }

    #[inline]
    fn log_switch(&self, _t: usize, from: usize, to: usize) -> f64 {
        self.transition.ln_switch(from, to)
    }

    #[inline]
    fn log_kernel(&self, t: usize, z_prev: f64, z: f64, to: usize) -> f64 {
        self.transition.log_increment(z - z_prev, self.dx[t], to)
    }

    #[inline]
    fn log_emission(&self, t: usize, z: f64) -> f64 {
        self.emission
            .log_emission(self.order[t], self.sign * z, self.profile, self.curve)
    }

    fn regime_of(&self, t: usize, z_prev: f64, z: f64) -> Option<usize> {
        self.transition.regime_of(z - z_prev, self.dx[t])
    }

    fn increment_range(&self, t: usize) -> (f64, f64) {
        self.transition.increment_range(self.dx[t], TAIL)
    }
}
