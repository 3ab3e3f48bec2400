//! Observation likelihoods: Student-t emissions of the synchronizing proxy
//! around the profile and of radiocarbon ages around the calibration curve.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::data::{CalibrationCurve, FixedHyperparams, ProxyDatum};
use crate::error::{Error, Result};
use crate::gpr::Profile;

/// Shift `h` and scale `σ` mapping profile values onto a signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionParams {
    pub shift: f64,
    pub scale: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl EmissionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.shift.is_finite() {
            return Err(Error::invalid(format!(
                "emission scale must be positive and shift finite, got h={} sigma={}",
                self.shift, self.scale
            )));
        }
        Ok(())
    }
}

/// Log normalizing constant of a unit-scale Student t with `dof` degrees of freedom.
pub fn t_log_norm(dof: f64) -> f64 {
    ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI).ln()
}

/// Location-scale Student-t log density.
pub fn t_logpdf(y: f64, loc: f64, scale: f64, dof: f64) -> f64 {
    let e = (y - loc) / scale;
    t_log_norm(dof) - scale.ln() - 0.5 * (dof + 1.0) * (e * e / dof).ln_1p()
}

/// Student t with its constant cached.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    pub dof: f64,
    log_norm: f64,
}

impl StudentT {
    pub fn new(dof: f64) -> Self {
        Self {
            dof,
            log_norm: t_log_norm(dof),
        }
    }

    /// Log density of `y` with location `loc` and squared scale `scale2`.
    #[inline]
    pub fn logpdf_var(&self, y: f64, loc: f64, scale2: f64) -> f64 {
        let d = y - loc;
        self.log_norm - 0.5 * scale2.ln() - 0.5 * (self.dof + 1.0) * (d * d / (scale2 * self.dof)).ln_1p()
    }
}

/// `T_{2a₂}(y | σ μ̄(z) + h, sqrt((b₂/a₂) σ² ν̄(z)))`.
pub fn d18o_log_emission(
    y: f64,
    z: f64,
    params: &EmissionParams,
    profile: &Profile,
    fixed: &FixedHyperparams,
) -> Result<f64> {
    let (m, v) = profile.eval(z)?;
    let s = params.scale;
    Ok(t_logpdf(
        y,
        s * m + params.shift,
        (fixed.b2 / fixed.a2 * s * s * v).sqrt(),
        2.0 * fixed.a2,
    ))
}

/// `T_{2a₁}(y | μ_C(z) + ϱ, sqrt((b₁/a₁)(σ_C(z)² + ς)))`. Errors outside
/// the curve's calendar range.
pub fn c14_log_emission(
    y: f64,
    reservoir_offset: f64,
    extra_variance: f64,
    z: f64,
    curve: &CalibrationCurve,
    fixed: &FixedHyperparams,
) -> Result<f64> {
    let (m, s) = curve.at(z)?;
    Ok(t_logpdf(
        y,
        m + reservoir_offset,
        (fixed.b1 / fixed.a1 * (s * s + extra_variance)).sqrt(),
        2.0 * fixed.a1,
    ))
}

/// Sum of the emissions of every datum at one position. Radiocarbon data
/// outside the calibration range (or with no curve) are skipped with a
/// warning; a δ¹⁸O datum outside the profile is an error.
pub fn dual_log_emission(
    data: &[ProxyDatum],
    z: f64,
    params: &EmissionParams,
    profile: &Profile,
    curve: Option<&CalibrationCurve>,
    fixed: &FixedHyperparams,
) -> Result<f64> {
    let mut total = 0.0;
    for d in data {
        match *d {
            ProxyDatum::D18O { value } => total += d18o_log_emission(value, z, params, profile, fixed)?,
            ProxyDatum::Radiocarbon {
                value,
                reservoir_offset,
                extra_variance,
            } => match curve.map(|c| c14_log_emission(value, reservoir_offset, extra_variance, z, c, fixed)) {
                Some(Ok(v)) => total += v,
                Some(Err(e)) => log::warn!("radiocarbon datum {value} ignored: {e}"),
                None => log::warn!("radiocarbon datum {value} ignored: no calibration curve"),
            },
        }
    }
    Ok(total)
}

/// `−½((h − h̲)/σ̲)² − 2(ᾱ+1) log σ − β̄/σ²`; with `learn_scale == false`
/// only the shift term applies.
pub fn emission_prior_logpdf(params: &EmissionParams, fixed: &FixedHyperparams, learn_scale: bool) -> f64 {
    let e = (params.shift - fixed.h_bar) / fixed.sigma_bar;
    let mut lp = -0.5 * e * e;
    if learn_scale {
        let s = params.scale;
        lp += -2.0 * (fixed.alpha_bar + 1.0) * s.ln() - fixed.beta_bar / (s * s);
    }
    lp
}

/// Per-position data of one signal arranged for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedEmission {
    d18o: Vec<Vec<f64>>,
    /// `(value − ϱ, ς)` per radiocarbon datum.
    c14: Vec<Vec<(f64, f64)>>,
    params: EmissionParams,
    d18o_t: StudentT,
    c14_t: StudentT,
    d18o_ratio: f64,
    c14_ratio: f64,
}

impl PreparedEmission {
    pub fn new(
        observations: &[Vec<ProxyDatum>],
        params: EmissionParams,
        curve: Option<&CalibrationCurve>,
        fixed: &FixedHyperparams,
    ) -> Self {
        let mut d18o = Vec::with_capacity(observations.len());
        let mut c14 = Vec::with_capacity(observations.len());
        let mut dropped = 0;
        for data in observations {
            let mut d = Vec::new();
            let mut c = Vec::new();
            for datum in data {
                match *datum {
                    ProxyDatum::D18O { value } => d.push(value),
                    ProxyDatum::Radiocarbon {
                        value,
                        reservoir_offset,
                        extra_variance,
                    } => {
                        if curve.is_some() {
                            c.push((value - reservoir_offset, extra_variance));
                        } else {
                            dropped += 1;
                        }
                    }
                }
            }
            d18o.push(d);
            c14.push(c);
        }
        if dropped > 0 {
            log::warn!("{dropped} radiocarbon data ignored: no calibration curve supplied");
        }
        Self {
            d18o,
            c14,
            params,
            d18o_t: StudentT::new(2.0 * fixed.a2),
            c14_t: StudentT::new(2.0 * fixed.a1),
            d18o_ratio: fixed.b2 / fixed.a2,
            c14_ratio: fixed.b1 / fixed.a1,
        }
    }

    pub fn params(&self) -> EmissionParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.d18o.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d18o.is_empty()
    }

    pub fn d18o_at(&self, n: usize) -> &[f64] {
        &self.d18o[n]
    }

    pub fn c14_at(&self, n: usize) -> &[(f64, f64)] {
        &self.c14[n]
    }

    /// Log emission at position `n`; `−∞` when `z` is outside the profile.
    /// Radiocarbon data whose age falls outside the curve contribute nothing.
    #[inline]
    pub fn log_emission(&self, n: usize, z: f64, profile: &Profile, curve: Option<&CalibrationCurve>) -> f64 {
        let mut total = 0.0;
        let d = &self.d18o[n];
        if !d.is_empty() {
            if !profile.contains(z) {
                return f64::NEG_INFINITY;
            }
            let (m, v) = profile.eval_unchecked(z);
            let s = self.params.scale;
            let loc = s * m + self.params.shift;
            let s2 = self.d18o_ratio * s * s * v;
            for &y in d {
                total += self.d18o_t.logpdf_var(y, loc, s2);
            }
        }
        let c = &self.c14[n];
        if let (false, Some(curve)) = (c.is_empty(), curve) {
            if let Ok((m, sd)) = curve.at(z) {
                for &(y, extra) in c {
                    total += self.c14_t.logpdf_var(y, m, self.c14_ratio * (sd * sd + extra));
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile(mean: f64, var: f64) -> Profile {
        Profile::new(vec![0.0, 10.0], vec![mean, mean], vec![var, var]).unwrap()
    }

    #[test]
    fn t_tends_to_gaussian() {
        for y in [-1.5, -0.3, 0.0, 1.7] {
            let gauss = -0.5 * (2.0 * PI).ln() - 0.5 * y * y;
            assert!((t_logpdf(y, 0.0, 1.0, 1e6) - gauss).abs() < 1e-6);
        }
    }

    #[test]
    fn t_mode_value() {
        // Γ(3.5)/(Γ(3)√(6π)) with Γ(3.5) = 15√π/8, Γ(3) = 2
        let expected = (15.0 * PI.sqrt() / 8.0 / (2.0 * (6.0 * PI).sqrt())).ln();
        assert!((t_logpdf(1.5, 1.5, 1.0, 6.0) - expected).abs() < 1e-13);
        assert_eq!(t_logpdf(1.0 + 0.7, 1.0, 0.4, 6.0), t_logpdf(1.0 - 0.7, 1.0, 0.4, 6.0));
    }

    #[test]
    fn heavier_tails_than_gaussian() {
        for e in [3.1, 4.0, 6.0] {
            let gauss = -0.5 * (2.0 * PI).ln() - 0.5 * e * e;
            assert!(t_logpdf(e, 0.0, 1.0, 6.0) > gauss);
        }
    }

    #[test]
    fn d18o_uses_scaled_profile() {
        let fixed = FixedHyperparams::default();
        let p = flat_profile(2.0, 0.09);
        let params = EmissionParams { shift: 0.5, scale: 1.3 };
        let mode = 1.3 * 2.0 + 0.5;
        let at_mode = d18o_log_emission(mode, 3.0, &params, &p, &fixed).unwrap();
        for dy in [-0.2, 0.01, 0.3] {
            assert!(d18o_log_emission(mode + dy, 3.0, &params, &p, &fixed).unwrap() < at_mode);
        }
        let scale = (4.0 / 3.0 * 1.3f64.powi(2) * 0.09).sqrt();
        assert!((at_mode - t_logpdf(mode, mode, scale, 6.0)).abs() < 1e-14);
        assert!(matches!(
            d18o_log_emission(mode, 11.0, &params, &p, &fixed),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn radiocarbon_mode_and_reservoir_shift() {
        let fixed = FixedHyperparams::default();
        // mean ¹⁴C age = 1000 × calendar kyr, negligible curve error
        let ages: Vec<f64> = (0..=50).map(|i| i as f64).collect();
        let mean: Vec<f64> = ages.iter().map(|a| 1000.0 * a).collect();
        let curve = CalibrationCurve::new(ages, mean, vec![1e-9; 51]).unwrap();
        let f = |z: f64, off: f64| c14_log_emission(20000.0, off, 1.0, z, &curve, &fixed).unwrap();
        // grid search for the mode of the likelihood in z
        let argmax = |off: f64| {
            (0..=50_000)
                .map(|i| i as f64 * 0.001)
                .max_by(|a, b| f(*a, off).total_cmp(&f(*b, off)))
                .unwrap()
        };
        assert!((argmax(0.0) - 20.0).abs() < 1e-9);
        assert!((argmax(400.0) - 19.6).abs() < 1e-9);
        assert!(c14_log_emission(1.0, 0.0, 1.0, 51.0, &curve, &fixed).is_err());
    }

    #[test]
    fn dual_sums_and_skips() {
        let fixed = FixedHyperparams::default();
        let p = flat_profile(1.0, 0.04);
        let curve = CalibrationCurve::new(vec![0.0, 5.0], vec![0.0, 5000.0], vec![50.0, 50.0]).unwrap();
        let params = EmissionParams::default();
        assert_eq!(dual_log_emission(&[], 2.0, &params, &p, Some(&curve), &fixed).unwrap(), 0.0);
        let d = ProxyDatum::d18o(1.1);
        let c = ProxyDatum::radiocarbon(2100.0, 50.0, 900.0);
        let both = dual_log_emission(&[d, c], 2.0, &params, &p, Some(&curve), &fixed).unwrap();
        let sep = d18o_log_emission(1.1, 2.0, &params, &p, &fixed).unwrap()
            + c14_log_emission(2100.0, 50.0, 900.0, 2.0, &curve, &fixed).unwrap();
        assert!((both - sep).abs() < 1e-12);
        let reversed = dual_log_emission(&[c, d], 2.0, &params, &p, Some(&curve), &fixed).unwrap();
        assert!((both - reversed).abs() < 1e-12);
        let three = dual_log_emission(&[c, c, c], 2.0, &params, &p, Some(&curve), &fixed).unwrap();
        let one = dual_log_emission(&[c], 2.0, &params, &p, Some(&curve), &fixed).unwrap();
        assert!((three - 3.0 * one).abs() < 1e-12);
        // beyond the curve: radiocarbon ignored
        let beyond = dual_log_emission(&[d, c], 7.0, &params, &p, Some(&curve), &fixed).unwrap();
        let alone = d18o_log_emission(1.1, 7.0, &params, &p, &fixed).unwrap();
        assert_eq!(beyond, alone);
    }

    #[test]
    fn prepared_matches_direct() {
        let fixed = FixedHyperparams::default();
        let p = flat_profile(1.0, 0.04);
        let curve = CalibrationCurve::new(vec![0.0, 5.0], vec![0.0, 5000.0], vec![50.0, 60.0]).unwrap();
        let params = EmissionParams { shift: -0.2, scale: 0.8 };
        let obs = vec![
            vec![ProxyDatum::d18o(0.7), ProxyDatum::radiocarbon(1500.0, 100.0, 400.0)],
            vec![ProxyDatum::d18o(0.9)],
        ];
        let prep = PreparedEmission::new(&obs, params, Some(&curve), &fixed);
        for (n, data) in obs.iter().enumerate() {
            for z in [0.5, 1.4, 4.9] {
                let direct = dual_log_emission(data, z, &params, &p, Some(&curve), &fixed).unwrap();
                assert!((prep.log_emission(n, z, &p, Some(&curve)) - direct).abs() < 1e-12);
            }
        }
        assert_eq!(prep.log_emission(0, 11.0, &p, Some(&curve)), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_values() {
        let fixed = FixedHyperparams::default();
        let lp = emission_prior_logpdf(&EmissionParams { shift: 0.0, scale: 1.0 }, &fixed, true);
        assert!((lp + 1.0).abs() < 1e-15);
        let a = emission_prior_logpdf(&EmissionParams { shift: 0.4, scale: 1.0 }, &fixed, false);
        let b = emission_prior_logpdf(&EmissionParams { shift: -0.4, scale: 1.0 }, &fixed, false);
        assert_eq!(a, b);
        // σ-terms peak at sqrt(β̄ / (ᾱ + 1)) for the −2(ᾱ+1) log σ − β̄/σ² form
        let best = (1..20000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|x, y| {
                let f = |s: f64| emission_prior_logpdf(&EmissionParams { shift: 0.0, scale: s }, &fixed, true);
                f(*x).total_cmp(&f(*y))
            })
            .unwrap();
        assert!((best - (1.0f64 / 2.0).sqrt()).abs() < 2e-4);
    }
}
