//! Synthetic signals with known alignments: the four toy examples and sets
//! of homogeneous cores sharing one latent curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::data::Signal;
use crate::error::{Error, Result};

/// Noise-free curve every simulated signal follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentCurve {
    Cosine { period: f64, amplitude: f64 },
    /// A fixed sum of incommensurate sinusoids.
    Wavy,
}

impl LatentCurve {
    pub fn eval(&self, z: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            LatentCurve::Cosine { period, amplitude } => amplitude * (TAU * z / period).cos(),
            LatentCurve::Wavy => {
                (TAU * z / 5.0).sin() + 0.6 * (TAU * z / 2.3 + 1.0).sin() + 0.3 * (TAU * z / 1.3 + 2.0).cos()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedSignal {
    pub signal: Signal,
    /// True age of every position.
    pub ages: Vec<f64>,
    pub outliers: Vec<bool>,
    /// Noise variance each value was drawn with (in profile units).
    pub noise_var: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub curve: LatentCurve,
    pub domain: (f64, f64),
    pub signals: Vec<SimulatedSignal>,
}

impl Dataset {
    pub fn signals(&self) -> Vec<Signal> {
        self.signals.iter().map(|s| s.signal.clone()).collect()
    }
}

/// Knobs of the toy generators.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub example: u8,
    /// Spacing of successive picks from the curve.
    pub interval: f64,
    pub domain: (f64, f64),
    pub n_signals: usize,
    /// Noise standard deviation (at the low end of the domain for example 3).
    pub noise_sd: f64,
    /// Noise standard deviation at the high end of the domain (example 3).
    pub noise_sd_high: f64,
    pub outlier_fraction: f64,
    /// Outlier displacement in noise standard deviations.
    pub outlier_sd: f64,
}

impl ToySpec {
    /// Defaults of each example.
    ///
    /// 1. Two signals taking alternate picks at `interval` from a cosine, so
    ///    each is sampled every `2·interval`, offset by `interval`.
    /// 2. Three signals with jittered accumulation and 5% outliers at 5 sd.
    /// 3. Five signals whose noise grows from 0.05 to 0.4 sd across the domain.
    /// 4. Three signals covering overlapping halves of the domain.
    pub fn example(id: u8) -> Result<Self> {
        let base = ToySpec {
            example: id,
            interval: 0.2,
            domain: (0.0, 10.0),
            n_signals: 3,
            noise_sd: 0.05,
            noise_sd_high: 0.05,
            outlier_fraction: 0.0,
            outlier_sd: 5.0,
        };
        match id {
            1 => Ok(ToySpec {
                domain: (0.0, 6.0),
                n_signals: 2,
                noise_sd: 0.02,
                noise_sd_high: 0.02,
                ..base
            }),
            2 => Ok(ToySpec {
                outlier_fraction: 0.05,
                ..base
            }),
            3 => Ok(ToySpec {
                n_signals: 5,
                noise_sd_high: 0.4,
                ..base
            }),
            4 => Ok(base),
            _ => Err(Error::invalid(format!("unknown example {id}; expected 1-4"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.example) {
            return Err(Error::invalid(format!("unknown example {}", self.example)));
        }
        if !(self.interval > 0.0) || !(self.domain.1 > self.domain.0) || self.n_signals == 0 {
            return Err(Error::invalid("toy interval, domain and signal count must be positive"));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd_high > 0.0) {
            return Err(Error::invalid("toy noise levels must be positive"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::invalid("outlier fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Noise standard deviation at age `z`.
    pub fn noise_at(&self, z: f64) -> f64 {
        let f = ((z - self.domain.0) / (self.domain.1 - self.domain.0)).clamp(0.0, 1.0);
        self.noise_sd + (self.noise_sd_high - self.noise_sd) * f
    }
}

/// Ages from `lo` to `hi` at `n` positions with Gamma(`shape`, `shape`)
/// accumulation ratios, rescaled to end exactly at `hi`.
pub fn jittered_ages<R: Rng + ?Sized>(lo: f64, hi: f64, n: usize, shape: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0 / shape).expect("positive shape");
    let inc: Vec<f64> = (1..n).map(|_| g.sample(rng)).collect();
    let total: f64 = inc.iter().sum();
    let mut ages = vec![lo];
    let mut acc = 0.0;
    for d in inc {
        acc += d;
        ages.push(lo + (hi - lo) * acc / total);
    }
    ages
}

/// Draws values `scale·f(z) + shift + noise` at the given ages; a fraction
/// of points is displaced by `outlier_sd` noise sds in a random direction.
#[allow(clippy::too_many_arguments)]
pub fn observe<R: Rng + ?Sized>(
    id: &str,
    curve: LatentCurve,
    ages: Vec<f64>,
    depths: Vec<f64>,
    noise_sd: impl Fn(f64) -> f64,
    shift: f64,
    scale: f64,
    outlier_fraction: f64,
    outlier_sd: f64,
    rng: &mut R,
) -> Result<SimulatedSignal> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(ages.len());
    let mut outliers = Vec::with_capacity(ages.len());
    let mut noise_var = Vec::with_capacity(ages.len());
    for &z in &ages {
        let sd = noise_sd(z);
        let mut e = sd * std.sample(rng);
        let out = outlier_fraction > 0.0 && rng.random::<f64>() < outlier_fraction;
        if out {
            e = if rng.random::<bool>() { outlier_sd * sd } else { -outlier_sd * sd };
        }
        values.push(scale * (curve.eval(z) + e) + shift);
        outliers.push(out);
        noise_var.push(sd * sd);
    }
    Ok(SimulatedSignal {
        signal: Signal::from_values(id, depths, &values)?,
        ages,
        outliers,
        noise_var,
        shift,
        scale,
    })
}

/// Generates the signals of a toy example.
pub fn simulate(spec: &ToySpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.domain;
    let mut signals = Vec::new();
    let curve = match spec.example {
        1 => LatentCurve::Cosine {
            period: 4.0,
            amplitude: 1.0,
        },
        _ => LatentCurve::Wavy,
    };
    match spec.example {
        1 => {
            let n = ((hi - lo) / spec.interval + 1e-9).floor() as usize + 1;
            let picks: Vec<f64> = (0..n).map(|k| lo + k as f64 * spec.interval).collect();
            for m in 0..spec.n_signals {
                let ages: Vec<f64> = picks.iter().skip(m).step_by(spec.n_signals).copied().collect();
                let depths = ages.clone();
                signals.push(observe(
                    &format!("toy{}", m + 1),
                    curve,
                    ages,
                    depths,
                    |z| spec.noise_at(z),
                    0.0,
                    1.0,
                    spec.outlier_fraction,
                    spec.outlier_sd,
                    &mut rng,
                )?);
            }
        }
        2 | 3 => {
            let n = ((hi - lo) / spec.interval).round() as usize + 1;
            for m in 0..spec.n_signals {
                let ages = jittered_ages(lo, hi, n, 20.0, &mut rng);
                let depths = (0..n).map(|i| i as f64 * spec.interval).collect();
                signals.push(observe(
                    &format!("toy{}", m + 1),
                    curve,
                    ages,
                    depths,
                    |z| spec.noise_at(z),
                    0.0,
                    1.0,
                    spec.outlier_fraction,
                    spec.outlier_sd,
                    &mut rng,
                )?);
            }
        }
        _ => {
            // halves of the domain starting at evenly spaced offsets
            let width = 0.5 * (hi - lo);
            let k = spec.n_signals;
            for m in 0..k {
                let start = if k == 1 { lo } else { lo + (hi - lo - width) * m as f64 / (k - 1) as f64 };
                let n = (width / spec.interval).round() as usize + 1;
                let ages = jittered_ages(start, start + width, n, 20.0, &mut rng);
                let depths = (0..n).map(|i| i as f64 * spec.interval).collect();
                signals.push(observe(
                    &format!("toy{}", m + 1),
                    curve,
                    ages,
                    depths,
                    |z| spec.noise_at(z),
                    0.0,
                    1.0,
                    spec.outlier_fraction,
                    spec.outlier_sd,
                    &mut rng,
                )?);
            }
        }
    }
    Ok(Dataset {
        curve,
        domain: spec.domain,
        signals,
    })
}

/// Knobs of a homogeneous-core set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreSpec {
    pub n_cores: usize,
    pub points: usize,
    pub domain: (f64, f64),
    pub noise_sd: f64,
    /// Standard deviation of the per-core shifts.
    pub shift_sd: f64,
    pub outlier_fraction: f64,
    pub outlier_sd: f64,
}

impl Default for CoreSpec {
    fn default() -> Self {
        Self {
            n_cores: 5,
            points: 51,
            domain: (0.0, 10.0),
            noise_sd: 0.1,
            shift_sd: 0.0,
            outlier_fraction: 0.0,
            outlier_sd: 5.0,
        }
    }
}

/// Cores sampling the same latent curve with their own accumulation
/// histories, depth spacing 1/5 of the mean age spacing.
pub fn simulate_cores(spec: &CoreSpec, seed: u64) -> Result<Dataset> {
    if spec.n_cores == 0 || spec.points < 2 || !(spec.domain.1 > spec.domain.0) || !(spec.noise_sd > 0.0) {
        return Err(Error::invalid("core set needs cores, two points, a domain and positive noise"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.domain;
    let step = (hi - lo) / (spec.points - 1) as f64;
    let shift = Normal::new(0.0, spec.shift_sd.max(1e-300)).expect("finite sd");
    let mut signals = Vec::new();
    for m in 0..spec.n_cores {
        let ages = jittered_ages(lo, hi, spec.points, 20.0, &mut rng);
        let depths = (0..spec.points).map(|i| 0.2 * step * i as f64).collect();
        let h = if spec.shift_sd > 0.0 { shift.sample(&mut rng) } else { 0.0 };
        signals.push(observe(
            &format!("core{}", m + 1),
            LatentCurve::Wavy,
            ages,
            depths,
            |_| spec.noise_sd,
            h,
            1.0,
            spec.outlier_fraction,
            spec.outlier_sd,
            &mut rng,
        )?);
    }
    Ok(Dataset {
        curve: LatentCurve::Wavy,
        domain: spec.domain,
        signals,
    })
}
