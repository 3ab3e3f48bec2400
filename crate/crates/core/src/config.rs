//! Run configuration: flat `key = value` text with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::FixedHyperparams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Align,
    Stack,
    Simulate,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "align" => Ok(Mode::Align),
            "stack" => Ok(Mode::Stack),
            "simulate" => Ok(Mode::Simulate),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Align => "align",
            Mode::Stack => "stack",
            Mode::Simulate => "simulate",
        }
    }
}

/// Transition family: Gamma ratios (toy problems) or contraction/average/expansion regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gamma,
    Cae,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(ModelKind::Gamma),
            "cae" => Ok(ModelKind::Cae),
            _ => Err(Error::invalid(format!("unknown model `{s}` (expected gamma or cae)"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gamma => "gamma",
            ModelKind::Cae => "cae",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub particles: usize,
    pub samples: usize,
    pub sweeps: usize,
    pub max_em_iters: usize,
    pub max_outer_iters: usize,
    pub bandwidth: Option<f64>,
    pub pseudo_inputs: Option<usize>,
    pub kernel_variance: Option<f64>,
    pub kernel_lengthscale: Option<f64>,
    /// Depth-to-age scale of the first signal in the initial profile;
    /// defaults to stretching it over the age range.
    pub init_depth_scale: Option<f64>,
    /// Age of the first signal's first position in the initial profile;
    /// defaults to `age_min`.
    pub init_start_age: Option<f64>,
    /// Defaults to true for the regime model, false for the Gamma model.
    pub heteroscedastic: Option<bool>,
    /// Defaults to true for the regime model, false for the Gamma model.
    pub learn_scale: Option<bool>,
    pub model: ModelKind,
    pub cae_alpha: f64,
    pub cae_beta: f64,
    pub fixed: FixedHyperparams,
    pub age_min: Option<f64>,
    pub age_max: Option<f64>,
    pub em_tol: f64,
    pub stack_tol: f64,
    pub tune_samples: usize,
    pub stack: Option<PathBuf>,
    pub signals: Vec<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub out: PathBuf,
    pub example: Option<u8>,
    pub threads: Option<usize>,
    pub toy_interval: Option<f64>,
    pub toy_noise_sd: Option<f64>,
    pub toy_noise_sd_high: Option<f64>,
    pub toy_outlier_fraction: Option<f64>,
    pub toy_signals: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            particles: 500,
            samples: 100,
            sweeps: 200,
            max_em_iters: 20,
            max_outer_iters: 10,
            bandwidth: None,
            pseudo_inputs: None,
            kernel_variance: None,
            kernel_lengthscale: None,
            init_depth_scale: None,
            init_start_age: None,
            heteroscedastic: None,
            learn_scale: None,
            model: ModelKind::Gamma,
            cae_alpha: 4.0,
            cae_beta: 4.0,
            fixed: FixedHyperparams::default(),
            age_min: None,
            age_max: None,
            em_tol: 1e-4,
            stack_tol: 1e-3,
            tune_samples: 16,
            stack: None,
            signals: Vec::new(),
            calibration: None,
            out: PathBuf::from("out"),
            example: None,
            threads: None,
            toy_interval: None,
            toy_noise_sd: None,
            toy_noise_sd_high: None,
            toy_outlier_fraction: None,
            toy_signals: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("config key `{key}`: `{value}` is not a boolean"))),
    }
}

impl RunConfig {
    /// Parses configuration text; unknown keys and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::invalid(format!("config line {}: key `{key}` repeated", i + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.fixed;
        match key {
            "mode" => self.mode = Some(value.parse()?),
            "seed" => self.seed = parse(key, value)?,
            "particles" => self.particles = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "sweeps" => self.sweeps = parse(key, value)?,
            "max_em_iters" => self.max_em_iters = parse(key, value)?,
            "max_outer_iters" => self.max_outer_iters = parse(key, value)?,
            "bandwidth" => self.bandwidth = Some(parse(key, value)?),
            "pseudo_inputs" => self.pseudo_inputs = Some(parse(key, value)?),
            "kernel_variance" => self.kernel_variance = Some(parse(key, value)?),
            "kernel_lengthscale" => self.kernel_lengthscale = Some(parse(key, value)?),
            "init_depth_scale" => self.init_depth_scale = Some(parse(key, value)?),
            "init_start_age" => self.init_start_age = Some(parse(key, value)?),
            "heteroscedastic" => self.heteroscedastic = Some(parse_bool(key, value)?),
            "learn_scale" => self.learn_scale = Some(parse_bool(key, value)?),
            "model" => self.model = value.parse()?,
            "cae_alpha" => self.cae_alpha = parse(key, value)?,
            "cae_beta" => self.cae_beta = parse(key, value)?,
            "a1" => f.a1 = parse(key, value)?,
            "b1" => f.b1 = parse(key, value)?,
            "a2" => f.a2 = parse(key, value)?,
            "b2" => f.b2 = parse(key, value)?,
            "h_bar" => f.h_bar = parse(key, value)?,
            "sigma_bar" => f.sigma_bar = parse(key, value)?,
            "alpha_bar" => f.alpha_bar = parse(key, value)?,
            "beta_bar" => f.beta_bar = parse(key, value)?,
            "p_bar" => f.p_bar = parse(key, value)?,
            "q_bar" => f.q_bar = parse(key, value)?,
            "r_bar" => f.r_bar = parse(key, value)?,
            "s_bar" => f.s_bar = parse(key, value)?,
            "delta" => f.delta = parse(key, value)?,
            "contraction_upper" => f.contraction_upper = parse(key, value)?,
            "expansion_lower" => f.expansion_lower = parse(key, value)?,
            "age_min" => self.age_min = Some(parse(key, value)?),
            "age_max" => self.age_max = Some(parse(key, value)?),
            "em_tol" => self.em_tol = parse(key, value)?,
            "stack_tol" => self.stack_tol = parse(key, value)?,
            "tune_samples" => self.tune_samples = parse(key, value)?,
            "stack" => self.stack = Some(PathBuf::from(value)),
            "signals" => {
                self.signals = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "calibration" => self.calibration = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "example" => self.example = Some(parse(key, value)?),
            "threads" => self.threads = Some(parse(key, value)?),
            "toy_interval" => self.toy_interval = Some(parse(key, value)?),
            "toy_noise_sd" => self.toy_noise_sd = Some(parse(key, value)?),
            "toy_noise_sd_high" => self.toy_noise_sd_high = Some(parse(key, value)?),
            "toy_outlier_fraction" => self.toy_outlier_fraction = Some(parse(key, value)?),
            "toy_signals" => self.toy_signals = Some(parse(key, value)?),
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn heteroscedastic(&self) -> bool {
        self.heteroscedastic.unwrap_or(self.model == ModelKind::Cae)
    }

    pub fn learn_scale(&self) -> bool {
        self.learn_scale.unwrap_or(self.model == ModelKind::Cae)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("particles", self.particles),
            ("samples", self.samples),
            ("tune_samples", self.tune_samples),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.threads == Some(0) || self.pseudo_inputs == Some(0) {
            return Err(Error::invalid("threads and pseudo_inputs must be at least 1"));
        }
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("kernel_variance", self.kernel_variance),
            ("kernel_lengthscale", self.kernel_lengthscale),
            ("init_depth_scale", self.init_depth_scale),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.cae_alpha > 0.0 && self.cae_beta > 0.0) {
            return Err(Error::invalid("cae_alpha and cae_beta must be positive"));
        }
        if !(self.em_tol >= 0.0 && self.stack_tol > 0.0) {
            return Err(Error::invalid("em_tol must be >= 0 and stack_tol > 0"));
        }
        if let (Some(a), Some(b)) = (self.age_min, self.age_max) {
            if !(b > a) {
                return Err(Error::invalid(format!("age_max {b} must exceed age_min {a}")));
            }
        }
        if let Some(e) = self.example {
            if !(1..=4).contains(&e) {
                return Err(Error::invalid(format!("example must be 1-4, got {e}")));
            }
        }
        self.fixed.validate()
    }

    /// Every setting as configuration text, in a fixed key order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_default();
        let f = &self.fixed;
        let paths = |p: &[PathBuf]| p.iter().map(|x| x.display().to_string()).collect::<Vec<_>>().join(",");
        let rows: Vec<(&str, String)> = vec![
            ("mode", opt(self.mode.map(|m| m.name().to_string()))),
            ("seed", self.seed.to_string()),
            ("particles", self.particles.to_string()),
            ("samples", self.samples.to_string()),
            ("sweeps", self.sweeps.to_string()),
            ("max_em_iters", self.max_em_iters.to_string()),
            ("max_outer_iters", self.max_outer_iters.to_string()),
            ("bandwidth", opt(self.bandwidth.map(|v| v.to_string()))),
            ("pseudo_inputs", opt(self.pseudo_inputs.map(|v| v.to_string()))),
            ("kernel_variance", opt(self.kernel_variance.map(|v| v.to_string()))),
            ("kernel_lengthscale", opt(self.kernel_lengthscale.map(|v| v.to_string()))),
            ("init_depth_scale", opt(self.init_depth_scale.map(|v| v.to_string()))),
            ("init_start_age", opt(self.init_start_age.map(|v| v.to_string()))),
            ("heteroscedastic", self.heteroscedastic().to_string()),
            ("learn_scale", self.learn_scale().to_string()),
            ("model", self.model.name().to_string()),
            ("cae_alpha", self.cae_alpha.to_string()),
            ("cae_beta", self.cae_beta.to_string()),
            ("a1", f.a1.to_string()),
            ("b1", f.b1.to_string()),
            ("a2", f.a2.to_string()),
            ("b2", f.b2.to_string()),
            ("h_bar", f.h_bar.to_string()),
            ("sigma_bar", f.sigma_bar.to_string()),
            ("alpha_bar", f.alpha_bar.to_string()),
            ("beta_bar", f.beta_bar.to_string()),
            ("p_bar", f.p_bar.to_string()),
            ("q_bar", f.q_bar.to_string()),
            ("r_bar", f.r_bar.to_string()),
            ("s_bar", f.s_bar.to_string()),
            ("delta", f.delta.to_string()),
            ("contraction_upper", f.contraction_upper.to_string()),
            ("expansion_lower", f.expansion_lower.to_string()),
            ("age_min", opt(self.age_min.map(|v| v.to_string()))),
            ("age_max", opt(self.age_max.map(|v| v.to_string()))),
            ("em_tol", self.em_tol.to_string()),
            ("stack_tol", self.stack_tol.to_string()),
            ("tune_samples", self.tune_samples.to_string()),
            ("stack", opt(self.stack.as_ref().map(|p| p.display().to_string()))),
            ("signals", paths(&self.signals)),
            ("calibration", opt(self.calibration.as_ref().map(|p| p.display().to_string()))),
            ("out", self.out.display().to_string()),
            ("example", opt(self.example.map(|v| v.to_string()))),
            ("toy_interval", opt(self.toy_interval.map(|v| v.to_string()))),
            ("toy_noise_sd", opt(self.toy_noise_sd.map(|v| v.to_string()))),
            ("toy_noise_sd_high", opt(self.toy_noise_sd_high.map(|v| v.to_string()))),
            ("toy_outlier_fraction", opt(self.toy_outlier_fraction.map(|v| v.to_string()))),
            ("toy_signals", opt(self.toy_signals.map(|v| v.to_string()))),
        ];
        for (k, v) in rows {
            if !v.is_empty() {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# run\nmode = stack\nseed = 7  # trailing\nparticles=50\nmodel = cae\nsignals = a.csv, b.csv\ndelta = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Some(Mode::Stack));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.particles, 50);
        assert_eq!(cfg.model, ModelKind::Cae);
        assert_eq!(cfg.signals, vec![PathBuf::from("a.csv"), PathBuf::from("b.csv")]);
        assert_eq!(cfg.fixed.delta, 0.1);
        assert!(cfg.heteroscedastic() && cfg.learn_scale());
    }

    #[test]
    fn unknown_key_fails() {
        let e = RunConfig::parse("particle = 5\n").unwrap_err();
        assert!(e.to_string().contains("unknown config key `particle`"));
    }

    #[test]
    fn repeated_key_and_bad_value_fail() {
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed = x\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::parse("mode = simulate\nexample = 3\nbandwidth = 0.25\nage_min = 0\nage_max = 10\n").unwrap();
        cfg.signals = vec![PathBuf::from("x.csv")];
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.mode, cfg.mode);
        assert_eq!(back.example, Some(3));
        assert_eq!(back.bandwidth, Some(0.25));
        assert_eq!(back.signals, cfg.signals);
        assert_eq!(back.fixed, cfg.fixed);
        assert_eq!(back.heteroscedastic(), cfg.heteroscedastic());
    }

    #[test]
    fn validation_catches_bad_counts() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.samples = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.bandwidth = Some(-1.0);
        assert!(cfg.validate().is_err());
    }
}
