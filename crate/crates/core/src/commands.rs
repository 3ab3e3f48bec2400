//! The `align`, `stack` and `simulate` commands. Every output is a pure
//! function of the configuration and its seed.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::statistics::{Data, OrderStatistics};

use crate::config::{Mode, ModelKind, RunConfig};
use crate::data::{
    fmt_sig9, parse_calibration_curve, parse_signal, write_signal, write_table, AlignmentSample, CalibrationCurve,
    Delimiter, Signal,
};
use crate::dtw::{dtw, path_errors};
use crate::em::{reference_depth_scale, run_em_all, write_parameter_report, EmOptions, SignalParams, TransitionParams};
use crate::emission::EmissionParams;
use crate::error::Error;
use crate::gpr::{KernelParams, Profile};
use crate::plot::{write_series, write_series_svg, write_stack_svg, PointLayer};
use crate::sampler::{derive_seed, radiocarbon_initial_support, InitialSupport, SamplerOptions};
use crate::sim::{simulate, Dataset, ToySpec};
use crate::stack::{build_stack, classify_outliers, identity_profile, outlier_posterior, standardized_values, StackOptions};
use crate::transition::{CaeTransitionParams, GammaTransitionParams};

/// Fatal command failure with a stable code and the process exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandError {
    pub code: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CommandError {
    pub fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            exit_code: 2,
            message: message.into(),
        }
    }

    /// One-line JSON record: `{"error": code, "exit_code": n, "message": text}`.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.code,
            "exit_code": self.exit_code,
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CommandError {}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::MalformedRow { .. } => "E_MALFORMED_ROW",
            Error::MissingColumn { .. } => "E_MISSING_COLUMN",
            Error::NonMonotoneDepth { .. } => "E_NON_MONOTONE_DEPTH",
            Error::NonMonotoneAges { .. } => "E_NON_MONOTONE_AGES",
            Error::NonPositiveSigma { .. } => "E_NON_POSITIVE_SIGMA",
            Error::Domain { .. } => "E_DOMAIN",
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::SingularSystem { .. } => "E_SINGULAR_SYSTEM",
            Error::EmptyNeighborhood { .. } => "E_EMPTY_NEIGHBORHOOD",
            Error::OptimFailed(_) => "E_OPTIM_FAILED",
            Error::DegenerateWeights { .. } => "E_DEGENERATE_WEIGHTS",
            Error::Io { .. } => "E_IO",
            Error::Csv { .. } => "E_CSV",
        };
        Self {
            code,
            exit_code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

/// Fraction of the generating age range added on each side of the stack
/// domain by `simulate`.
pub const SIM_DOMAIN_MARGIN: f64 = 0.1;

pub type CmdResult<T> = std::result::Result<T, CommandError>;

/// Per-position posterior summary of one signal's ages.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub depth: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub outlier_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SignalOutcome {
    pub signal: Signal,
    pub params: SignalParams,
    pub q_final: f64,
    pub bank: Vec<AlignmentSample>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub profile: Profile,
    pub signals: Vec<SignalOutcome>,
    /// Scaled profile change per outer iteration (empty when aligning).
    pub history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub dataset: Dataset,
    pub stack: AlignOutcome,
    /// Alignment errors of the DTW baseline between the first two signals.
    pub dtw_errors: Option<Vec<f64>>,
    /// Median age minus generating age, per signal and position.
    pub errors: Vec<Vec<f64>>,
    pub metrics: Vec<(String, f64)>,
}

/// Runs the command named by `cfg.mode`.
pub fn run(cfg: &RunConfig) -> CmdResult<()> {
    match cfg.mode {
        Some(Mode::Align) => cmd_align(cfg).map(|_| ()),
        Some(Mode::Stack) => cmd_stack(cfg).map(|_| ()),
        Some(Mode::Simulate) => cmd_simulate(cfg).map(|_| ()),
        None => Err(CommandError::usage("E_USAGE", "no command given")),
    }
}

fn check_config(cfg: &RunConfig) -> CmdResult<()> {
    cfg.validate().map_err(|e| CommandError::usage("E_CONFIG", e.to_string()))
}

fn load_signals(cfg: &RunConfig) -> CmdResult<Vec<Signal>> {
    if cfg.signals.is_empty() {
        return Err(CommandError::usage("E_NO_SIGNALS", "at least one signal file is required"));
    }
    let signals: Vec<Signal> = cfg
        .signals
        .iter()
        .map(|p| parse_signal(p, Delimiter::Auto))
        .collect::<Result<_, _>>()?;
    let mut ids: Vec<&str> = signals.iter().map(Signal::id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CommandError::usage("E_DUPLICATE_SIGNAL", format!("signal id `{}` appears twice", w[0])));
    }
    Ok(signals)
}

fn load_curve(cfg: &RunConfig, signals: &[Signal]) -> CmdResult<Option<CalibrationCurve>> {
    match &cfg.calibration {
        Some(p) => Ok(Some(parse_calibration_curve(p)?)),
        None if signals.iter().any(Signal::has_radiocarbon) => Err(CommandError::usage(
            "E_NO_CALIBRATION",
            "radiocarbon data need a calibration curve (key `calibration`)",
        )),
        None => Ok(None),
    }
}

fn create_out(dir: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn d18o_values(signal: &Signal) -> Vec<f64> {
    (0..signal.len()).flat_map(|n| signal.d18o_at(n)).collect()
}

/// Starting parameters: unit scale, shift matching the mean levels, and the
/// given depth scale (the profile-to-signal span ratio by default).
pub fn initial_params(cfg: &RunConfig, signal: &Signal, profile: &Profile, depth_scale: Option<f64>) -> SignalParams {
    let r = depth_scale.unwrap_or_else(|| reference_depth_scale(signal, profile));
    let transition = match cfg.model {
        ModelKind::Gamma => TransitionParams::Gamma(GammaTransitionParams {
            alpha: 5.0,
            beta: 5.0,
            depth_scale: r,
        }),
        ModelKind::Cae => TransitionParams::Cae(CaeTransitionParams::uniform(r, cfg.cae_alpha, cfg.cae_beta)),
    };
    let ys = d18o_values(signal);
    let shift = if ys.is_empty() { 0.0 } else { mean(&ys) - mean(profile.means()) };
    SignalParams {
        transition,
        emission: EmissionParams { shift, scale: 1.0 },
    }
}

/// EM settings for one signal; radiocarbon-bearing signals start from the
/// calibrated window of their first datum.
pub fn em_options(cfg: &RunConfig, signal: &Signal, curve: Option<&CalibrationCurve>, init: &SignalParams) -> EmOptions {
    let initial = match curve {
        Some(c) if signal.has_radiocarbon() => {
            radiocarbon_initial_support(signal, c, &init.transition.prepare(&cfg.fixed))
        }
        _ => InitialSupport::Domain,
    };
    EmOptions {
        max_iters: cfg.max_em_iters,
        tol: cfg.em_tol,
        sampler: SamplerOptions {
            particles: cfg.particles,
            samples: cfg.samples,
            sweeps: cfg.sweeps,
            bandwidth: cfg.bandwidth,
        },
        learn_scale: cfg.learn_scale(),
        learn_transition: true,
        fixed: cfg.fixed.clone(),
        initial,
        depth_scale_bounds: None,
    }
}

fn kernel_init(cfg: &RunConfig) -> CmdResult<Option<KernelParams>> {
    match (cfg.kernel_variance, cfg.kernel_lengthscale) {
        (None, None) => Ok(None),
        (Some(v), Some(l)) => Ok(Some(KernelParams::new(v, l)?)),
        _ => Err(CommandError::usage(
            "E_CONFIG",
            "kernel_variance and kernel_lengthscale must be given together",
        )),
    }
}

fn summarize(signal: &Signal, params: &SignalParams, bank: &[AlignmentSample], profile: &Profile, delta: f64) -> Vec<SummaryRow> {
    let values = standardized_values(signal, params);
    signal
        .positions()
        .iter()
        .enumerate()
        .map(|(n, &depth)| {
            let ages: Vec<f64> = bank.iter().map(|s| s.values[n]).collect();
            let mut data = Data::new(ages);
            let prob = if values[n].is_empty() {
                0.0
            } else {
                bank.iter()
                    .map(|s| values[n].iter().map(|&y| outlier_posterior(y, s.values[n], profile, delta)).sum::<f64>())
                    .sum::<f64>()
                    / (bank.len() * values[n].len()) as f64
            };
            SummaryRow {
                depth,
                median: data.median(),
                lower: data.quantile(0.025),
                upper: data.quantile(0.975),
                outlier_prob: prob,
            }
        })
        .collect()
}

fn write_signal_outputs(dir: &Path, o: &SignalOutcome) -> CmdResult<()> {
    let id = o.signal.id();
    let x = o.signal.positions();
    let samples = o.bank.iter().enumerate().flat_map(|(l, s)| {
        x.iter().enumerate().map(move |(n, &depth)| {
            vec![
                id.to_string(),
                l.to_string(),
                fmt_sig9(depth),
                fmt_sig9(s.values[n]),
                u8::from(s.outliers.get(n).copied().unwrap_or(false)).to_string(),
                fmt_sig9(s.log_posterior),
            ]
        })
    });
    write_table(
        &dir.join(format!("samples_{id}.csv")),
        "signal_id,l,depth,age,outlier_flag,log_post",
        samples,
    )?;
    let rows = o.summary.iter().map(|r| {
        vec![
            fmt_sig9(r.depth),
            fmt_sig9(r.median),
            fmt_sig9(r.lower),
            fmt_sig9(r.upper),
            fmt_sig9(r.outlier_prob),
        ]
    });
    write_table(
        &dir.join(format!("summary_{id}.csv")),
        "depth,median,lower95,upper95,outlier_prob",
        rows,
    )?;
    Ok(())
}

fn write_common_outputs(dir: &Path, cfg: &RunConfig, command: &str, out: &AlignOutcome) -> CmdResult<()> {
    for o in &out.signals {
        write_signal_outputs(dir, o)?;
    }
    let rows: Vec<(String, SignalParams, f64)> =
        out.signals.iter().map(|o| (o.signal.id().to_string(), o.params, o.q_final)).collect();
    write_parameter_report(&dir.join("params.csv"), &rows)?;
    let mut layer = PointLayer::default();
    for o in &out.signals {
        let values = standardized_values(&o.signal, &o.params);
        for (r, v) in o.summary.iter().zip(&values) {
            for &y in v {
                if r.outlier_prob > 0.5 {
                    layer.outliers.push((r.median, y));
                } else {
                    layer.points.push((r.median, y));
                }
            }
        }
    }
    write_stack_svg(&dir.join("stack.svg"), &out.profile, &layer, command)?;
    write_run_metadata(dir, cfg, command, out)
}

fn write_run_metadata(dir: &Path, cfg: &RunConfig, command: &str, out: &AlignOutcome) -> CmdResult<()> {
    let mut used = cfg.clone();
    used.mode = cfg.mode.or(match command {
        "align" => Some(Mode::Align),
        "stack" => Some(Mode::Stack),
        _ => Some(Mode::Simulate),
    });
    let path = dir.join("run_config.txt");
    std::fs::write(&path, used.to_text()).map_err(|e| Error::Io { path, source: e })?;
    let meta = format!(
        "program = {} {}\ncommand = {command}\nsignals = {}\nouter_iterations = {}\nconverged = {}\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        out.signals.len(),
        out.history.len(),
        out.converged
    );
    let path = dir.join("run_metadata.txt");
    std::fs::write(&path, meta).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}

/// Aligns every signal to a fixed, previously built stack.
pub fn cmd_align(cfg: &RunConfig) -> CmdResult<AlignOutcome> {
    check_config(cfg)?;
    let stack = match &cfg.stack {
        Some(p) if p.is_file() => p,
        Some(p) => return Err(CommandError::usage("E_NO_STACK", format!("stack file {} not found", p.display()))),
        None => return Err(CommandError::usage("E_NO_STACK", "align needs a stack file")),
    };
    let signals = load_signals(cfg)?;
    let profile = Profile::import(stack)?;
    let curve = load_curve(cfg, &signals)?;
    create_out(&cfg.out)?;
    let inits: Vec<SignalParams> = signals.iter().map(|s| initial_params(cfg, s, &profile, None)).collect();
    let opts: Vec<EmOptions> = signals
        .iter()
        .zip(&inits)
        .map(|(s, p)| em_options(cfg, s, curve.as_ref(), p))
        .collect();
    let results = run_em_all(&signals, &inits, &profile, curve.as_ref(), &opts, derive_seed(cfg.seed, 1));
    let mut outcomes = Vec::new();
    let mut diag = Vec::new();
    for (m, (signal, r)) in signals.into_iter().zip(results).enumerate() {
        let r = r?;
        let values = standardized_values(&signal, &r.params);
        let mut bank = r.bank;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 + m as u64));
        classify_outliers(&mut bank, &values, &profile, cfg.fixed.delta, &mut rng);
        for (it, (q, se)) in r.q_history.iter().zip(&r.q_se).enumerate() {
            diag.push(vec![signal.id().to_string(), (it + 1).to_string(), fmt_sig9(*q), fmt_sig9(*se)]);
        }
        let summary = summarize(&signal, &r.params, &bank, &profile, cfg.fixed.delta);
        outcomes.push(SignalOutcome {
            q_final: r.q_history.last().copied().unwrap_or(f64::NAN),
            params: r.params,
            signal,
            bank,
            summary,
        });
    }
    write_table(&cfg.out.join("diagnostics.csv"), "signal_id,em_iteration,q,q_se", diag)?;
    let out = AlignOutcome {
        profile,
        signals: outcomes,
        history: Vec::new(),
        converged: true,
    };
    write_common_outputs(&cfg.out, cfg, "align", &out)?;
    Ok(out)
}

/// Builds a stack from signal files.
pub fn cmd_stack(cfg: &RunConfig) -> CmdResult<AlignOutcome> {
    check_config(cfg)?;
    let signals = load_signals(cfg)?;
    let curve = load_curve(cfg, &signals)?;
    create_out(&cfg.out)?;
    let out = stack_signals(cfg, &signals, curve.as_ref())?;
    write_stack_outputs(&cfg.out, cfg, "stack", &out)?;
    Ok(out)
}

/// Age range of the stack and the depth scale of the first signal in the
/// initial profile.
fn stack_frame(cfg: &RunConfig, first: &Signal) -> CmdResult<((f64, f64), f64)> {
    let span = first.depth_span();
    let x0 = first.positions()[0];
    let scale = match (cfg.init_depth_scale, cfg.age_min, cfg.age_max) {
        (Some(r), _, _) => r,
        (None, Some(a), Some(b)) if span > 0.0 => (b - a) / span,
        _ => 1.0,
    };
    let lo = cfg.age_min.unwrap_or(x0 * scale);
    let hi = cfg.age_max.unwrap_or(lo + scale * span);
    if !(hi > lo) {
        return Err(CommandError::usage(
            "E_CONFIG",
            "cannot infer an age range; set age_min and age_max",
        ));
    }
    Ok(((lo, hi), scale))
}

/// Runs the outer loop: initial profile from the first signal read at a
/// constant depth scale, then alternating alignment and reconstruction.
pub fn stack_signals(cfg: &RunConfig, signals: &[Signal], curve: Option<&CalibrationCurve>) -> CmdResult<AlignOutcome> {
    if signals.is_empty() {
        return Err(CommandError::usage("E_NO_SIGNALS", "at least one signal is required"));
    }
    let (domain, scale) = stack_frame(cfg, &signals[0])?;
    let opts = StackOptions {
        max_outer_iters: cfg.max_outer_iters,
        tol: cfg.stack_tol,
        heteroscedastic: cfg.heteroscedastic(),
        pseudo_count: cfg.pseudo_inputs,
        tune_samples: cfg.tune_samples,
        domain,
        delta: cfg.fixed.delta,
        ..StackOptions::default()
    };
    let offset = cfg.init_start_age.unwrap_or(domain.0) - scale * signals[0].positions()[0];
    let init = identity_profile(&signals[0], scale, offset, kernel_init(cfg)?, &opts, derive_seed(cfg.seed, 0))?;
    let depth_scale = cfg.init_depth_scale;
    let inits: Vec<SignalParams> = signals
        .iter()
        .map(|s| initial_params(cfg, s, &init.profile, depth_scale))
        .collect();
    let em: Vec<EmOptions> = signals.iter().zip(&inits).map(|(s, p)| em_options(cfg, s, curve, p)).collect();
    let run = build_stack(signals, init, &inits, &em, curve, &opts, derive_seed(cfg.seed, 1))?;
    let signals_out = signals
        .iter()
        .zip(run.params)
        .zip(run.banks)
        .zip(&run.q_final)
        .map(|(((s, params), bank), q)| SignalOutcome {
            summary: summarize(s, &params, &bank, &run.profile, cfg.fixed.delta),
            signal: s.clone(),
            params,
            q_final: q.last().copied().unwrap_or(f64::NAN),
            bank,
        })
        .collect();
    Ok(AlignOutcome {
        profile: run.profile,
        signals: signals_out,
        history: run.history,
        converged: run.converged,
    })
}

fn write_stack_outputs(dir: &Path, cfg: &RunConfig, command: &str, out: &AlignOutcome) -> CmdResult<()> {
    out.profile.export(&dir.join("stack.csv"))?;
    let rows = out
        .history
        .iter()
        .enumerate()
        .map(|(i, c)| vec![(i + 1).to_string(), fmt_sig9(*c)]);
    write_table(&dir.join("diagnostics.csv"), "outer_iteration,profile_change", rows)?;
    let fits = out.profile.fits();
    if fits.iter().any(|f| !f.noise().is_constant()) {
        let z = out.profile.grid();
        let lambda: Vec<f64> = z
            .iter()
            .map(|&a| fits.iter().map(|f| f.noise().eval(a)).sum::<f64>() / fits.len() as f64)
            .collect();
        write_series(&dir.join("noise_profile.csv"), "age", z, &[("noise_variance", &lambda)])?;
    }
    write_common_outputs(dir, cfg, command, out)
}

/// Toy knobs of the configured example with config overrides applied.
pub fn toy_spec(cfg: &RunConfig) -> CmdResult<ToySpec> {
    let id = cfg
        .example
        .ok_or_else(|| CommandError::usage("E_NO_EXAMPLE", "simulate needs an example id (1-4)"))?;
    let mut spec = ToySpec::example(id)?;
    if let Some(v) = cfg.toy_interval {
        spec.interval = v;
    }
    if let Some(v) = cfg.toy_noise_sd {
        spec.noise_sd = v;
        if cfg.toy_noise_sd_high.is_none() && id != 3 {
            spec.noise_sd_high = v;
        }
    }
    if let Some(v) = cfg.toy_noise_sd_high {
        spec.noise_sd_high = v;
    }
    if let Some(v) = cfg.toy_outlier_fraction {
        spec.outlier_fraction = v;
    }
    if let Some(v) = cfg.toy_signals {
        spec.n_signals = v;
    }
    if let (Some(a), Some(b)) = (cfg.age_min, cfg.age_max) {
        spec.domain = (a, b);
    }
    spec.validate()?;
    Ok(spec)
}

/// Generates a toy example, stacks it, and compares the median alignments
/// (and for two-signal examples the DTW baseline) with the generating ages.
pub fn cmd_simulate(cfg: &RunConfig) -> CmdResult<SimulateOutcome> {
    check_config(cfg)?;
    let spec = toy_spec(cfg)?;
    let dataset = simulate(&spec, derive_seed(cfg.seed, 0))?;
    let dir = &cfg.out;
    create_out(&dir.join("signals"))?;
    let mut run_cfg = cfg.clone();
    // margin so that signals spanning the whole generating range are not
    // truncated at the profile's ends
    let (lo, hi) = spec.domain;
    let pad = SIM_DOMAIN_MARGIN * (hi - lo);
    run_cfg.age_min = Some(lo - pad);
    run_cfg.age_max = Some(hi + pad);
    run_cfg.init_start_age = Some(cfg.init_start_age.unwrap_or(lo));
    run_cfg.init_depth_scale = Some(cfg.init_depth_scale.unwrap_or(1.0));
    run_cfg.heteroscedastic = Some(cfg.heteroscedastic.unwrap_or(spec.example == 3 || cfg.model == ModelKind::Cae));
    run_cfg.seed = derive_seed(cfg.seed, 1);
    run_cfg.signals = dataset
        .signals
        .iter()
        .map(|s| PathBuf::from("signals").join(format!("{}.csv", s.signal.id())))
        .collect();
    for s in &dataset.signals {
        let id = s.signal.id();
        write_signal(&s.signal, dir.join("signals").join(format!("{id}.csv")))?;
        let flags: Vec<f64> = s.outliers.iter().map(|&o| f64::from(u8::from(o))).collect();
        let sd: Vec<f64> = s.noise_var.iter().map(|v| v.sqrt()).collect();
        write_series(
            &dir.join(format!("truth_{id}.csv")),
            "depth",
            s.signal.positions(),
            &[("age", &s.ages), ("outlier", &flags), ("noise_sd", &sd)],
        )?;
    }
    let signals = dataset.signals();
    let stack = stack_signals(&run_cfg, &signals, None)?;
    let mut metrics = Vec::new();
    let mut errors = Vec::new();
    let (mut sq, mut count, mut covered) = (0.0, 0usize, 0usize);
    for (o, truth) in stack.signals.iter().zip(&dataset.signals) {
        let e: Vec<f64> = o.summary.iter().zip(&truth.ages).map(|(r, a)| r.median - a).collect();
        let rms = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        metrics.push((format!("sagpr_rms_error_{}", o.signal.id()), rms));
        sq += e.iter().map(|v| v * v).sum::<f64>();
        count += e.len();
        covered += o
            .summary
            .iter()
            .zip(&truth.ages)
            .filter(|(r, &a)| r.lower <= a && a <= r.upper)
            .count();
        write_series(
            &dir.join(format!("sagpr_errors_{}.csv", o.signal.id())),
            "depth",
            o.signal.positions(),
            &[("error", &e)],
        )?;
        errors.push(e);
    }
    metrics.push(("sagpr_rms_error".into(), (sq / count as f64).sqrt()));
    metrics.push(("sagpr_age_coverage95".into(), covered as f64 / count as f64));
    let dtw_errors = if dataset.signals.len() >= 2 {
        let (a, b) = (&dataset.signals[0], &dataset.signals[1]);
        let r = dtw(&d18o_values(&a.signal), &d18o_values(&b.signal));
        let e = path_errors(&r.path, &a.ages, &b.ages);
        let idx: Vec<f64> = (0..e.len()).map(|i| i as f64).collect();
        let label = "dtw_textbook_symmetric1_error";
        write_series(&dir.join("dtw_errors.csv"), "pair", &idx, &[(label, &e)])?;
        write_series_svg(
            &dir.join("dtw_errors.svg"),
            "DTW baseline (textbook symmetric1) alignment error",
            "pair",
            &idx,
            &[(label, &e)],
        )?;
        metrics.push(("dtw_textbook_symmetric1_max_abs_error".into(), e.iter().fold(0.0, |m, v| m.max(v.abs()))));
        Some(e)
    } else {
        None
    };
    write_table(
        &dir.join("metrics.csv"),
        "metric,value",
        metrics.iter().map(|(k, v)| vec![k.clone(), fmt_sig9(*v)]),
    )?;
    write_stack_outputs(dir, &run_cfg, "simulate", &stack)?;
    Ok(SimulateOutcome {
        dataset,
        stack,
        dtw_errors,
        errors,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(cfg: &mut RunConfig) {
        cfg.particles = 40;
        cfg.samples = 8;
        cfg.sweeps = 2;
        cfg.max_em_iters = 2;
        cfg.max_outer_iters = 1;
        cfg.tune_samples = 2;
    }

    #[test]
    fn error_records_carry_codes() {
        let e = CommandError::usage("E_NO_STACK", "missing \"x\"");
        let v: serde_json::Value = serde_json::from_str(&e.record()).unwrap();
        assert_eq!(v["error"], "E_NO_STACK");
        assert_eq!(v["exit_code"], 2);
        let numeric = CommandError::from(Error::SingularSystem { jitter: 1e-6 });
        assert_eq!((numeric.code, numeric.exit_code), ("E_SINGULAR_SYSTEM", 3));
    }

    #[test]
    fn align_without_stack_fails() {
        let mut cfg = RunConfig::default();
        cfg.signals = vec![PathBuf::from("a.csv")];
        assert_eq!(cmd_align(&cfg).unwrap_err().code, "E_NO_STACK");
        cfg.stack = Some(PathBuf::from("/nonexistent/stack.csv"));
        assert_eq!(cmd_align(&cfg).unwrap_err().code, "E_NO_STACK");
    }

    #[test]
    fn stack_without_signals_fails() {
        let cfg = RunConfig::default();
        let e = cmd_stack(&cfg).unwrap_err();
        assert_eq!((e.code, e.exit_code), ("E_NO_SIGNALS", 2));
    }

    #[test]
    fn simulate_then_align_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        quick(&mut cfg);
        cfg.example = Some(4);
        cfg.out = dir.path().join("sim");
        let sim = cmd_simulate(&cfg).unwrap();
        assert_eq!(sim.errors.len(), 3);
        for f in ["stack.csv", "stack.svg", "params.csv", "metrics.csv", "dtw_errors.csv", "summary_toy1.csv"] {
            assert!(cfg.out.join(f).is_file(), "{f}");
        }
        let mut align = RunConfig::default();
        quick(&mut align);
        align.stack = Some(cfg.out.join("stack.csv"));
        align.signals = vec![cfg.out.join("signals").join("toy2.csv")];
        align.out = dir.path().join("align");
        let out = cmd_align(&align).unwrap();
        assert_eq!(out.signals[0].summary.len(), sim.dataset.signals[1].ages.len());
        for r in &out.signals[0].summary {
            assert!(r.lower <= r.median && r.median <= r.upper);
        }
    }
}
