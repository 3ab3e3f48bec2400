//! Signals, calibration curves, alignment samples and the fixed hyperparameters
//! shared by every model.
//!
//! Units are fixed at ingestion: depths in meters, ages in kiloyears,
//! radiocarbon determinations and their errors in ¹⁴C years.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transition::Regime;

/// One observation made at a depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxyDatum {
    /// A synchronizing proxy that follows the profile (benthic δ¹⁸O, or the
    /// generic signal value in the toy problems).
    D18O { value: f64 },
    /// A radiocarbon determination with its reservoir offset and the extra
    /// variance (measurement and reservoir uncertainty, in ¹⁴C yr²).
    Radiocarbon {
        value: f64,
        reservoir_offset: f64,
        extra_variance: f64,
    },
}

impl ProxyDatum {
    pub fn d18o(value: f64) -> Self {
        ProxyDatum::D18O { value }
    }

    pub fn radiocarbon(value: f64, reservoir_offset: f64, extra_variance: f64) -> Self {
        ProxyDatum::Radiocarbon {
            value,
            reservoir_offset,
            extra_variance,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            ProxyDatum::D18O { value } | ProxyDatum::Radiocarbon { value, .. } => value,
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            ProxyDatum::D18O { value } if !value.is_finite() => {
                Err(Error::invalid(format!("non-finite d18O value {value}")))
            }
            ProxyDatum::Radiocarbon {
                value,
                reservoir_offset,
                extra_variance,
            } if !(value.is_finite()
                && reservoir_offset.is_finite()
                && extra_variance.is_finite()
                && extra_variance >= 0.0) =>
            {
                Err(Error::invalid(format!(
                    "invalid radiocarbon datum ({value}, {reservoir_offset}, {extra_variance})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// An observed record: strictly increasing positions, each carrying at least one datum.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    id: String,
    positions: Vec<f64>,
    observations: Vec<Vec<ProxyDatum>>,
}

impl Signal {
    pub fn new(
        id: impl Into<String>,
        positions: Vec<f64>,
        observations: Vec<Vec<ProxyDatum>>,
    ) -> Result<Self> {
        let id = id.into();
        if positions.len() != observations.len() {
            return Err(Error::invalid(format!(
                "signal {id}: {} positions but {} observation lists",
                positions.len(),
                observations.len()
            )));
        }
        if positions.len() < 2 {
            return Err(Error::invalid(format!(
                "signal {id}: needs at least 2 positions, got {}",
                positions.len()
            )));
        }
        for (n, w) in positions.windows(2).enumerate() {
            if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::invalid(format!(
                    "signal {id}: positions not strictly increasing at index {}",
                    n + 1
                )));
            }
        }
        for (n, data) in observations.iter().enumerate() {
            if data.is_empty() {
                return Err(Error::invalid(format!(
                    "signal {id}: position {n} has no observations"
                )));
            }
            for d in data {
                d.check()?;
            }
        }
        Ok(Self {
            id,
            positions,
            observations,
        })
    }

    /// Convenience constructor for a signal with one δ¹⁸O-type value per position.
    pub fn from_values(id: impl Into<String>, positions: Vec<f64>, values: &[f64]) -> Result<Self> {
        let observations = values.iter().map(|&v| vec![ProxyDatum::d18o(v)]).collect();
        Self::new(id, positions, observations)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn observations(&self) -> &[Vec<ProxyDatum>] {
        &self.observations
    }

    pub fn data_at(&self, n: usize) -> &[ProxyDatum] {
        &self.observations[n]
    }

    /// δ¹⁸O values at position `n`.
    pub fn d18o_at(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        self.observations[n].iter().filter_map(|d| match *d {
            ProxyDatum::D18O { value } => Some(value),
            _ => None,
        })
    }

    pub fn has_radiocarbon(&self) -> bool {
        self.observations
            .iter()
            .flatten()
            .any(|d| matches!(d, ProxyDatum::Radiocarbon { .. }))
    }

    pub fn depth_span(&self) -> f64 {
        self.positions[self.len() - 1] - self.positions[0]
    }
}

/// Column layout of a signal file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Tab if the header line contains a tab, comma otherwise.
    #[default]
    Auto,
    Comma,
    Tab,
}

const SIGNAL_COLUMNS: [&str; 6] = [
    "depth",
    "d18o",
    "c14_age",
    "c14_error",
    "reservoir_offset",
    "reservoir_error",
];

fn detect_delimiter(path: &Path, delimiter: Delimiter) -> Result<u8> {
    Ok(match delimiter {
        Delimiter::Comma => b',',
        Delimiter::Tab => b'\t',
        Delimiter::Auto => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut first = String::new();
            BufReader::new(file)
                .read_line(&mut first)
                .map_err(|e| Error::io(path, e))?;
            if first.contains('\t') {
                b'\t'
            } else {
                b','
            }
        }
    })
}

fn open_table(path: &Path, delimiter: Delimiter) -> Result<csv::Reader<File>> {
    let delim = detect_delimiter(path, delimiter)?;
    csv::ReaderBuilder::new()
        .delimiter(delim)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_cell(
    path: &Path,
    line: usize,
    record: &csv::StringRecord,
    idx: Option<usize>,
    name: &str,
) -> Result<Option<f64>> {
    let Some(i) = idx else { return Ok(None) };
    let raw = record.get(i).unwrap_or("").trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: format!("column `{name}`: `{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("column `{name}`: non-finite value"),
        });
    }
    Ok(Some(v))
}

/// Reads a signal from delimited text.
///
/// Rows are sorted by depth and rows sharing a depth are merged into one
/// position. A row may carry a δ¹⁸O value, a radiocarbon determination, or
/// both. `c14_error` and `reservoir_error` are combined in quadrature into the
/// datum's extra variance. Rows without any proxy value are skipped.
pub fn parse_signal(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<Signal> {
    let path = path.as_ref();
    let mut reader = open_table(path, delimiter)?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx: Vec<Option<usize>> = SIGNAL_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c))
        .collect();
    if idx[0].is_none() {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "depth".into(),
        });
    }
    if idx[2].is_some() && idx[3].is_none() {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "c14_error".into(),
        });
    }

    // (depth, row cells, data) per row
    let mut rows: Vec<(f64, [Option<f64>; 6], Vec<ProxyDatum>)> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let mut cells = [None; 6];
        for (c, name) in SIGNAL_COLUMNS.iter().enumerate() {
            cells[c] = parse_cell(path, line, &rec, idx[c], name)?;
        }
        let Some(depth) = cells[0] else {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: "missing depth".into(),
            });
        };
        let mut data = Vec::new();
        if let Some(v) = cells[1] {
            data.push(ProxyDatum::d18o(v));
        }
        if let Some(age) = cells[2] {
            let Some(err) = cells[3] else {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: "c14_age given without c14_error".into(),
                });
            };
            let offset = cells[4].unwrap_or(0.0);
            let res_err = cells[5].unwrap_or(0.0);
            if err < 0.0 || res_err < 0.0 {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: "negative radiocarbon error".into(),
                });
            }
            data.push(ProxyDatum::radiocarbon(
                age,
                offset,
                err * err + res_err * res_err,
            ));
        }
        if data.is_empty() {
            log::warn!("{}: line {line}: no proxy values, row skipped", path.display());
            continue;
        }
        rows.push((depth, cells, data));
    }

    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in rows.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(Error::NonMonotoneDepth {
                path: path.to_path_buf(),
                depth: w[0].0,
            });
        }
    }

    let mut positions: Vec<f64> = Vec::new();
    let mut observations: Vec<Vec<ProxyDatum>> = Vec::new();
    for (depth, _, data) in rows {
        if positions.last() == Some(&depth) {
            observations.last_mut().unwrap().extend(data);
        } else {
            positions.push(depth);
            observations.push(data);
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "signal".into());
    Signal::new(id, positions, observations)
}

/// Formats `x` rounded to 9 significant digits, in the shortest text that
/// parses back to that rounded value.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Writes a signal in the format read by [`parse_signal`], one datum per row.
pub fn write_signal(signal: &Signal, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("depth,d18o,c14_age,c14_error,reservoir_offset,reservoir_error\n");
    for (x, data) in signal.positions.iter().zip(&signal.observations) {
        for d in data {
            let depth = fmt_sig9(*x);
            match *d {
                ProxyDatum::D18O { value } => {
                    out.push_str(&format!("{depth},{},,,,\n", fmt_sig9(value)));
                }
                ProxyDatum::Radiocarbon {
                    value,
                    reservoir_offset,
                    extra_variance,
                } => {
                    out.push_str(&format!(
                        "{depth},,{},{},{},\n",
                        fmt_sig9(value),
                        fmt_sig9(extra_variance.sqrt()),
                        fmt_sig9(reservoir_offset)
                    ));
                }
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Tabulated radiocarbon calibration curve, interpolated linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    calendar_ages: Vec<f64>,
    mean: Vec<f64>,
    sigma: Vec<f64>,
}

impl CalibrationCurve {
    /// `calendar_ages` are in the alignment age unit (kyr).
    pub fn new(calendar_ages: Vec<f64>, mean: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if calendar_ages.len() != mean.len() || mean.len() != sigma.len() {
            return Err(Error::invalid("calibration curve columns differ in length"));
        }
        if calendar_ages.len() < 2 {
            return Err(Error::invalid("calibration curve needs at least 2 rows"));
        }
        for i in 1..calendar_ages.len() {
            if !(calendar_ages[i] > calendar_ages[i - 1]) {
                return Err(Error::NonMonotoneAges { index: i });
            }
        }
        for (i, &s) in sigma.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NonPositiveSigma { index: i, value: s });
            }
        }
        Ok(Self {
            calendar_ages,
            mean,
            sigma,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.calendar_ages[0], *self.calendar_ages.last().unwrap())
    }

    pub fn contains(&self, age: f64) -> bool {
        let (lo, hi) = self.range();
        age >= lo && age <= hi
    }

    /// Interpolated (mean, sigma) in ¹⁴C yr at calendar age `age`.
    pub fn at(&self, age: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.range();
        if !(age >= lo && age <= hi) {
            return Err(Error::Domain {
                value: age,
                lower: lo,
                upper: hi,
            });
        }
        let (i, t) = bracket(&self.calendar_ages, age);
        let m = self.mean[i] + t * (self.mean[i + 1] - self.mean[i]);
        let s = self.sigma[i] + t * (self.sigma[i + 1] - self.sigma[i]);
        Ok((m, s))
    }
}

/// Index `i` and fraction `t` such that `x = grid[i] + t * (grid[i+1] - grid[i])`.
/// `x` must lie within the grid.
pub(crate) fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    let i = match grid.partition_point(|&g| g <= x) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    (i, t.clamp(0.0, 1.0))
}

/// Reads `cal_age,c14_mean,c14_sigma`; calendar ages in cal yr BP are
/// converted to kyr.
pub fn parse_calibration_curve(path: impl AsRef<Path>) -> Result<CalibrationCurve> {
    let path = path.as_ref();
    let mut reader = open_table(path, Delimiter::Auto)?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let names = ["cal_age", "c14_mean", "c14_sigma"];
    let mut idx = [0usize; 3];
    for (k, name) in names.iter().enumerate() {
        idx[k] = column_index(&headers, name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: (*name).into(),
        })?;
    }
    let (mut ages, mut mean, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let mut vals = [0.0; 3];
        for c in 0..3 {
            vals[c] = parse_cell(path, line, &rec, Some(idx[c]), names[c])?.ok_or_else(|| {
                Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("empty `{}`", names[c]),
                }
            })?;
        }
        ages.push(vals[0] / 1000.0);
        mean.push(vals[1]);
        sigma.push(vals[2]);
    }
    CalibrationCurve::new(ages, mean, sigma)
}

/// One sampled alignment of a signal: ages per position (in position order).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSample {
    pub values: Vec<f64>,
    pub outliers: Vec<bool>,
    /// Accumulation regimes per position (empty for models without regimes).
    pub regimes: Vec<Regime>,
    pub log_posterior: f64,
}

impl AlignmentSample {
    pub fn new(values: Vec<f64>, log_posterior: f64) -> Self {
        let n = values.len();
        Self {
            values,
            outliers: vec![false; n],
            regimes: Vec::new(),
            log_posterior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlignmentViolation {
    /// `values[index]` does not exceed `values[index - 1]`.
    NotIncreasing { index: usize },
    OutOfDomain { index: usize, value: f64 },
}

impl fmt::Display for AlignmentViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignmentViolation::NotIncreasing { index } => {
                write!(f, "index {index}: not strictly increasing")
            }
            AlignmentViolation::OutOfDomain { index, value } => {
                write!(f, "index {index}: {value} outside the profile domain")
            }
        }
    }
}

/// Reports every monotonicity and domain violation (0-based indices).
pub fn validate_alignment(
    values: &[f64],
    domain: (f64, f64),
) -> std::result::Result<(), Vec<AlignmentViolation>> {
    let mut out = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if i > 0 && !(v > values[i - 1]) {
            out.push(AlignmentViolation::NotIncreasing { index: i });
        }
        if !(v >= domain.0 && v <= domain.1) {
            out.push(AlignmentViolation::OutOfDomain { index: i, value: v });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Constants of the priors and likelihoods that are never learned.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedHyperparams {
    /// Student-t shape constants for radiocarbon (`a1`, `b1`) and δ¹⁸O (`a2`, `b2`).
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    /// Gaussian prior on the shift.
    pub h_bar: f64,
    pub sigma_bar: f64,
    /// Inverse-gamma-type prior on the scale.
    pub alpha_bar: f64,
    pub beta_bar: f64,
    /// Gamma-transition shape/rate prior constants.
    pub p_bar: f64,
    pub q_bar: f64,
    pub r_bar: f64,
    pub s_bar: f64,
    /// Prior outlier probability.
    pub delta: f64,
    /// Boundary between contraction and average accumulation ratios.
    pub contraction_upper: f64,
    /// Boundary between average and expansion accumulation ratios.
    pub expansion_lower: f64,
}

impl Default for FixedHyperparams {
    fn default() -> Self {
        Self {
            a1: 3.0,
            b1: 4.0,
            a2: 3.0,
            b2: 4.0,
            h_bar: 0.0,
            sigma_bar: 1.0,
            alpha_bar: 1.0,
            beta_bar: 1.0,
            p_bar: 1.0,
            q_bar: 5.0,
            r_bar: 5.0,
            s_bar: 5.0,
            delta: 0.05,
            contraction_upper: 0.9220,
            expansion_lower: 1.0850,
        }
    }
}

impl FixedHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("sigma_bar", self.sigma_bar),
            ("alpha_bar", self.alpha_bar),
            ("beta_bar", self.beta_bar),
            ("p_bar", self.p_bar),
            ("q_bar", self.q_bar),
            ("r_bar", self.r_bar),
            ("s_bar", self.s_bar),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.contraction_upper > 0.0 && self.expansion_lower > self.contraction_upper) {
            return Err(Error::invalid("regime boundaries must satisfy 0 < C < E"));
        }
        Ok(())
    }

    /// Accumulation-ratio interval of a regime; the lower end is inclusive
    /// except for contraction, whose interval is open at 0.
    pub fn regime_interval(&self, regime: Regime) -> (f64, f64) {
        match regime {
            Regime::Contraction => (0.0, self.contraction_upper),
            Regime::Average => (self.contraction_upper, self.expansion_lower),
            Regime::Expansion => (self.expansion_lower, f64::INFINITY),
        }
    }

    pub fn regime_of(&self, ratio: f64) -> Option<Regime> {
        if !(ratio > 0.0) {
            None
        } else if ratio < self.contraction_upper {
            Some(Regime::Contraction)
        } else if ratio < self.expansion_lower {
            Some(Regime::Average)
        } else if ratio.is_finite() {
            Some(Regime::Expansion)
        } else {
            None
        }
    }
}

/// Writes a two-dimensional numeric table with a header row.
pub(crate) fn write_table(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(f, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_three_rows() {
        let f = write_tmp("depth,d18o\n0.1,3.2\n0.2,3.5\n0.3,4.0\n");
        let s = parse_signal(f.path(), Delimiter::Auto).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.positions(), &[0.1, 0.2, 0.3]);
        assert_eq!(s.data_at(2), &[ProxyDatum::d18o(4.0)]);
    }

    #[test]
    fn sorts_rows_by_depth() {
        let f = write_tmp("depth\td18o\n0.2\t1.0\n0.1\t2.0\n");
        let s = parse_signal(f.path(), Delimiter::Auto).unwrap();
        assert_eq!(s.positions(), &[0.1, 0.2]);
        assert_eq!(s.d18o_at(0).collect::<Vec<_>>(), vec![2.0]);
    }

    #[test]
    fn merges_duplicate_depths() {
        let f = write_tmp(
            "depth,d18o,c14_age,c14_error,reservoir_offset,reservoir_error\n\
             0.1,3.0,,,,\n0.5,,12000,80,400,30\n0.5,,12100,60,400,30\n",
        );
        let s = parse_signal(f.path(), Delimiter::Auto).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.data_at(1).len(), 2);
        match s.data_at(1)[0] {
            ProxyDatum::Radiocarbon {
                value,
                reservoir_offset,
                extra_variance,
            } => {
                assert_eq!(value, 12000.0);
                assert_eq!(reservoir_offset, 400.0);
                assert_eq!(extra_variance, 80.0 * 80.0 + 30.0 * 30.0);
            }
            _ => panic!("expected radiocarbon"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let f = write_tmp("depth,d18o\n0.1,abc\n0.2,1\n");
        assert!(matches!(
            parse_signal(f.path(), Delimiter::Auto),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let f = write_tmp("d18o\n1\n2\n");
        assert!(matches!(
            parse_signal(f.path(), Delimiter::Auto),
            Err(Error::MissingColumn { .. })
        ));
        let f = write_tmp("depth,d18o\n0.1,1\n0.1,1\n0.2,3\n");
        assert!(matches!(
            parse_signal(f.path(), Delimiter::Auto),
            Err(Error::NonMonotoneDepth { .. })
        ));
    }

    #[test]
    fn calibration_interpolation() {
        let c = CalibrationCurve::new(vec![0.0, 100.0], vec![0.0, 90.0], vec![10.0, 12.0]).unwrap();
        let (m, s) = c.at(50.0).unwrap();
        assert!((m - 45.0).abs() < 1e-12 && (s - 11.0).abs() < 1e-12);
        assert_eq!(c.at(0.0).unwrap(), (0.0, 10.0));
        assert!(matches!(c.at(-1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn calibration_file_converts_years() {
        let f = write_tmp("cal_age,c14_mean,c14_sigma\n0,0,10\n100,90,12\n");
        let c = parse_calibration_curve(f.path()).unwrap();
        assert_eq!(c.range(), (0.0, 0.1));
        let (m, s) = c.at(0.05).unwrap();
        assert!((m - 45.0).abs() < 1e-9 && (s - 11.0).abs() < 1e-9);

        let f = write_tmp("cal_age,c14_mean,c14_sigma\n0,0,10\n100,90,0\n");
        assert!(matches!(
            parse_calibration_curve(f.path()),
            Err(Error::NonPositiveSigma { index: 1, .. })
        ));
        let f = write_tmp("cal_age,c14_mean,c14_sigma\n10,0,10\n5,90,3\n");
        assert!(matches!(
            parse_calibration_curve(f.path()),
            Err(Error::NonMonotoneAges { index: 1 })
        ));
    }

    #[test]
    fn alignment_validation() {
        assert!(validate_alignment(&[1.0, 2.0, 3.0], (0.0, 10.0)).is_ok());
        assert_eq!(
            validate_alignment(&[1.0, 1.0, 3.0], (0.0, 10.0)).unwrap_err(),
            vec![AlignmentViolation::NotIncreasing { index: 1 }]
        );
        assert_eq!(
            validate_alignment(&[1.0, 2.0, 11.0], (0.0, 10.0)).unwrap_err(),
            vec![AlignmentViolation::OutOfDomain {
                index: 2,
                value: 11.0
            }]
        );
    }

    #[test]
    fn regime_boundaries() {
        let f = FixedHyperparams::default();
        assert_eq!(f.regime_of(0.9219), Some(Regime::Contraction));
        assert_eq!(f.regime_of(0.9220), Some(Regime::Average));
        assert_eq!(f.regime_of(1.0849), Some(Regime::Average));
        assert_eq!(f.regime_of(1.0850), Some(Regime::Expansion));
        assert_eq!(f.regime_of(0.0), None);
    }
}
