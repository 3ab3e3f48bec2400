//! Moment-matched combination of per-sample fits into a tabulated profile.

use super::sparse::GprFit;
use crate::data::{bracket, fmt_sig9, write_table};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::path::Path;

/// Mean and variance functions tabulated on an increasing grid and
/// interpolated linearly in between.
#[derive(Debug, Clone)]
pub struct Profile {
    grid: Vec<f64>,
    mean: Vec<f64>,
    variance: Vec<f64>,
    /// `Some(step)` when the grid is uniform, enabling O(1) lookup.
    step: Option<f64>,
    fits: Vec<GprFit>,
}

impl Profile {
    pub fn new(grid: Vec<f64>, mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || mean.len() != grid.len() || variance.len() != grid.len() {
            return Err(Error::invalid("profile needs at least two grid points with matching columns"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("profile grid must be strictly increasing"));
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("profile variance must be positive, got {v}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("profile mean must be finite"));
        }
        let n = grid.len();
        let h = (grid[n - 1] - grid[0]) / (n - 1) as f64;
        let uniform = grid
            .iter()
            .enumerate()
            .all(|(i, &g)| (g - (grid[0] + h * i as f64)).abs() <= 1e-9 * h);
        Ok(Self {
            grid,
            mean,
            variance,
            step: uniform.then_some(h),
            fits: Vec::new(),
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn contains(&self, z: f64) -> bool {
        let (a, b) = self.domain();
        z >= a && z <= b
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variance
    }

    pub fn fits(&self) -> &[GprFit] {
        &self.fits
    }

    #[inline]
    fn locate(&self, z: f64) -> (usize, f64) {
        match self.step {
            Some(h) => {
                let last = self.grid.len() - 2;
                let u = ((z - self.grid[0]) / h).max(0.0);
                let i = (u.floor() as usize).min(last);
                (i, (u - i as f64).clamp(0.0, 1.0))
            }
            None => bracket(&self.grid, z),
        }
    }

    /// `(mean, variance)` at `z`; the caller guarantees `z` is inside the
    /// domain (values outside are clamped to the ends).
    #[inline]
    pub fn eval_unchecked(&self, z: f64) -> (f64, f64) {
        let (i, t) = self.locate(z);
        let m = self.mean[i] + t * (self.mean[i + 1] - self.mean[i]);
        let v = self.variance[i] + t * (self.variance[i + 1] - self.variance[i]);
        (m, v)
    }

    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        if !self.contains(z) {
            let (lower, upper) = self.domain();
            return Err(Error::Domain { value: z, lower, upper });
        }
        Ok(self.eval_unchecked(z))
    }

    /// Writes `age,mean,sigma` on the tabulation grid.
    pub fn export(&self, path: &Path) -> Result<()> {
        let rows = (0..self.grid.len()).map(|i| {
            vec![
                fmt_sig9(self.grid[i]),
                fmt_sig9(self.mean[i]),
                fmt_sig9(self.variance[i].sqrt()),
            ]
        });
        write_table(path, "age,mean,sigma", rows)
    }

    pub fn import(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
        };
        let (ia, im, is) = (col("age")?, col("mean")?, col("sigma")?);
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = k + 2;
            let get = |i: usize| -> Result<f64> {
                let s = rec.get(i).unwrap_or("");
                s.parse::<f64>().map_err(|_| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("cannot parse '{s}' as a number"),
                })
            };
            rows.push((get(ia)?, get(im)?, get(is)?));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::NonMonotoneDepth {
                path: path.to_path_buf(),
                depth: w[0].0,
            });
        }
        let grid = rows.iter().map(|r| r.0).collect();
        let mean = rows.iter().map(|r| r.1).collect();
        let variance = rows.iter().map(|r| r.2 * r.2).collect();
        Self::new(grid, mean, variance)
    }

    /// Largest `|Δmean| / sd` between two profiles over this profile's grid.
    pub fn max_scaled_change(&self, other: &Profile) -> f64 {
        self.grid
            .iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(&z, (&m, &v))| {
                let (m2, _) = other.eval_unchecked(z);
                (m - m2).abs() / v.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Uniform grid over `[lo, hi]` with spacing at most
/// `min(lengthscale / 5, (hi - lo) / 1000)`.
pub fn profile_grid(lo: f64, hi: f64, lengthscale: f64) -> Vec<f64> {
    let span = hi - lo;
    let max_step = (lengthscale / 5.0).min(span / 1000.0);
    let n = ((span / max_step).ceil() as usize).max(1);
    (0..=n).map(|i| lo + span * i as f64 / n as f64).collect()
}

/// Equal-weight mixture moments of the per-sample predictives on `grid`:
/// `μ̄ = (1/L) Σ μ̄ₗ`, `ν̄ = (1/L) Σ (νₗ + (μ̄ₗ − μ̄)²)` where `νₗ` already
/// includes the observation noise `Λₗ`.
pub fn combine_profile(fits: Vec<GprFit>, grid: Vec<f64>) -> Result<Profile> {
    if fits.is_empty() {
        return Err(Error::invalid("cannot combine zero fits"));
    }
    let l = fits.len() as f64;
    let moments: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&z| {
            let preds: Vec<(f64, f64)> = fits.iter().map(|f| f.predict(z)).collect();
            let mean = preds.iter().map(|p| p.0).sum::<f64>() / l;
            let var = preds
                .iter()
                .map(|&(m, v)| v + (m - mean) * (m - mean))
                .sum::<f64>()
                / l;
            (mean, var)
        })
        .collect();
    let (mean, variance) = moments.into_iter().unzip();
    let mut profile = Profile::new(grid, mean, variance)?;
    profile.fits = fits;
    Ok(profile)
}
