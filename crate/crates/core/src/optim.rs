//! Small derivative-free maximizers used by hyperparameter tuning and the M-step.

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            min_step: 1e-4,
            max_evals: 2000,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Best objective after each completed pass; non-decreasing.
    pub history: Vec<f64>,
}

/// Box-constrained compass search maximizing `f`.
///
/// Each pass tries `x ± step` along every coordinate and keeps any strict
/// improvement; a pass without improvement halves the step. After the step
/// falls below `min_step` the search restarts from the incumbent with the
/// initial step, up to `restarts` times or until a restart brings nothing.
pub fn coordinate_search<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: SearchOptions,
) -> SearchResult {
    let dim = x0.len();
    let mut x: Vec<f64> = (0..dim).map(|i| x0[i].clamp(lower[i], upper[i])).collect();
    let mut best = f(&x);
    let mut evals = 1;
    let mut history = vec![best];
    if !best.is_finite() && best != f64::NEG_INFINITY {
        best = f64::NEG_INFINITY;
    }

    for _restart in 0..=opts.restarts {
        let start_value = best;
        let mut step = opts.initial_step;
        while step >= opts.min_step && evals < opts.max_evals {
            let mut improved = false;
            for i in 0..dim {
                for dir in [1.0, -1.0] {
                    let cand = (x[i] + dir * step).clamp(lower[i], upper[i]);
                    if cand == x[i] {
                        continue;
                    }
                    let old = x[i];
                    x[i] = cand;
                    let v = f(&x);
                    evals += 1;
                    if v > best {
                        best = v;
                        improved = true;
                        break;
                    }
                    x[i] = old;
                }
            }
            history.push(best);
            if !improved {
                step *= 0.5;
            }
        }
        if !(best > start_value) || evals >= opts.max_evals {
            break;
        }
    }
    SearchResult {
        x,
        value: best,
        evaluations: evals,
        history,
    }
}

/// Maximizes a 1-D function on `[lo, hi]`: a uniform scan of `grid` points
/// followed by golden-section refinement around the best grid point.
/// Returns `(argmax, max)`.
pub fn bounded_maximize<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    grid: usize,
    tol: f64,
) -> (f64, f64) {
    let grid = grid.max(2);
    let h = (hi - lo) / (grid - 1) as f64;
    let mut best_x = lo;
    let mut best = f64::NEG_INFINITY;
    for i in 0..grid {
        let x = lo + h * i as f64;
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let (mut a, mut b) = ((best_x - h).max(lo), (best_x + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best {
            best = v;
            best_x = x;
        }
    }
    (best_x, best)
}

/// Bisection for a sign change of `f` on `[lo, hi]`; `None` if the ends
/// share a sign.
pub fn bisect_root<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < tol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compass_finds_quadratic_peak() {
        let r = coordinate_search(
            |x| -(x[0] - 1.3).powi(2) - 2.0 * (x[1] + 0.4).powi(2),
            &[0.0, 0.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            SearchOptions::default(),
        );
        assert!((r.x[0] - 1.3).abs() < 1e-3 && (r.x[1] + 0.4).abs() < 1e-3);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn compass_respects_bounds() {
        let r = coordinate_search(|x| x[0], &[0.0], &[-1.0], &[2.0], SearchOptions::default());
        assert_eq!(r.x[0], 2.0);
    }

    #[test]
    fn golden_section_and_bisection() {
        let (x, v) = bounded_maximize(|x| -(x - 0.37f64).powi(2), 0.0, 1.0, 11, 1e-10);
        assert!((x - 0.37).abs() < 1e-6 && v <= 0.0);
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-10);
        assert!(bisect_root(|x| x * x + 1.0, -1.0, 1.0, 1e-9).is_none());
    }
}
