//! Textbook dynamic time warping (symmetric1 steps, squared-difference
//! cost), used as a baseline aligner.

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Matched index pairs `(i, j)` from `(0, 0)` to the last pair.
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Warps `a` against `b` with diagonal, horizontal and vertical unit-weight steps.
pub fn dtw(a: &[f64], b: &[f64]) -> DtwResult {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return DtwResult {
            path: Vec::new(),
            cost: 0.0,
        };
    }
    let mut acc = vec![f64::INFINITY; n * m];
    let idx = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = (a[i] - b[j]) * (a[i] - b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut v = f64::INFINITY;
                if i > 0 && j > 0 {
                    v = v.min(acc[idx(i - 1, j - 1)]);
                }
                if i > 0 {
                    v = v.min(acc[idx(i - 1, j)]);
                }
                if j > 0 {
                    v = v.min(acc[idx(i, j - 1)]);
                }
                v
            };
            acc[idx(i, j)] = best + d;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        // ties prefer the diagonal, then the step in `a`
        let mut cands = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            cands.push((i - 1, j - 1));
        }
        if i > 0 {
            cands.push((i - 1, j));
        }
        if j > 0 {
            cands.push((i, j - 1));
        }
        let next = cands
            .into_iter()
            .fold(None, |best: Option<(usize, usize)>, c| match best {
                Some(b) if acc[idx(b.0, b.1)] <= acc[idx(c.0, c.1)] => Some(b),
                _ => Some(c),
            })
            .expect("a predecessor exists");
        (i, j) = next;
        path.push(next);
    }
    path.reverse();
    DtwResult {
        cost: acc[idx(n - 1, m - 1)],
        path,
    }
}

/// Alignment error of every matched pair: `ages_a[i] − ages_b[j]`.
pub fn path_errors(path: &[(usize, usize)], ages_a: &[f64], ages_b: &[f64]) -> Vec<f64> {
    path.iter().map(|&(i, j)| ages_a[i] - ages_b[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid(path: &[(usize, usize)], n: usize, m: usize) -> bool {
        path[0] == (0, 0)
            && *path.last().unwrap() == (n - 1, m - 1)
            && path.windows(2).all(|w| {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                di <= 1 && dj <= 1 && di + dj >= 1
            })
    }

    #[test]
    fn identical_signals_give_identity() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let r = dtw(&a, &a);
        assert_eq!(r.path, (0..20).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(r.cost, 0.0);
        let ages: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(path_errors(&r.path, &ages, &ages).iter().all(|&e| e == 0.0));
    }

    #[test]
    fn constant_signal_path_is_valid() {
        let a = vec![1.0; 7];
        let b: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let r = dtw(&a, &b);
        assert!(valid(&r.path, 7, 12));
        let r = dtw(&b, &a);
        assert!(valid(&r.path, 12, 7));
    }

    #[test]
    fn cost_matches_brute_force_on_small_case() {
        // enumerate all monotone paths on a 4 x 3 grid
        let a = [0.0, 1.0, 0.5, 2.0];
        let b = [0.2, 1.4, 1.9];
        fn best(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let d = (a[i] - b[j]).powi(2);
            if i == 0 && j == 0 {
                return d;
            }
            let mut v = f64::INFINITY;
            if i > 0 && j > 0 {
                v = v.min(best(a, b, i - 1, j - 1));
            }
            if i > 0 {
                v = v.min(best(a, b, i - 1, j));
            }
            if j > 0 {
                v = v.min(best(a, b, i, j - 1));
            }
            v + d
        }
        let r = dtw(&a, &b);
        assert!((r.cost - best(&a, &b, 3, 2)).abs() < 1e-12);
        let along: f64 = r.path.iter().map(|&(i, j)| (a[i] - b[j]).powi(2)).sum();
        assert!((along - r.cost).abs() < 1e-12);
    }

    #[test]
    fn asynchronous_pair_alternates() {
        let f = |z: f64| (std::f64::consts::TAU * z / 4.0).cos();
        let za: Vec<f64> = (0..16).map(|k| 0.4 * k as f64).collect();
        let zb: Vec<f64> = (0..15).map(|k| 0.2 + 0.4 * k as f64).collect();
        let a: Vec<f64> = za.iter().map(|&z| f(z)).collect();
        let b: Vec<f64> = zb.iter().map(|&z| f(z)).collect();
        let r = dtw(&a, &b);
        let e = path_errors(&r.path, &za, &zb);
        assert!(e.iter().all(|x| x.abs() > 0.19));
        assert!(e.iter().any(|&x| x > 0.19) && e.iter().any(|&x| x < -0.19));
    }
}
