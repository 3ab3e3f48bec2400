//! Independent oracles for the acceptance checks.

#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use sagpr::sampler::{Proposal, StateSpaceModel};

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS[7];
    let mut gauss = fc * G_WEIGHTS[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod quadrature over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adapt(&f, a, b, tol, 50)
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value against `cdf`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Every file under `dir` with its bytes, sorted by relative path. The
/// output-directory line of the recorded configuration is dropped.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            let mut bytes = std::fs::read(&p).unwrap();
            if rel == "run_config.txt" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("out = ") && !l.starts_with("stack = ") && !l.starts_with("signals = "))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            files.push((rel, bytes));
        }
    }
    files.sort();
    files
}

/// Finite-state HMM on a grid, exposed through the continuous interface.
pub struct DiscreteToy {
    pub grid: Vec<f64>,
    pub initial: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub obs: Vec<f64>,
    pub obs_sd: f64,
}

impl DiscreteToy {
    pub fn example() -> Self {
        Self {
            grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            initial: vec![0.4, 0.3, 0.1, 0.1, 0.1],
            trans: vec![
                vec![0.5, 0.3, 0.1, 0.05, 0.05],
                vec![0.1, 0.5, 0.3, 0.05, 0.05],
                vec![0.05, 0.1, 0.5, 0.3, 0.05],
                vec![0.05, 0.05, 0.1, 0.5, 0.3],
                vec![0.3, 0.05, 0.05, 0.1, 0.5],
            ],
            obs: vec![0.2, 1.3, 1.8, 3.4, 3.9, 0.5, 2.2, 2.9],
            obs_sd: 1.0,
        }
    }

    pub fn index_of(&self, z: f64) -> usize {
        self.grid.iter().position(|&g| g == z).expect("grid value")
    }

    fn lik(&self, t: usize, i: usize) -> f64 {
        let e = (self.obs[t] - self.grid[i]) / self.obs_sd;
        (-0.5 * e * e).exp()
    }

    /// Exact smoothed marginals by forward-backward.
    pub fn forward_backward(&self) -> Vec<Vec<f64>> {
        let (n, len) = (self.grid.len(), self.obs.len());
        let normalize = |v: &mut Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
        };
        let mut alpha = Vec::with_capacity(len);
        let mut a: Vec<f64> = (0..n).map(|i| self.initial[i] * self.lik(0, i)).collect();
        normalize(&mut a);
        alpha.push(a);
        for t in 1..len {
            let prev = &alpha[t - 1];
            let mut b: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| prev[i] * self.trans[i][j]).sum::<f64>() * self.lik(t, j))
                .collect();
            normalize(&mut b);
            alpha.push(b);
        }
        let mut beta = vec![vec![1.0; n]; len];
        for t in (0..len - 1).rev() {
            let mut b: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| self.trans[i][j] * self.lik(t + 1, j) * beta[t + 1][j]).sum())
                .collect();
            normalize(&mut b);
            beta[t] = b;
        }
        (0..len)
            .map(|t| {
                let mut g: Vec<f64> = (0..n).map(|i| alpha[t][i] * beta[t][i]).collect();
                normalize(&mut g);
                g
            })
            .collect()
    }
}

impl StateSpaceModel for DiscreteToy {
    fn len(&self) -> usize {
        self.obs.len()
    }

    fn domain(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().unwrap())
    }

    fn log_initial(&self, z: f64, _w: usize) -> f64 {
        self.grid.iter().position(|&g| g == z).map_or(f64::NEG_INFINITY, |i| self.initial[i].ln())
    }

    fn log_kernel(&self, _t: usize, z_prev: f64, z: f64, _to: usize) -> f64 {
        self.trans[self.index_of(z_prev)][self.index_of(z)].ln()
    }

    fn log_emission(&self, t: usize, z: f64) -> f64 {
        self.grid.iter().position(|&g| g == z).map_or(f64::NEG_INFINITY, |i| self.lik(t, i).ln())
    }

    fn increment_range(&self, _t: usize) -> (f64, f64) {
        (-4.0, 4.0)
    }
}

/// Uniform proposal over the grid points.
pub struct GridProposal(pub Vec<f64>);

impl Proposal for GridProposal {
    fn sample(&self, _t: usize, _k: usize, _count: usize, rng: &mut dyn rand::RngCore) -> f64 {
        self.0[rng.random_range(0..self.0.len())]
    }

    fn log_density(&self, _t: usize, z: f64) -> f64 {
        if self.0.contains(&z) {
            -(self.0.len() as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn ln_normal(x: f64, m: f64, sd: f64) -> f64 {
    let e = (x - m) / sd;
    -0.5 * e * e - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `z₀ ~ N(0, s₀²)`, `zₜ − zₜ₋₁ ~ N(1, q²)`, `yₜ ~ N(zₜ, σ²)`; the drift
/// keeps the monotonicity constraint from removing appreciable mass.
pub struct LinearGaussian {
    pub obs: Vec<f64>,
    pub s0: f64,
    pub q: f64,
    pub sigma: f64,
}

impl LinearGaussian {
    pub fn example(len: usize) -> Self {
        Self {
            obs: (0..len).map(|t| t as f64 + 0.3 * (3.0 * t as f64).sin()).collect(),
            s0: 0.5,
            q: 0.15,
            sigma: 0.3,
        }
    }

    /// Rauch–Tung–Striebel smoother means and variances.
    pub fn kalman_smoother(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.obs.len();
        let (mut mf, mut pf, mut mp, mut pp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let r = self.sigma * self.sigma;
        for t in 0..n {
            let (m, p) = if t == 0 {
                (0.0, self.s0 * self.s0)
            } else {
                (mf[t - 1] + 1.0, pf[t - 1] + self.q * self.q)
            };
            mp[t] = m;
            pp[t] = p;
            let k = p / (p + r);
            mf[t] = m + k * (self.obs[t] - m);
            pf[t] = (1.0 - k) * p;
        }
        let (mut ms, mut ps) = (mf.clone(), pf.clone());
        for t in (0..n - 1).rev() {
            let c = pf[t] / pp[t + 1];
            ms[t] = mf[t] + c * (ms[t + 1] - mp[t + 1]);
            ps[t] = pf[t] + c * c * (ps[t + 1] - pp[t + 1]);
        }
        (ms, ps)
    }
}

impl StateSpaceModel for LinearGaussian {
    fn len(&self) -> usize {
        self.obs.len()
    }

    fn domain(&self) -> (f64, f64) {
        (-10.0, self.obs.len() as f64 + 10.0)
    }

    fn initial_support(&self) -> (f64, f64) {
        (-6.0 * self.s0, 6.0 * self.s0)
    }

    fn log_initial(&self, z: f64, _w: usize) -> f64 {
        if z.abs() > 6.0 * self.s0 {
            f64::NEG_INFINITY
        } else {
            ln_normal(z, 0.0, self.s0)
        }
    }

    fn log_kernel(&self, _t: usize, z_prev: f64, z: f64, _to: usize) -> f64 {
        if z <= z_prev {
            f64::NEG_INFINITY
        } else {
            ln_normal(z - z_prev, 1.0, self.q)
        }
    }

    fn log_emission(&self, t: usize, z: f64) -> f64 {
        ln_normal(self.obs[t], z, self.sigma)
    }

    fn increment_range(&self, _t: usize) -> (f64, f64) {
        ((1.0 - 6.0 * self.q).max(1e-9), 1.0 + 6.0 * self.q)
    }
}
