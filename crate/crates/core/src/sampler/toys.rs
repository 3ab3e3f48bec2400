//! Small models with exact posteriors, used as oracles for the sampler.

use super::{Proposal, StateSpaceModel};
use rand::Rng;

/// Finite-state HMM embedded in the continuous interface: states are grid
/// points, transitions a pmf matrix, Gaussian emissions.
pub struct DiscreteToy {
    pub grid: Vec<f64>,
    pub initial: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub obs: Vec<f64>,
    pub obs_sd: f64,
    pub flat_emission: bool,
}

impl DiscreteToy {
    pub fn example() -> Self {
        let grid = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let trans = vec![
            vec![0.5, 0.3, 0.1, 0.05, 0.05],
            vec![0.1, 0.5, 0.3, 0.05, 0.05],
            vec![0.05, 0.1, 0.5, 0.3, 0.05],
            vec![0.05, 0.05, 0.1, 0.5, 0.3],
            vec![0.3, 0.05, 0.05, 0.1, 0.5],
        ];
        Self {
            grid,
            initial: vec![0.4, 0.3, 0.1, 0.1, 0.1],
            trans,
            obs: vec![0.2, 1.3, 1.8, 3.4, 3.9, 0.5],
            obs_sd: 1.0,
            flat_emission: false,
        }
    }

    pub fn index_of(&self, z: f64) -> usize {
        self.grid.iter().position(|&g| g == z).expect("grid value")
    }

    fn lik(&self, t: usize, i: usize) -> f64 {
        if self.flat_emission {
            return 1.0;
        }
        let e = (self.obs[t] - self.grid[i]) / self.obs_sd;
        (-0.5 * e * e).exp()
    }

    fn forward(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut out = Vec::new();
        let mut a: Vec<f64> = (0..n).map(|i| self.initial[i] * self.lik(0, i)).collect();
        let s: f64 = a.iter().sum();
        a.iter_mut().for_each(|x| *x /= s);
        out.push(a.clone());
        for t in 1..self.obs.len() {
            let mut b: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| a[i] * self.trans[i][j]).sum::<f64>() * self.lik(t, j))
                .collect();
            let s: f64 = b.iter().sum();
            b.iter_mut().for_each(|x| *x /= s);
            out.push(b.clone());
            a = b;
        }
        out
    }

    pub fn exact_filter(&self) -> Vec<Vec<f64>> {
        self.forward()
    }

    pub fn exact_smoother(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let f = self.forward();
        let t_len = self.obs.len();
        let mut beta = vec![vec![1.0; n]; t_len];
        for t in (0..t_len - 1).rev() {
            for i in 0..n {
                beta[t][i] = (0..n).map(|j| self.trans[i][j] * self.lik(t + 1, j) * beta[t + 1][j]).sum();
            }
            let s: f64 = beta[t].iter().sum();
            beta[t].iter_mut().for_each(|x| *x /= s);
        }
        (0..t_len)
            .map(|t| {
                let mut g: Vec<f64> = (0..n).map(|i| f[t][i] * beta[t][i]).collect();
                let s: f64 = g.iter().sum();
                g.iter_mut().for_each(|x| *x /= s);
                g
            })
            .collect()
    }

    pub fn prior_marginals(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut out = vec![self.initial.clone()];
        for _ in 1..self.obs.len() {
            let a = out.last().unwrap();
            let b = (0..n).map(|j| (0..n).map(|i| a[i] * self.trans[i][j]).sum()).collect();
            out.push(b);
        }
        out
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
        match self.grid.iter().position(|&g| g == z) {
            Some(i) => self.initial[i].ln(),
            None => f64::NEG_INFINITY,
        }
    }

    fn log_kernel(&self, _t: usize, z_prev: f64, z: f64, _to: usize) -> f64 {
        self.trans[self.index_of(z_prev)][self.index_of(z)].ln()
    }

    fn log_emission(&self, t: usize, z: f64) -> f64 {
        match self.grid.iter().position(|&g| g == z) {
            Some(i) => self.lik(t, i).ln(),
            None => f64::NEG_INFINITY,
        }
    }

    fn increment_range(&self, _t: usize) -> (f64, f64) {
        (-4.0, 4.0)
    }
}

/// Uniform over a finite set of points (a pmf proposal).
pub struct GridProposal {
    points: Vec<f64>,
}

impl GridProposal {
    pub fn new(points: Vec<f64>, _len: usize) -> Self {
        Self { points }
    }
}

impl Proposal for GridProposal {
    fn sample(&self, _t: usize, _k: usize, _count: usize, rng: &mut dyn rand::RngCore) -> f64 {
        self.points[rng.random_range(0..self.points.len())]
    }

    fn log_density(&self, _t: usize, z: f64) -> f64 {
        if self.points.contains(&z) {
            -(self.points.len() as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Linear-Gaussian chain with a strong positive drift, so the monotone
/// truncation removes negligible mass: `z₀ ~ N(0, s₀²)`,
/// `zₜ − zₜ₋₁ ~ N(1, q²)`, `yₜ ~ N(zₜ, σ²)`.
pub struct RandomWalkToy {
    pub obs: Vec<f64>,
    pub s0: f64,
    pub q: f64,
    pub sigma: f64,
}

fn ln_normal(x: f64, m: f64, sd: f64) -> f64 {
    let e = (x - m) / sd;
    -0.5 * e * e - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

impl RandomWalkToy {
    pub fn example(t_len: usize) -> Self {
        let obs = (0..t_len).map(|t| t as f64 + 0.3 * (3.0 * t as f64).sin()).collect();
        Self {
            obs,
            s0: 0.5,
            q: 0.15,
            sigma: 0.3,
        }
    }

    /// Rauch–Tung–Striebel smoother means and variances.
    pub fn kalman_smoother(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.obs.len();
        let (mut mf, mut pf) = (vec![0.0; n], vec![0.0; n]);
        let (mut mp, mut pp) = (vec![0.0; n], vec![0.0; n]);
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

impl StateSpaceModel for RandomWalkToy {
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
