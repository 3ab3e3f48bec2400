use rand::Rng;

use super::StateSpaceModel;
use crate::error::{Error, Result};

/// Per-step particle proposal.
pub trait Proposal: Sync {
    /// Draw `k` of `count` at step `t`; implementations may stratify on `k`.
    fn sample(&self, t: usize, k: usize, count: usize, rng: &mut dyn rand::RngCore) -> f64;
    fn log_density(&self, t: usize, z: f64) -> f64;
}

/// Uniform over the feasible range of each step, found by pushing the
/// initial support forward with the largest and smallest increments and
/// then pulling the final range back.
#[derive(Debug, Clone)]
pub struct CorridorProposal {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CorridorProposal {
    pub fn new<M: StateSpaceModel + ?Sized>(model: &M) -> Result<Self> {
        let t_len = model.len();
        let (dlo, dhi) = model.domain();
        let (s0, s1) = model.initial_support();
        let mut lo = vec![0.0; t_len];
        let mut hi = vec![0.0; t_len];
        lo[0] = s0.max(dlo);
        hi[0] = s1.min(dhi);
        let ranges: Vec<(f64, f64)> = (0..t_len)
            .map(|t| if t == 0 { (0.0, 0.0) } else { model.increment_range(t) })
            .collect();
        for t in 1..t_len {
            lo[t] = (lo[t - 1] + ranges[t].0).max(dlo);
            hi[t] = (hi[t - 1] + ranges[t].1).min(dhi);
        }
        for t in (0..t_len.saturating_sub(1)).rev() {
            hi[t] = hi[t].min(hi[t + 1] - ranges[t + 1].0);
            lo[t] = lo[t].max(lo[t + 1] - ranges[t + 1].1);
        }
        for t in 0..t_len {
            if !(hi[t] > lo[t]) {
                return Err(Error::invalid(format!(
                    "no feasible alignment: the domain cannot hold step {t} under the transition prior"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn bounds(&self, t: usize) -> (f64, f64) {
        (self.lo[t], self.hi[t])
    }
}

impl Proposal for CorridorProposal {
    fn sample(&self, t: usize, k: usize, count: usize, rng: &mut dyn rand::RngCore) -> f64 {
        let u: f64 = rng.random();
        let w = self.hi[t] - self.lo[t];
        let v = self.lo[t] + w * (k as f64 + u) / count as f64;
        v.min(self.hi[t])
    }

    fn log_density(&self, t: usize, z: f64) -> f64 {
        if z >= self.lo[t] && z <= self.hi[t] {
            -(self.hi[t] - self.lo[t]).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Equal mixture of uniform intervals `(z̃ₗ − d, z̃ₗ + d)` around the
/// previous round's samples.
#[derive(Debug, Clone)]
pub struct BankProposal {
    /// Sorted bank values per step.
    sorted: Vec<Vec<f64>>,
    d: f64,
}

impl BankProposal {
    /// `bank[l][t]` is step `t` of previous sample `l`.
    pub fn new(bank: &[Vec<f64>], d: f64) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::invalid("proposal bank is empty"));
        }
        if !(d > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {d}")));
        }
        let t_len = bank[0].len();
        if bank.iter().any(|p| p.len() != t_len) {
            return Err(Error::invalid("bank paths differ in length"));
        }
        let sorted = (0..t_len)
            .map(|t| {
                let mut v: Vec<f64> = bank.iter().map(|p| p[t]).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Ok(Self { sorted, d })
    }

    pub fn bandwidth(&self) -> f64 {
        self.d
    }
}

impl Proposal for BankProposal {
    fn sample(&self, t: usize, _k: usize, _count: usize, rng: &mut dyn rand::RngCore) -> f64 {
        let v = &self.sorted[t];
        let c = v[rng.random_range(0..v.len())];
        c + self.d * (2.0 * rng.random::<f64>() - 1.0)
    }

    fn log_density(&self, t: usize, z: f64) -> f64 {
        let v = &self.sorted[t];
        // centers strictly within d of z
        let a = v.partition_point(|&c| c <= z - self.d);
        let b = v.partition_point(|&c| c < z + self.d);
        let count = b.saturating_sub(a);
        if count == 0 {
            f64::NEG_INFINITY
        } else {
            (count as f64).ln() - (v.len() as f64).ln() - (2.0 * self.d).ln()
        }
    }
}
