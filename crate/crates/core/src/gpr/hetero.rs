//! Input-dependent observation noise estimated by Nadaraya–Watson smoothing
//! of squared residuals, alternated with the GPR fit until the noise settles.

use super::kernel::Kernel;
use super::sparse::{GprFit, NoiseModel, PriorMean};
use crate::error::{Error, Result};
use std::sync::Arc;

const MAX_ITERATIONS: usize = 50;
const TOLERANCE: f64 = 1e-4;

/// Gaussian-kernel smoother over `(inputs, targets)` with a fixed bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelNoise {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    bandwidth: f64,
    floor: f64,
}

impl KernelNoise {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, bandwidth: f64, floor: f64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyNeighborhood { query: f64::NAN });
        }
        if !(bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            inputs,
            targets,
            bandwidth,
            floor,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, z: f64) -> f64 {
        smooth(&self.inputs, &self.targets, self.bandwidth, z)
            .unwrap_or(self.floor)
            .max(self.floor)
    }
}

/// Nadaraya–Watson estimate at `z`. Weights are shifted by the nearest
/// input's so the sum never underflows.
fn smooth(inputs: &[f64], targets: &[f64], h: f64, z: f64) -> Result<f64> {
    let inv = 0.5 / (h * h);
    let dmin = inputs
        .iter()
        .map(|&x| (z - x) * (z - x))
        .fold(f64::INFINITY, f64::min);
    if !dmin.is_finite() {
        return Err(Error::EmptyNeighborhood { query: z });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &t) in inputs.iter().zip(targets) {
        let w = (-((z - x) * (z - x) - dmin) * inv).exp();
        num += w * t;
        den += w;
    }
    if !(den > 0.0) {
        return Err(Error::EmptyNeighborhood { query: z });
    }
    Ok(num / den)
}

/// `Λ(z) = Σₙ ((yₙ − μ̄(Zₙ))² + ν̄(Zₙ)) K_h(z − Zₙ) / Σₙ K_h(z − Zₙ)` with a
/// Gaussian density kernel `K_h`.
pub fn heteroscedastic_variance(
    mean_at_inputs: &[f64],
    var_at_inputs: &[f64],
    inputs: &[f64],
    outputs: &[f64],
    bandwidth: f64,
    z: f64,
) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let targets: Vec<f64> = outputs
        .iter()
        .zip(mean_at_inputs)
        .zip(var_at_inputs)
        .map(|((y, m), v)| (y - m) * (y - m) + v)
        .collect();
    smooth(inputs, &targets, bandwidth, z)
}

/// K-nearest-neighbor bandwidth with `k = ceil(sqrt(N))`: the median over
/// inputs of the distance to the k-th nearest other input.
pub fn knn_bandwidth(inputs: &[f64]) -> f64 {
    let n = inputs.len();
    if n < 2 {
        return 1.0;
    }
    let mut xs = inputs.to_vec();
    xs.sort_by(f64::total_cmp);
    let k = ((n as f64).sqrt().ceil() as usize).min(n - 1).max(1);
    let mut dists: Vec<f64> = (0..n)
        .map(|i| {
            // walk outwards k steps, always taking the closer side
            let (mut l, mut r) = (i as isize - 1, i + 1);
            let mut d = 0.0;
            for _ in 0..k {
                let dl = if l >= 0 { xs[i] - xs[l as usize] } else { f64::INFINITY };
                let dr = if r < n { xs[r] - xs[i] } else { f64::INFINITY };
                if dl <= dr {
                    d = dl;
                    l -= 1;
                } else {
                    d = dr;
                    r += 1;
                }
            }
            d
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let h = dists[n / 2];
    if h > 0.0 {
        h
    } else {
        let span = xs[n - 1] - xs[0];
        if span > 0.0 {
            span / n as f64
        } else {
            1.0
        }
    }
}

/// Alternates the GPR fit given `Λ(Zₙ)` and the kernel-regression update of
/// `Λ(Zₙ)` until the largest relative change falls below 1e-4 (at most 50
/// rounds). `init_noise` seeds `Λ`.
pub fn fit_heteroscedastic(
    kernel: Kernel,
    pseudo_inputs: Vec<f64>,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    prior_mean: PriorMean,
    init_noise: f64,
) -> Result<GprFit> {
    let n = inputs.len();
    let bandwidth = knn_bandwidth(&inputs);
    let floor = (1e-10 * kernel.params.variance).max(1e-300);
    let mut lambda = vec![init_noise.max(floor); n];
    if n == 0 {
        let mut fit = GprFit::new(
            kernel,
            pseudo_inputs,
            inputs,
            outputs,
            prior_mean,
            vec![],
            NoiseModel::Constant(init_noise.max(floor)),
        )?;
        fit.iterations = 1;
        return Ok(fit);
    }

    let mut iterations = 0;
    let mut targets = vec![0.0; n];
    loop {
        iterations += 1;
        let fit = GprFit::new(
            kernel,
            pseudo_inputs.clone(),
            inputs.clone(),
            outputs.clone(),
            prior_mean.clone(),
            lambda.clone(),
            NoiseModel::Constant(init_noise),
        )?;
        for i in 0..n {
            let (m, v) = fit.predict_latent(inputs[i]);
            targets[i] = (outputs[i] - m) * (outputs[i] - m) + v;
        }
        let mut change: f64 = 0.0;
        let updated: Vec<f64> = inputs
            .iter()
            .map(|&z| smooth(&inputs, &targets, bandwidth, z).map(|v| v.max(floor)))
            .collect::<Result<_>>()?;
        for (old, new) in lambda.iter().zip(&updated) {
            change = change.max((new - old).abs() / old);
        }
        lambda = updated;
        if change < TOLERANCE || iterations >= MAX_ITERATIONS || n == 1 {
            break;
        }
    }
    let noise = KernelNoise::new(inputs.clone(), targets, bandwidth, floor)?;
    let mut fit = GprFit::new(
        kernel,
        pseudo_inputs,
        inputs,
        outputs,
        prior_mean,
        lambda,
        NoiseModel::KernelRegression(Arc::new(noise)),
    )?;
    fit.iterations = iterations;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::super::kernel::KernelParams;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_point_is_constant() {
        for z in [-3.0, 0.0, 0.5, 10.0] {
            let v = heteroscedastic_variance(&[0.2], &[0.05], &[0.5], &[1.0], 0.3, z).unwrap();
            assert!((v - (0.64 + 0.05)).abs() < 1e-12);
        }
    }

    #[test]
    fn far_queries_do_not_underflow() {
        let v = heteroscedastic_variance(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 1.0], &[1.0, 2.0], 1e-3, 1e6)
            .unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert!(heteroscedastic_variance(&[], &[], &[], &[], 1.0, 0.0).is_err());
    }

    #[test]
    fn homoscedastic_noise_recovered() {
        // residuals from a known mean: the smoother averages y^2 with sd 0.1
        let mut inside = 0;
        let mut total = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nd = Normal::new(0.0, 0.1).unwrap();
            let x: Vec<f64> = (0..500).map(|i| i as f64 / 499.0).collect();
            let y: Vec<f64> = x.iter().map(|_| nd.sample(&mut rng)).collect();
            let zeros = vec![0.0; 500];
            let h = knn_bandwidth(&x);
            for q in [0.05, 0.3, 0.5, 0.8, 0.95] {
                let v = heteroscedastic_variance(&zeros, &zeros, &x, &y, h, q).unwrap();
                total += 1;
                if (0.005..=0.02).contains(&v) {
                    inside += 1;
                }
            }
        }
        assert_eq!(inside, total);
    }

    #[test]
    fn two_cluster_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Normal::new(0.0, 0.1).unwrap();
        let b = Normal::new(0.0, 0.5).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..300 {
            x.push(i as f64 / 299.0);
            y.push(a.sample(&mut rng));
        }
        for i in 0..300 {
            x.push(3.0 + i as f64 / 299.0);
            y.push(b.sample(&mut rng));
        }
        let zeros = vec![0.0; x.len()];
        let h = knn_bandwidth(&x);
        let va = heteroscedastic_variance(&zeros, &zeros, &x, &y, h, 0.5).unwrap();
        let vb = heteroscedastic_variance(&zeros, &zeros, &x, &y, h, 3.5).unwrap();
        let ratio = vb / va;
        assert!((10.0..=40.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn knn_bandwidth_on_uniform_grid() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        // k = 10 neighbours, alternating sides: 5 units away for interior points
        assert_eq!(knn_bandwidth(&x), 5.0);
        assert_eq!(knn_bandwidth(&[1.0]), 1.0);
    }

    #[test]
    fn fit_converges_on_homoscedastic_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nd = Normal::new(0.0, 0.2).unwrap();
        let x: Vec<f64> = (0..300).map(|i| -1.0 + 2.0 * i as f64 / 299.0).collect();
        let y: Vec<f64> = x.iter().map(|&t| (2.0 * t).sin() + nd.sample(&mut rng)).collect();
        let pseudo: Vec<f64> = (0..40).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 40.0).collect();
        let k = Kernel::ou(KernelParams::new(0.5, 0.5).unwrap());
        let fit = fit_heteroscedastic(k, pseudo, x, y, PriorMean::Constant(0.0), 0.1).unwrap();
        assert!(fit.iterations < 50);
        let lam = fit.noise_at_inputs();
        let mean = lam.iter().sum::<f64>() / lam.len() as f64;
        let sd = (lam.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / lam.len() as f64).sqrt();
        assert!(sd / mean < 0.5, "cv {}", sd / mean);
    }

    #[test]
    fn single_point_fit_takes_one_round() {
        let k = Kernel::ou(KernelParams::new(1.0, 0.5).unwrap());
        let fit =
            fit_heteroscedastic(k, vec![0.0], vec![0.0], vec![1.0], PriorMean::Constant(0.0), 0.1)
                .unwrap();
        assert_eq!(fit.iterations, 1);
    }
}
