//! Variational sparse GPR with pseudo-inputs.
//!
//! With `Kuu` the pseudo-input Gram matrix, `Kuf` the cross-covariance to the
//! training inputs and `Λ` the diagonal observation noise, the model keeps
//! `Σ = Kuu + Kuf Λ⁻¹ Kfu` in the factored form `Σ = (Luu LB)(Luu LB)ᵀ` with
//! `Luu Luuᵀ = Kuu`, `A = Luu⁻¹ Kuf Λ^{-1/2}` and `LB LBᵀ = I + A Aᵀ`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::kernel::Kernel;
use crate::data::bracket;
use crate::error::{Error, Result};

/// Largest jitter (relative to the kernel variance) tried before giving up.
const MAX_JITTER: f64 = 1e-2;
const FIRST_JITTER: f64 = 1e-8;
/// Cholesky pivots below this fraction of the variance trigger jitter.
const MIN_PIVOT: f64 = 1e-10;

/// GPR prior mean: a constant or a tabulated function (e.g. an earlier
/// profile), clamped to its end values outside the table.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorMean {
    Constant(f64),
    Tabulated(Arc<(Vec<f64>, Vec<f64>)>),
}

impl PriorMean {
    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Self {
        PriorMean::Tabulated(Arc::new((grid, values)))
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            PriorMean::Constant(c) => *c,
            PriorMean::Tabulated(t) => {
                let (grid, vals) = (&t.0, &t.1);
                if z <= grid[0] {
                    vals[0]
                } else if z >= grid[grid.len() - 1] {
                    vals[vals.len() - 1]
                } else {
                    let (i, f) = bracket(grid, z);
                    vals[i] + f * (vals[i + 1] - vals[i])
                }
            }
        }
    }
}

/// Observation-noise variance as a function of the input.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Constant(f64),
    /// Nadaraya–Watson smoother of squared residuals plus posterior variances.
    KernelRegression(Arc<super::hetero::KernelNoise>),
}

impl NoiseModel {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            NoiseModel::Constant(v) => *v,
            NoiseModel::KernelRegression(k) => k.eval(z),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, NoiseModel::Constant(_))
    }
}

/// Lower Cholesky factor of a symmetric matrix, adding `jitter * scale` to
/// the diagonal when the plain factorization fails or is nearly singular.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let mut jitter = 0.0;
    loop {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter * scale;
        }
        if let Some(ch) = a.cholesky() {
            let l = ch.unpack();
            let ok = (0..n).all(|i| l[(i, i)] * l[(i, i)] > MIN_PIVOT * scale);
            if ok || jitter >= MAX_JITTER {
                return Ok((l, jitter * scale));
            }
        }
        jitter = if jitter == 0.0 {
            FIRST_JITTER
        } else {
            jitter * 10.0
        };
        if jitter > MAX_JITTER * 1.000_001 {
            return Err(Error::SingularSystem {
                jitter: MAX_JITTER * scale,
            });
        }
    }
}

/// Solves `L x = b` in place for lower-triangular `L`.
#[inline]
pub(crate) fn forward_sub(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
#[inline]
pub(crate) fn backward_sub_t(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[(j, i)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// A fitted sparse GPR.
#[derive(Debug, Clone)]
pub struct GprFit {
    kernel: Kernel,
    pseudo_inputs: Vec<f64>,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    prior_mean: PriorMean,
    noise_at_inputs: Vec<f64>,
    noise: NoiseModel,
    luu: DMatrix<f64>,
    lb: DMatrix<f64>,
    /// `Luu⁻¹ Kuf`, M×N.
    a: DMatrix<f64>,
    /// `Σ⁻¹ Kuf Λ⁻¹ (y - m)`.
    weights: Vec<f64>,
    jitter: f64,
    /// Heteroscedastic iterations used (0 when the noise was given).
    pub iterations: usize,
}

impl GprFit {
    /// Fits the sparse GPR. `noise_at_inputs[n]` is `Λ(Z_n)`; `noise` is the
    /// noise function used at query time.
    pub fn new(
        kernel: Kernel,
        pseudo_inputs: Vec<f64>,
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        prior_mean: PriorMean,
        noise_at_inputs: Vec<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        kernel.params.validate()?;
        let (m, n) = (pseudo_inputs.len(), inputs.len());
        if outputs.len() != n || noise_at_inputs.len() != n {
            return Err(Error::invalid("GPR inputs, outputs and noise differ in length"));
        }
        if n > 0 && m > n {
            return Err(Error::invalid(format!(
                "{m} pseudo-inputs exceed {n} training inputs"
            )));
        }
        if noise_at_inputs.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("observation noise must be positive and finite"));
        }
        let var = kernel.params.variance;
        let kuu = DMatrix::from_fn(m, m, |i, j| kernel.eval(pseudo_inputs[i], pseudo_inputs[j]));
        let (luu, jitter) = cholesky_with_jitter(&kuu, var)?;

        // a = Luu⁻¹ Kuf
        let mut a = DMatrix::from_fn(m, n, |i, j| kernel.eval(pseudo_inputs[i], inputs[j]));
        let mut col = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                col[i] = a[(i, j)];
            }
            forward_sub(&luu, &mut col);
            for i in 0..m {
                a[(i, j)] = col[i];
            }
        }
        // B = I + A Aᵀ with A = a Λ^{-1/2}
        let mut b = DMatrix::<f64>::identity(m, m);
        for j in 0..n {
            let inv = 1.0 / noise_at_inputs[j];
            for p in 0..m {
                let ap = a[(p, j)] * inv;
                if ap == 0.0 {
                    continue;
                }
                for q in 0..=p {
                    b[(p, q)] += ap * a[(q, j)];
                }
            }
        }
        for p in 0..m {
            for q in 0..p {
                b[(q, p)] = b[(p, q)];
            }
        }
        let lb = b
            .cholesky()
            .ok_or(Error::SingularSystem { jitter })?
            .unpack();

        // weights = Luu⁻ᵀ LB⁻ᵀ LB⁻¹ a Λ⁻¹ r
        let mut c = vec![0.0; m];
        for j in 0..n {
            let r = (outputs[j] - prior_mean.eval(inputs[j])) / noise_at_inputs[j];
            for i in 0..m {
                c[i] += a[(i, j)] * r;
            }
        }
        forward_sub(&lb, &mut c);
        backward_sub_t(&lb, &mut c);
        backward_sub_t(&luu, &mut c);

        Ok(Self {
            kernel,
            pseudo_inputs,
            inputs,
            outputs,
            prior_mean,
            noise_at_inputs,
            noise,
            luu,
            lb,
            a,
            weights: c,
            jitter,
            iterations: 0,
        })
    }

    /// Homoscedastic fit with constant noise `noise`.
    pub fn homoscedastic(
        kernel: Kernel,
        pseudo_inputs: Vec<f64>,
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        prior_mean: PriorMean,
        noise: f64,
    ) -> Result<Self> {
        let n = inputs.len();
        Self::new(
            kernel,
            pseudo_inputs,
            inputs,
            outputs,
            prior_mean,
            vec![noise; n],
            NoiseModel::Constant(noise),
        )
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn pseudo_inputs(&self) -> &[f64] {
        &self.pseudo_inputs
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.prior_mean
    }

    pub fn noise_at_inputs(&self) -> &[f64] {
        &self.noise_at_inputs
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and latent (noise-free) variance at `z`.
    pub fn predict_latent(&self, z: f64) -> (f64, f64) {
        let m = self.pseudo_inputs.len();
        let mut v: Vec<f64> = self.pseudo_inputs.iter().map(|&u| self.kernel.eval(z, u)).collect();
        let mean = self.prior_mean.eval(z) + v.iter().zip(&self.weights).map(|(k, w)| k * w).sum::<f64>();
        let kzz = self.kernel.eval(z, z);
        if m == 0 {
            return (mean, kzz);
        }
        forward_sub(&self.luu, &mut v);
        let q: f64 = v.iter().map(|x| x * x).sum();
        forward_sub(&self.lb, &mut v);
        let s: f64 = v.iter().map(|x| x * x).sum();
        (mean, (kzz - q + s).max(0.0))
    }

    /// Predictive mean and variance at `z`, the variance including `Λ(z)`.
    pub fn predict(&self, z: f64) -> (f64, f64) {
        let (mean, latent) = self.predict_latent(z);
        (mean, latent + self.noise.eval(z))
    }

    /// The collapsed variational bound split into its Gaussian
    /// log-likelihood term and the trace penalty
    /// `½ Σₙ (Kff,nn − Qff,nn) / Λₙ`. The objective is `gauss - trace`.
    pub fn objective_parts(&self) -> (f64, f64) {
        let (m, n) = (self.pseudo_inputs.len(), self.inputs.len());
        if n == 0 {
            return (0.0, 0.0);
        }
        let mut c = vec![0.0; m];
        let mut log_det = 0.0;
        let mut quad = 0.0;
        let mut trace = 0.0;
        for j in 0..n {
            let lam = self.noise_at_inputs[j];
            let r = self.outputs[j] - self.prior_mean.eval(self.inputs[j]);
            log_det += lam.ln();
            quad += r * r / lam;
            let mut qnn = 0.0;
            for i in 0..m {
                let aij = self.a[(i, j)];
                c[i] += aij * r / lam;
                qnn += aij * aij;
            }
            let knn = self.kernel.eval(self.inputs[j], self.inputs[j]);
            trace += (knn - qnn).max(0.0) / lam;
        }
        // c currently holds a Λ⁻¹ r; the Woodbury correction uses LB⁻¹ of it
        forward_sub(&self.lb, &mut c);
        let corr: f64 = c.iter().map(|x| x * x).sum();
        for i in 0..m {
            log_det += 2.0 * self.lb[(i, i)].ln();
        }
        let gauss = -0.5 * (n as f64 * (2.0 * PI).ln() + log_det + quad - corr);
        (gauss, 0.5 * trace)
    }

    /// Variational free-energy objective (to be maximized).
    pub fn objective(&self) -> f64 {
        let (g, t) = self.objective_parts();
        g - t
    }

    /// Analytic gradient of [`objective`](Self::objective) with respect to
    /// `(ln variance, ln lengthscale)`, followed by `ln λ` when the noise is a
    /// constant `λ`. Uses dense N×N algebra; intended for diagnostics.
    pub fn objective_gradient(&self) -> Result<Vec<f64>> {
        let (m, n) = (self.pseudo_inputs.len(), self.inputs.len());
        let k = &self.kernel;
        let zu = &self.pseudo_inputs;
        let zf = &self.inputs;
        let kuu = DMatrix::from_fn(m, m, |i, j| {
            k.eval(zu[i], zu[j]) + if i == j { self.jitter } else { 0.0 }
        });
        let kuf = DMatrix::from_fn(m, n, |i, j| k.eval(zu[i], zf[j]));
        let kuu_inv = kuu
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem { jitter: self.jitter })?
            .inverse();
        let p = &kuu_inv * &kuf; // M×N
        let q = kuf.transpose() * &p;
        let lam = DVector::from_column_slice(&self.noise_at_inputs);
        let mut c = q.clone();
        for i in 0..n {
            c[(i, i)] += lam[i];
        }
        let c_inv = c
            .cholesky()
            .ok_or(Error::SingularSystem { jitter: self.jitter })?
            .inverse();
        let r = DVector::from_fn(n, |i, _| self.outputs[i] - self.prior_mean.eval(zf[i]));
        let alpha = &c_inv * &r;

        let grad_for = |dkuu: DMatrix<f64>, dkuf: DMatrix<f64>, dkff_diag: Vec<f64>| -> f64 {
            let t = dkuf.transpose() * &p; // N×N
            let dq = &t + t.transpose() - p.transpose() * dkuu * &p;
            let g1 = 0.5 * (alpha.transpose() * &dq * &alpha)[(0, 0)]
                - 0.5 * (&c_inv.component_mul(&dq)).sum();
            let g2: f64 = (0..n)
                .map(|i| -0.5 * (dkff_diag[i] - dq[(i, i)]) / lam[i])
                .sum();
            g1 + g2
        };

        // ln variance: every kernel matrix (and the jitter) scales with the variance
        let g_var = grad_for(
            kuu.clone(),
            kuf.clone(),
            (0..n).map(|i| k.eval(zf[i], zf[i])).collect(),
        );
        let g_len = grad_for(
            DMatrix::from_fn(m, m, |i, j| k.d_log_lengthscale(zu[i], zu[j])),
            DMatrix::from_fn(m, n, |i, j| k.d_log_lengthscale(zu[i], zf[j])),
            vec![0.0; n],
        );
        let mut out = vec![g_var, g_len];
        if let NoiseModel::Constant(l) = self.noise {
            let g1 = 0.5 * l * alpha.dot(&alpha) - 0.5 * l * c_inv.trace();
            let g2: f64 = (0..n)
                .map(|i| 0.5 * (k.eval(zf[i], zf[i]) - q[(i, i)]) / l)
                .sum();
            out.push(g1 + g2);
        }
        Ok(out)
    }
}
