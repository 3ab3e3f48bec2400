use crate::error::{Error, Result};

/// Covariance family. The profile uses Ornstein–Uhlenbeck; the squared
/// exponential is kept for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    #[default]
    OrnsteinUhlenbeck,
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscale: f64,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        let p = Self {
            variance,
            lengthscale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite())
            || !(self.lengthscale > 0.0 && self.lengthscale.is_finite())
        {
            return Err(Error::invalid(format!(
                "kernel parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `variance * exp(-|z1 - z2| / lengthscale)`.
pub fn ou_kernel(z1: f64, z2: f64, params: &KernelParams) -> f64 {
    params.variance * (-(z1 - z2).abs() / params.lengthscale).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub params: KernelParams,
}

impl Kernel {
    pub fn ou(params: KernelParams) -> Self {
        Self {
            kind: KernelKind::OrnsteinUhlenbeck,
            params,
        }
    }

    #[inline]
    pub fn eval(&self, z1: f64, z2: f64) -> f64 {
        match self.kind {
            KernelKind::OrnsteinUhlenbeck => ou_kernel(z1, z2, &self.params),
            KernelKind::SquaredExponential => {
                let d = (z1 - z2) / self.params.lengthscale;
                self.params.variance * (-0.5 * d * d).exp()
            }
        }
    }

    /// Derivative of `eval` with respect to the log lengthscale.
    pub fn d_log_lengthscale(&self, z1: f64, z2: f64) -> f64 {
        let k = self.eval(z1, z2);
        let d = (z1 - z2).abs() / self.params.lengthscale;
        match self.kind {
            KernelKind::OrnsteinUhlenbeck => k * d,
            KernelKind::SquaredExponential => k * d * d,
        }
    }

    pub fn with_params(&self, params: KernelParams) -> Self {
        Self {
            kind: self.kind,
            params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_values() {
        let p = KernelParams::new(2.0, 1.0).unwrap();
        assert_eq!(ou_kernel(0.3, 0.3, &p), 2.0);
        let p = KernelParams::new(1.0, 1.0).unwrap();
        assert!((ou_kernel(0.0, 1.0, &p) - (-1f64).exp()).abs() < 1e-15);
        assert!((ou_kernel(1.0, 0.0, &p) - ou_kernel(0.0, 1.0, &p)).abs() == 0.0);
        let p = KernelParams::new(1.0, 1.5).unwrap();
        assert!((ou_kernel(0.0, 3.0, &p) - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, f64::NAN).is_err());
    }
}
