//! Rotation-invariant convex losses with gradients and prediction-space
//! Hessians.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    /// `softplus(‖z−y‖²/D) − ln 2`
    ConvexSoftplusRegression,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "convex-softplus-regression" | "softplus" => Ok(LossKind::ConvexSoftplusRegression),
            other => Err(Error::Config(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Central-difference step for the softplus loss Hessian.
const HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub dimension: usize,
}

impl LossModel {
    pub fn new(kind: LossKind, dimension: usize) -> Self {
        Self { kind, dimension }
    }

    pub fn mse(dimension: usize) -> Self {
        Self::new(LossKind::Mse, dimension)
    }

    /// True when the loss is exactly quadratic, so the variance form of the
    /// equivariance error coincides with `L − L_mean`.
    pub fn is_quadratic(&self) -> bool {
        self.kind == LossKind::Mse
    }

    fn check(&self, z: &[f64], y: &[f64]) -> Result<()> {
        check_len("loss prediction", z.len(), self.dimension)?;
        check_len("loss target", y.len(), self.dimension)
    }

    fn mean_sq(&self, z: &[f64], y: &[f64]) -> f64 {
        z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.dimension as f64
    }

    pub fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64> {
        self.check(z, y)?;
        let q = self.mean_sq(z, y);
        Ok(match self.kind {
            LossKind::Mse => q,
            LossKind::ConvexSoftplusRegression => softplus(q) - std::f64::consts::LN_2,
        })
    }

    pub fn gradient(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(z, y)?;
        let d = self.dimension as f64;
        let scale = match self.kind {
            LossKind::Mse => 2.0 / d,
            LossKind::ConvexSoftplusRegression => 2.0 / d * sigmoid(self.mean_sq(z, y)),
        };
        Ok(z.iter().zip(y).map(|(a, b)| scale * (a - b)).collect())
    }

    /// Hessian with respect to the prediction `z`.
    pub fn hessian(&self, z: &[f64], y: &[f64]) -> Result<Matrix> {
        self.check(z, y)?;
        let n = self.dimension;
        match self.kind {
            LossKind::Mse => Ok(Matrix::identity(n).scale(2.0 / n as f64)),
            LossKind::ConvexSoftplusRegression => {
                let mut h = Matrix::zeros(n, n);
                let mut probe = z.to_vec();
                for j in 0..n {
                    probe[j] = z[j] + HESSIAN_STEP;
                    let plus = self.gradient(&probe, y)?;
                    probe[j] = z[j] - HESSIAN_STEP;
                    let minus = self.gradient(&probe, y)?;
                    probe[j] = z[j];
                    for i in 0..n {
                        h[(i, j)] = (plus[i] - minus[i]) / (2.0 * HESSIAN_STEP);
                    }
                }
                Ok(h.symmetrized())
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
