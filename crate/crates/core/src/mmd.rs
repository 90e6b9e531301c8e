//! Kernels and the weighted (biased) MMD estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_distances, Matrix, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(−‖a − b‖² / (2ℓ²))`
    SquaredExponential,
    /// `exp(−‖a − b‖ / ℓ)`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lengthscale",
                reason: format!("must be positive, got {lengthscale}"),
            });
        }
        Ok(Self { family, lengthscale })
    }

    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, lengthscale)
    }

    pub fn exponential(lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Exponential, lengthscale)
    }

    /// Kernel value from a squared Euclidean distance.
    #[inline]
    pub fn eval_sq(&self, sq: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }
            KernelFamily::Exponential => (-sq.sqrt() / self.lengthscale).exp(),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_sq(crate::numerics::squared_euclidean(a, b))
    }

    pub(crate) fn apply_sq(&self, sq: &Matrix) -> Matrix {
        Matrix::from_fn(sq.rows(), sq.cols(), |i, j| self.eval_sq(sq[(i, j)]))
    }
}

/// Median of the pairwise Euclidean distances within `x`, or 1 if that
/// median is zero. Even counts average the two middle values.
pub fn median_lengthscale(x: &SampleSet) -> Result<f64> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "sample",
            reason: format!("median lengthscale needs at least 2 points, got {n}"),
        });
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(crate::numerics::squared_euclidean(x.point(i), x.point(j)).sqrt());
        }
    }
    let median = median_in_place(&mut d);
    Ok(if median > 0.0 { median } else { 1.0 })
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let k = v.len();
    let mid = k / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if k % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

pub fn kernel_matrix(a: &SampleSet, b: &SampleSet, k: &KernelSpec) -> Result<Matrix> {
    Ok(k.apply_sq(&pairwise_sq_distances(a, b)?))
}

/// Kernel matrices of a reference sample `X` (n points) and test sample `Y`
/// (m points).
#[derive(Debug, Clone, PartialEq)]
pub struct MmdParts {
    /// `n × n`
    pub kx: Matrix,
    /// `m × m`
    pub ky: Matrix,
    /// `m × n`, `K^{YX}_ij = k(y_i, x_j)`
    pub kyx: Matrix,
}

impl MmdParts {
    pub fn new(x: &SampleSet, y: &SampleSet, k: &KernelSpec) -> Result<Self> {
        x.ensure_same_dim(y)?;
        Ok(Self {
            kx: kernel_matrix(x, x, k)?,
            ky: kernel_matrix(y, y, k)?,
            kyx: kernel_matrix(y, x, k)?,
        })
    }

    pub fn from_matrices(kx: Matrix, ky: Matrix, kyx: Matrix) -> Result<Self> {
        let (n, m) = (kx.rows(), ky.rows());
        if !kx.is_square() || !ky.is_square() || kyx.rows() != m || kyx.cols() != n {
            return Err(Error::InvalidShape(format!(
                "inconsistent kernel blocks: Kx {}x{}, Ky {}x{}, Kyx {}x{}",
                kx.rows(),
                kx.cols(),
                ky.rows(),
                ky.cols(),
                kyx.rows(),
                kyx.cols()
            )));
        }
        Ok(Self { kx, ky, kyx })
    }

    pub fn n(&self) -> usize {
        self.kx.rows()
    }

    pub fn m(&self) -> usize {
        self.ky.rows()
    }

    /// `K^{XY} v`, the linear term of the objective in `w`.
    pub fn cross_term(&self, v: &[f64]) -> Vec<f64> {
        self.kyx.tr_mul_vec(v)
    }

    /// `wᵀKˣw + c − 2 wᵀb` where `c = vᵀKʸv` and `b = K^{XY} v` are fixed.
    pub(crate) fn objective(&self, w: &[f64], vkv: f64, cross: &[f64]) -> f64 {
        self.kx.bilinear(w, w) + vkv - 2.0 * crate::numerics::dot(w, cross)
    }
}

fn check_weights(name: &'static str, w: &[f64], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: w.len(),
        });
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("weights sum to {s}, expected 1"),
        });
    }
    Ok(())
}

/// `wᵀKˣw + vᵀKʸv − 2vᵀK^{YX}w`, unclamped.
pub fn weighted_mmd_sq(parts: &MmdParts, w: &[f64], v: &[f64]) -> Result<f64> {
    check_weights("w", w, parts.n())?;
    check_weights("v", v, parts.m())?;
    Ok(parts.kx.bilinear(w, w) + parts.ky.bilinear(v, v) - 2.0 * parts.kyx.bilinear(v, w))
}

/// Biased MMD² with uniform weights.
pub fn mmd_sq(x: &SampleSet, y: &SampleSet, k: &KernelSpec) -> Result<f64> {
    let parts = MmdParts::new(x, y, k)?;
    weighted_mmd_sq(&parts, &uniform(x.n()), &uniform(y.n()))
}

pub(crate) fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
