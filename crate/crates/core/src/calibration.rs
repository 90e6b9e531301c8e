//! Reference-only bootstrap of the null statistic distribution, the
//! shifted-gamma fit and p-values.
//!
//! The pool is split by random permutations into a pseudo reference of
//! `n_ref` points and a pseudo test batch of `n_test` points; the statistic
//! values across permutations sample its distribution under "the test batch
//! comes from the reference distribution".

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::checked_gamma_ur;

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_distances, Matrix, RngSeed, SampleSet};
use crate::statistic::{ResolvedStatistic, StatisticSpec};

/// Smallest accepted permutation count.
pub const MIN_PERMUTATIONS: usize = 20;

/// Pools up to this size get their pairwise distances cached once.
const POOL_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSamples {
    pub values: Vec<f64>,
    pub spec: StatisticSpec,
    pub n_ref: usize,
    pub n_test: usize,
    pub seed: RngSeed,
}

impl NullSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Bootstraps the statistic of `spec` with an `"auto"` kernel resolved on
/// the whole pool.
pub fn bootstrap_null(
    pool: &SampleSet,
    spec: &StatisticSpec,
    n_ref: usize,
    n_test: usize,
    permutations: usize,
    seed: RngSeed,
) -> Result<NullSamples> {
    let stat = ResolvedStatistic::resolve(spec, pool)?;
    bootstrap_resolved(pool, &stat, n_ref, n_test, permutations, seed)
}

pub fn bootstrap_resolved(
    pool: &SampleSet,
    stat: &ResolvedStatistic,
    n_ref: usize,
    n_test: usize,
    permutations: usize,
    seed: RngSeed,
) -> Result<NullSamples> {
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter {
            name: "permutations",
            reason: format!("need at least {MIN_PERMUTATIONS}, got {permutations}"),
        });
    }
    if n_ref == 0 || n_test == 0 {
        return Err(Error::InvalidParameter {
            name: "sizes",
            reason: format!("n_ref and n_test must be positive, got {n_ref} and {n_test}"),
        });
    }
    if pool.n() < n_ref + n_test {
        return Err(Error::PoolTooSmall {
            needed: n_ref + n_test,
            available: pool.n(),
        });
    }
    let uses_kernel = stat.kind.uses_kernel();
    let sq_cache = if pool.n() <= POOL_CACHE_LIMIT {
        Some(pairwise_sq_distances(pool, pool)?)
    } else {
        None
    };
    let gram_cache = match (&sq_cache, stat.kernel) {
        (Some(sq), Some(k)) if uses_kernel => Some(k.apply_sq(sq)),
        _ => None,
    };

    let evaluate_one = |t: usize| -> Result<f64> {
        let mut order: Vec<usize> = (0..pool.n()).collect();
        order.shuffle(&mut seed.stream(t as u64));
        let ref_idx = &order[..n_ref];
        let test_idx = &order[n_ref..n_ref + n_test];
        let solver_seed = seed.derive(t as u64);
        let eval = match &sq_cache {
            Some(sq) => {
                let sq_rt = sq.select(ref_idx, test_idx);
                let (kx, sq_tt) = if uses_kernel {
                    (gram_cache.as_ref().map(|g| g.select(ref_idx, ref_idx)), sq.select(test_idx, test_idx))
                } else {
                    (None, Matrix::zeros(0, 0))
                };
                stat.evaluate_blocks(kx.as_ref(), &sq_rt, &sq_tt, solver_seed)?
            }
            None => stat.evaluate(&pool.subset(ref_idx), &pool.subset(test_idx), solver_seed)?,
        };
        Ok(eval.value)
    };
    // results are collected in permutation order, independent of scheduling
    let values = (0..permutations)
        .into_par_iter()
        .map(evaluate_one)
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("null statistic"));
    }
    Ok(NullSamples {
        values,
        spec: stat.spec(),
        n_ref,
        n_test,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGammaFit {
    pub shift: f64,
    pub shape: f64,
    pub scale: f64,
}

impl ShiftedGammaFit {
    pub fn mean(&self) -> f64 {
        self.shift + self.shape * self.scale
    }

    pub fn p_value(&self, observed: f64) -> f64 {
        p_value(self, observed)
    }
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Method-of-moments gamma fit after shifting by the sample minimum minus
/// `range / count`, the typical gap between the smallest of `count` draws
/// and the lower end of the support.
pub fn fit_shifted_gamma(samples: &NullSamples) -> Result<ShiftedGammaFit> {
    fit_shifted_gamma_values(&samples.values)
}

pub fn fit_shifted_gamma_values(values: &[f64]) -> Result<ShiftedGammaFit> {
    if values.len() < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("need at least {MIN_PERMUTATIONS} values, got {}", values.len()),
        });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let shift = min - range / values.len() as f64;
    let (mean, var) = moments(values);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    // variance is shift-invariant; the shifted mean is strictly positive
    let shifted_mean = mean - shift;
    Ok(ShiftedGammaFit {
        shift,
        shape: shifted_mean * shifted_mean / var,
        scale: var / shifted_mean,
    })
}

/// Upper-tail probability of the fitted shifted gamma at `observed`.
pub fn p_value(fit: &ShiftedGammaFit, observed: f64) -> f64 {
    if observed.is_nan() {
        return f64::NAN;
    }
    if observed <= fit.shift {
        return 1.0;
    }
    if observed == f64::INFINITY {
        return 0.0;
    }
    let x = (observed - fit.shift) / fit.scale;
    checked_gamma_ur(fit.shape, x).unwrap_or(0.0).clamp(0.0, 1.0)
}

/// `(1 + #{values ≥ observed}) / (1 + count)`.
pub fn empirical_p_value(samples: &NullSamples, observed: f64) -> f64 {
    empirical_p_value_values(&samples.values, observed)
}

pub fn empirical_p_value_values(values: &[f64], observed: f64) -> f64 {
    let exceed = values.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (1 + values.len()) as f64
}

/// Parametric family used for the null distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    #[default]
    ShiftedGamma,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum NullFit {
    ShiftedGamma(ShiftedGammaFit),
    Normal { mean: f64, sd: f64 },
}

impl NullFit {
    pub fn fit(kind: FitKind, values: &[f64]) -> Result<Self> {
        match kind {
            FitKind::ShiftedGamma => fit_shifted_gamma_values(values).map(NullFit::ShiftedGamma),
            FitKind::Normal => {
                if values.len() < MIN_PERMUTATIONS {
                    return Err(Error::InvalidParameter {
                        name: "samples",
                        reason: format!("need at least {MIN_PERMUTATIONS} values, got {}", values.len()),
                    });
                }
                let (mean, var) = moments(values);
                if !(var > 0.0) {
                    return Err(Error::ZeroVariance);
                }
                Ok(NullFit::Normal { mean, sd: var.sqrt() })
            }
        }
    }

    pub fn p_value(&self, observed: f64) -> f64 {
        match self {
            NullFit::ShiftedGamma(g) => g.p_value(observed),
            NullFit::Normal { mean, sd } => {
                (0.5 * erfc((observed - mean) / (sd * std::f64::consts::SQRT_2))).clamp(0.0, 1.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NullFit::ShiftedGamma(g) => g.mean(),
            NullFit::Normal { mean, .. } => *mean,
        }
    }

    pub fn as_shifted_gamma(&self) -> Option<&ShiftedGammaFit> {
        match self {
            NullFit::ShiftedGamma(g) => Some(g),
            NullFit::Normal { .. } => None,
        }
    }
}
