//! Exact discrete optimal transport and the dummy-point partial Wasserstein
//! distance.
//!
//! The partial problem matches only a fraction `alpha` of the reference mass
//! against the test sample. The remaining `1 - alpha` is routed to a single
//! distant point `Z` placed at distance `D = multiplier · max_ij ‖X_i − Y_j‖`
//! from every reference point. Because `D` exceeds every real distance, an
//! optimal coupling never prefers the dummy over a genuine match, so the real
//! block of the coupling is a best partial matching.

mod network_simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_exponent, pairwise_sq_distances, sq_to_power, Matrix, SampleSet};
use network_simplex::TransportSimplex;

/// Tolerance on marginal sums of a solved coupling.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Default `D / max distance` ratio for the dummy point.
pub const DEFAULT_DUMMY_MULTIPLIER: f64 = 1.1;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("measure weights"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must be finite and nonnegative".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("weights sum to {total}, expected 1"),
            });
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("measure weights"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// A transport plan between two measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub matrix: Matrix,
    pub row_marginal: DiscreteMeasure,
    pub col_marginal: DiscreteMeasure,
}

impl Coupling {
    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn max_marginal_error(&self) -> f64 {
        let p = &self.matrix;
        let mut err = 0.0f64;
        for (i, &mu) in self.row_marginal.weights().iter().enumerate() {
            let s: f64 = p.row(i).iter().sum();
            err = err.max((s - mu).abs());
        }
        let mut cols = vec![0.0; p.cols()];
        for i in 0..p.rows() {
            for (c, &v) in cols.iter_mut().zip(p.row(i)) {
                *c += v;
            }
        }
        for (s, &nu) in cols.iter().zip(self.col_marginal.weights()) {
            err = err.max((s - nu).abs());
        }
        err
    }

    pub fn objective(&self, cost: &Matrix) -> f64 {
        self.matrix
            .data()
            .iter()
            .zip(cost.data())
            .map(|(p, c)| p * c)
            .sum()
    }
}

/// Solves `min Σ C_ij P_ij` over couplings of `mu` and `nu` exactly.
pub fn solve_discrete_ot(cost: &Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    let matrix = solve_transport(cost, mu.weights(), nu.weights())?;
    let coupling = Coupling {
        matrix,
        row_marginal: mu.clone(),
        col_marginal: nu.clone(),
    };
    let err = coupling.max_marginal_error();
    if err > MARGINAL_TOL {
        return Err(Error::InvalidShape(format!(
            "solved coupling violates marginals by {err:e}"
        )));
    }
    Ok(coupling)
}

/// Transport solve on raw supply/demand vectors of equal total mass.
pub(crate) fn solve_transport(cost: &Matrix, supply: &[f64], demand: &[f64]) -> Result<Matrix> {
    let (n, m) = (supply.len(), demand.len());
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::InvalidShape(format!(
            "cost is {}x{}, marginals are {n} and {m}",
            cost.rows(),
            cost.cols()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Empty("transport marginals"));
    }
    if cost.data().iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidParameter {
            name: "cost",
            reason: "entries must be finite and nonnegative".into(),
        });
    }
    let source_mass: f64 = supply.iter().sum();
    let sink_mass: f64 = demand.iter().sum();
    if (source_mass - sink_mass).abs() > 1e-6 {
        return Err(Error::InfeasibleMarginals {
            source_mass,
            sink_mass,
        });
    }
    let mut simplex = TransportSimplex::new(cost, supply, demand);
    let limit = (50 * n * m).max(100_000);
    simplex.run(limit)?;
    Ok(simplex.flows())
}

/// Full Wasserstein-p distance between uniform empirical measures.
pub fn wasserstein(x: &SampleSet, y: &SampleSet, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let sq = pairwise_sq_distances(x, y)?;
    wasserstein_from_sq(&sq, p)
}

pub(crate) fn wasserstein_from_sq(sq: &Matrix, p: f64) -> Result<f64> {
    let cost = power_costs(sq, p);
    let (n, m) = (cost.rows(), cost.cols());
    let plan = solve_transport(&cost, &vec![1.0 / n as f64; n], &vec![1.0 / m as f64; m])?;
    let total: f64 = plan.data().iter().zip(cost.data()).map(|(a, b)| a * b).sum();
    Ok(total.max(0.0).powf(1.0 / p))
}

fn power_costs(sq: &Matrix, p: f64) -> Matrix {
    Matrix::from_fn(sq.rows(), sq.cols(), |i, j| sq_to_power(sq[(i, j)], p))
}

/// The augmented transport problem with the dummy column appended.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialProblem {
    /// `N × (M+1)`; the last column is the constant `D^p`.
    pub cost: Matrix,
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub dummy_distance: f64,
}

/// Result of a partial Wasserstein solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialOtResult {
    /// `W^α_p`.
    pub distance: f64,
    /// Real `N × M` block of the optimal coupling.
    pub plan: Matrix,
    /// `N × M` costs `‖X_i − Y_j‖^p` matching `plan`.
    pub cost: Matrix,
    /// Mass each reference point sends to the dummy point.
    pub dummy_column: Vec<f64>,
    pub alpha: f64,
    pub p: f64,
    pub dummy_distance: f64,
}

impl PartialOtResult {
    /// Unnormalized matched cost `Σ_{i, j≤M} C_ij P_ij`.
    pub fn transported_cost(&self) -> f64 {
        self.plan
            .data()
            .iter()
            .zip(self.cost.data())
            .map(|(p, c)| p * c)
            .sum()
    }

    /// Coupling of the augmented problem, dummy column last.
    pub fn augmented_coupling(&self) -> Result<Coupling> {
        let (n, m) = (self.plan.rows(), self.plan.cols());
        let matrix = Matrix::from_fn(n, m + 1, |i, j| {
            if j < m {
                self.plan[(i, j)]
            } else {
                self.dummy_column[i]
            }
        });
        Ok(Coupling {
            matrix,
            row_marginal: DiscreteMeasure::uniform(n)?,
            col_marginal: partial_target(m, self.alpha)?,
        })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must lie in (0, 1], got {alpha}"),
        });
    }
    Ok(())
}

fn partial_target(m: usize, alpha: f64) -> Result<DiscreteMeasure> {
    let mut nu = vec![alpha / m as f64; m];
    nu.push(1.0 - alpha);
    DiscreteMeasure::new(nu)
}

/// Dummy distance `D = multiplier · max distance`; falls back to 1 when all
/// distances vanish.
pub fn dummy_distance(max_distance: f64, multiplier: f64) -> f64 {
    if max_distance > 0.0 {
        multiplier * max_distance
    } else {
        1.0
    }
}

pub fn build_partial_problem(x: &SampleSet, y: &SampleSet, alpha: f64, p: f64) -> Result<PartialProblem> {
    build_partial_problem_with(x, y, alpha, p, DEFAULT_DUMMY_MULTIPLIER)
}

pub fn build_partial_problem_with(
    x: &SampleSet,
    y: &SampleSet,
    alpha: f64,
    p: f64,
    multiplier: f64,
) -> Result<PartialProblem> {
    check_alpha(alpha)?;
    check_exponent(p)?;
    let sq = pairwise_sq_distances(x, y)?;
    augment(&power_costs(&sq, p), &sq, alpha, p, multiplier)
}

fn augment(cost: &Matrix, sq: &Matrix, alpha: f64, p: f64, multiplier: f64) -> Result<PartialProblem> {
    if !(multiplier.is_finite() && multiplier > 1.0) {
        return Err(Error::InvalidParameter {
            name: "dummy_multiplier",
            reason: format!("must exceed 1, got {multiplier}"),
        });
    }
    let (n, m) = (cost.rows(), cost.cols());
    let max_distance = sq.max_value().max(0.0).sqrt();
    let d = dummy_distance(max_distance, multiplier);
    let dp = d.powf(p);
    let augmented = Matrix::from_fn(n, m + 1, |i, j| if j < m { cost[(i, j)] } else { dp });
    Ok(PartialProblem {
        cost: augmented,
        mu: DiscreteMeasure::uniform(n)?,
        nu: partial_target(m, alpha)?,
        dummy_distance: d,
    })
}

pub fn partial_wasserstein(x: &SampleSet, y: &SampleSet, alpha: f64, p: f64) -> Result<PartialOtResult> {
    partial_wasserstein_with(x, y, alpha, p, DEFAULT_DUMMY_MULTIPLIER)
}

pub fn partial_wasserstein_with(
    x: &SampleSet,
    y: &SampleSet,
    alpha: f64,
    p: f64,
    multiplier: f64,
) -> Result<PartialOtResult> {
    check_alpha(alpha)?;
    check_exponent(p)?;
    let sq = pairwise_sq_distances(x, y)?;
    partial_wasserstein_from_sq(&sq, alpha, p, multiplier)
}

/// Partial Wasserstein from a precomputed squared-distance matrix.
pub(crate) fn partial_wasserstein_from_sq(
    sq: &Matrix,
    alpha: f64,
    p: f64,
    multiplier: f64,
) -> Result<PartialOtResult> {
    let cost = power_costs(sq, p);
    let problem = augment(&cost, sq, alpha, p, multiplier)?;
    let coupling = solve_discrete_ot(&problem.cost, &problem.mu, &problem.nu)?;
    let (n, m) = (cost.rows(), cost.cols());
    let plan = Matrix::from_fn(n, m, |i, j| coupling.matrix[(i, j)]);
    let dummy_column = (0..n).map(|i| coupling.matrix[(i, m)]).collect();
    let mut result = PartialOtResult {
        distance: 0.0,
        plan,
        cost,
        dummy_column,
        alpha,
        p,
        dummy_distance: problem.dummy_distance,
    };
    result.distance = (result.transported_cost().max(0.0) / alpha).powf(1.0 / p);
    Ok(result)
}
