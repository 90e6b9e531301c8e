//! Per-point drift attribution: coupling matches for the (partial)
//! Wasserstein statistic and witness-function values for MMD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::KernelSpec;
use crate::numerics::SampleSet;
use crate::ot::PartialOtResult;

/// Coupling entries at or below this mass are treated as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMatch {
    pub ref_index: usize,
    pub mass: f64,
}

/// Transport received by one test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAttribution {
    pub test_index: usize,
    pub matches: Vec<ReferenceMatch>,
    /// `(1/α) Σ_i C_ij P_ij`; these sum to `distance^p`.
    pub contribution: f64,
}

pub fn coupling_attribution(result: &PartialOtResult) -> Vec<TestAttribution> {
    let (n, m) = (result.plan.rows(), result.plan.cols());
    (0..m)
        .map(|j| {
            let mut matches = Vec::new();
            let mut cost = 0.0;
            for i in 0..n {
                let mass = result.plan[(i, j)];
                cost += result.cost[(i, j)] * mass;
                if mass > SUPPORT_THRESHOLD {
                    matches.push(ReferenceMatch { ref_index: i, mass });
                }
            }
            TestAttribution {
                test_index: j,
                matches,
                contribution: cost / result.alpha,
            }
        })
        .collect()
}

/// `f(t) = Σ_i w_i k(x_i, t) − Σ_j v_j k(y_j, t)` at each query point.
pub fn witness_values(
    x: &SampleSet,
    y: &SampleSet,
    w: &[f64],
    v: &[f64],
    k: &KernelSpec,
    query: &SampleSet,
) -> Result<Vec<f64>> {
    x.ensure_same_dim(y)?;
    x.ensure_same_dim(query)?;
    for (weights, len) in [(w, x.n()), (v, y.n())] {
        if weights.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: weights.len(),
            });
        }
    }
    Ok((0..query.n())
        .map(|t| {
            let q = query.point(t);
            let pos: f64 = (0..x.n()).map(|i| w[i] * k.eval(x.point(i), q)).sum();
            let neg: f64 = (0..y.n()).map(|j| v[j] * k.eval(y.point(j), q)).sum();
            pos - neg
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingRow {
    pub ref_index: usize,
    /// `-1` marks mass sent to the dummy point.
    pub test_index: i64,
    pub mass: f64,
    pub cost: f64,
}

/// Nonzero coupling entries in tabular form for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingExport {
    pub rows: Vec<MatchingRow>,
}

pub const MATCHING_CSV_HEADER: &str = "ref_index,test_index,mass,cost";

impl MatchingExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str(MATCHING_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.ref_index,
                r.test_index,
                fmt_f64(r.mass),
                fmt_f64(r.cost)
            ));
        }
        out
    }

    pub fn dummy_mass(&self) -> f64 {
        self.rows.iter().filter(|r| r.test_index < 0).map(|r| r.mass).sum()
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.16e}")
}

pub fn export_matching(result: &PartialOtResult, x: &SampleSet, y: &SampleSet) -> Result<MatchingExport> {
    let (n, m) = (result.plan.rows(), result.plan.cols());
    if x.n() != n || y.n() != m {
        return Err(Error::InvalidShape(format!(
            "coupling is {n}x{m}, samples have {} and {} points",
            x.n(),
            y.n()
        )));
    }
    let dummy_cost = result.dummy_distance.powf(result.p);
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let mass = result.plan[(i, j)];
            if mass > SUPPORT_THRESHOLD {
                rows.push(MatchingRow {
                    ref_index: i,
                    test_index: j as i64,
                    mass,
                    cost: result.cost[(i, j)],
                });
            }
        }
        let dummy = result.dummy_column[i];
        if dummy > SUPPORT_THRESHOLD {
            rows.push(MatchingRow {
                ref_index: i,
                test_index: -1,
                mass: dummy,
                cost: dummy_cost,
            });
        }
    }
    Ok(MatchingExport { rows })
}
