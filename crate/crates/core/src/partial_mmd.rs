//! Partial MMD: the weighted MMD² minimized over reference weights in the
//! box-capped simplex `{w : 0 ≤ w_i ≤ 1/(αn), Σ w_i = 1}`.
//!
//! Three solvers are provided:
//!
//! * [`partial_mmd_qp`]: accelerated projected gradient with an exact
//!   projection onto the feasible set. Used as the reference optimum.
//! * [`partial_mmd_adhoc`]: the working-set Newton / gradient heuristic with
//!   clamp-and-renormalize candidates and accept-if-improved step sizes.
//! * [`partial_mmd_two_stage`]: feasible weights read off the row sums of a
//!   partial optimal transport coupling, giving an upper bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{uniform, KernelSpec, MmdParts};
use crate::numerics::{cholesky_factor, cholesky_solve, default_jitter, dot, pairwise_sq_distances, Matrix, RngSeed, SampleSet};
use crate::ot::{check_alpha, partial_wasserstein_from_sq, PartialOtResult, DEFAULT_DUMMY_MULTIPLIER};

/// Default objective-change tolerance of the projected-gradient solver.
pub const DEFAULT_QP_TOL: f64 = 1e-10;
/// Iteration cap of the projected-gradient solver.
pub const QP_MAX_ITER: usize = 100_000;
/// Default outer iterations of the ad-hoc solver.
pub const DEFAULT_ADHOC_ITERATIONS: usize = 50;

const NEWTON_STEPS: [f64; 5] = [1.0, 0.2, 0.04, 0.008, 0.0016];
const GRADIENT_STEPS: [f64; 5] = [0.1, 0.02, 0.004, 0.0008, 0.00016];

/// Reference weights of a partial MMD solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSimplexWeights {
    pub w: Vec<f64>,
    pub alpha: f64,
}

impl BoxSimplexWeights {
    pub fn upper_bound(&self) -> f64 {
        upper_bound(self.alpha, self.w.len())
    }

    /// Largest violation of `0 ≤ w_i ≤ 1/(αn)`, zero when feasible.
    pub fn max_bound_violation(&self) -> f64 {
        let ub = self.upper_bound();
        self.w
            .iter()
            .map(|&x| (x - ub).max(-x).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialMmdMethod {
    Qp,
    Adhoc,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialMmdResult {
    /// Achieved MMD² objective (unclamped).
    pub value: f64,
    pub weights: BoxSimplexWeights,
    pub method: PartialMmdMethod,
    pub iterations: usize,
    /// Objective after every accepted candidate (ad-hoc solver only).
    pub objective_trace: Vec<f64>,
    /// Outer iterations whose Newton system could not be factorized.
    pub newton_fallbacks: usize,
}

impl PartialMmdResult {
    fn new(value: f64, w: Vec<f64>, alpha: f64, method: PartialMmdMethod, iterations: usize) -> Self {
        Self {
            value,
            weights: BoxSimplexWeights { w, alpha },
            method,
            iterations,
            objective_trace: Vec::new(),
            newton_fallbacks: 0,
        }
    }
}

#[inline]
fn upper_bound(alpha: f64, n: usize) -> f64 {
    1.0 / (alpha * n as f64)
}

/// Same arithmetic as [`crate::mmd::weighted_mmd_sq`], without input checks.
pub(crate) fn quad_form(parts: &MmdParts, w: &[f64], v: &[f64]) -> f64 {
    parts.kx.bilinear(w, w) + parts.ky.bilinear(v, v) - 2.0 * parts.kyx.bilinear(v, w)
}

/// Euclidean projection of `y` onto `{Σ w = 1, 0 ≤ w ≤ ub}` by bisection on
/// the shift `τ` of `w_i = clamp(y_i − τ, 0, ub)`.
pub fn project_box_simplex(y: &[f64], ub: f64) -> Vec<f64> {
    let n = y.len();
    if ub * n as f64 <= 1.0 + 1e-12 {
        // the feasible set is the single point w = 1/n
        return uniform(n);
    }
    let mass = |tau: f64| -> f64 { y.iter().map(|&v| (v - tau).clamp(0.0, ub)).sum() };
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // mass(lo) = n·ub ≥ 1, mass(hi) = 0
    let mut lo = ymin - ub;
    let mut hi = ymax;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w_lo: Vec<f64> = y.iter().map(|&v| (v - lo).clamp(0.0, ub)).collect();
    let w_hi: Vec<f64> = y.iter().map(|&v| (v - hi).clamp(0.0, ub)).collect();
    let s_lo: f64 = w_lo.iter().sum();
    let s_hi: f64 = w_hi.iter().sum();
    if (s_hi - 1.0).abs() < (s_lo - 1.0).abs() {
        w_hi
    } else {
        w_lo
    }
}

/// Partial MMD² via accelerated projected gradient (FISTA with adaptive
/// restart), step `1/L` with `L = 2 · max_i Σ_j |Kˣ_ij|`.
pub fn partial_mmd_qp(parts: &MmdParts, alpha: f64, tol: f64) -> Result<PartialMmdResult> {
    check_alpha(alpha)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    let n = parts.n();
    let v = uniform(parts.m());
    let ub = upper_bound(alpha, n);
    let vkv = parts.ky.bilinear(&v, &v);
    let b = parts.cross_term(&v);
    let lipschitz = 2.0
        * (0..n)
            .map(|i| parts.kx.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);

    let mut x = project_box_simplex(&uniform(n), ub);
    let mut fx = parts.objective(&x, vkv, &b);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut small_changes = 0;
    while iterations < QP_MAX_ITER {
        iterations += 1;
        let ky = parts.kx.mul_vec(&y);
        let trial: Vec<f64> = y
            .iter()
            .zip(ky.iter().zip(&b))
            .map(|(&yi, (&kyi, &bi))| yi - step * 2.0 * (kyi - bi))
            .collect();
        let x_next = project_box_simplex(&trial, ub);
        let f_next = parts.objective(&x_next, vkv, &b);
        if f_next > fx {
            // restart momentum from the last iterate
            y = x.clone();
            t = 1.0;
            if (f_next - fx).abs() < tol {
                small_changes += 1;
            }
            if small_changes >= 3 {
                converged = true;
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = x_next
            .iter()
            .zip(&x)
            .map(|(&a, &p)| a + beta * (a - p))
            .collect();
        let change = fx - f_next;
        let moved = x_next
            .iter()
            .zip(&x)
            .map(|(a, p)| (a - p).abs())
            .fold(0.0, f64::max);
        x = x_next;
        fx = f_next;
        t = t_next;
        if change < tol && moved < tol.sqrt() {
            small_changes += 1;
            if small_changes >= 3 {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            best_value: fx,
            best_weights: x,
        });
    }
    let value = quad_form(parts, &x, &v);
    Ok(PartialMmdResult::new(value, x, alpha, PartialMmdMethod::Qp, iterations))
}

/// The working-set Newton / gradient heuristic.
///
/// Starts from uniform weights; each outer iteration draws `r ∈ (0, 1)`,
/// builds the working set, tries a Newton step on it at step sizes
/// `1, 1/5, …, 1/625`, then a mean-centred gradient step at `0.1, …, 0.1/625`.
/// Each candidate is clamped to `[0, 1/(αn)]` and renormalized, and kept only
/// if it strictly lowers the objective. Renormalization can push weights
/// above `1/(αn)`; the result is returned as is.
pub fn partial_mmd_adhoc(parts: &MmdParts, alpha: f64, n_iter: usize, seed: RngSeed) -> Result<PartialMmdResult> {
    check_alpha(alpha)?;
    let n = parts.n();
    let v = uniform(parts.m());
    let w0 = uniform(n);
    if alpha == 1.0 {
        // the feasible set is the single point w = 1/n
        let value = quad_form(parts, &w0, &v);
        return Ok(PartialMmdResult::new(value, w0, alpha, PartialMmdMethod::Adhoc, 0));
    }
    let ub = upper_bound(alpha, n);
    let vkv = parts.ky.bilinear(&v, &v);
    let b = parts.cross_term(&v);
    let objective = |w: &[f64]| parts.objective(w, vkv, &b);
    let gradient = |w: &[f64]| -> Vec<f64> {
        parts
            .kx
            .mul_vec(w)
            .iter()
            .zip(&b)
            .map(|(kw, bi)| 2.0 * kw - 2.0 * bi)
            .collect()
    };

    let mut rng = seed.stream(0);
    let mut w = w0;
    let mut fw = objective(&w);
    let mut trace = vec![fw];
    let mut fallbacks = 0;

    let mut try_steps = |w: &mut Vec<f64>, fw: &mut f64, working: &[usize], dir: &[f64], steps: &[f64]| {
        for &step in steps {
            let mut cand = w.clone();
            for (&i, &d) in working.iter().zip(dir) {
                cand[i] -= step * d;
            }
            for c in cand.iter_mut() {
                *c = c.clamp(0.0, ub);
            }
            let s: f64 = cand.iter().sum();
            if !(s > 0.0) {
                continue;
            }
            cand.iter_mut().for_each(|c| *c /= s);
            let fc = objective(&cand);
            if fc < *fw {
                *w = cand;
                *fw = fc;
                trace.push(fc);
            }
        }
    };

    for _ in 0..n_iter {
        let r: f64 = loop {
            let r = rng.random::<f64>();
            if r > 0.0 {
                break r;
            }
        };
        let gr = gradient(&w);
        let working = working_set(&w, &gr, ub, r);
        if !working.is_empty() {
            let block = parts.kx.select(&working, &working);
            let rhs: Vec<f64> = working.iter().map(|&i| gr[i]).collect();
            match cholesky_factor(&block, default_jitter(&block)) {
                Ok(factor) => {
                    let dir = cholesky_solve(&factor, &rhs);
                    if dir.iter().all(|d| d.is_finite()) {
                        try_steps(&mut w, &mut fw, &working, &dir, &NEWTON_STEPS);
                    } else {
                        fallbacks += 1;
                    }
                }
                Err(_) => fallbacks += 1,
            }
        }

        let gr = gradient(&w);
        let working = working_set(&w, &gr, ub, r);
        if !working.is_empty() {
            let mean = working.iter().map(|&i| gr[i]).sum::<f64>() / working.len() as f64;
            let dir: Vec<f64> = working.iter().map(|&i| gr[i] - mean).collect();
            try_steps(&mut w, &mut fw, &working, &dir, &GRADIENT_STEPS);
        }
    }
    let value = quad_form(parts, &w, &v);
    let mut result = PartialMmdResult::new(value, w, alpha, PartialMmdMethod::Adhoc, n_iter);
    result.objective_trace = trace;
    result.newton_fallbacks = fallbacks;
    Ok(result)
}

/// Interior coordinates plus boundary coordinates whose gradient points
/// inward by more than `r` times the extreme gradient on that boundary.
fn working_set(w: &[f64], gr: &[f64], ub: f64, r: f64) -> Vec<usize> {
    let gr_min = w
        .iter()
        .zip(gr)
        .filter(|(&wi, _)| wi < ub)
        .map(|(_, &g)| g)
        .fold(f64::INFINITY, f64::min);
    let gr_max = w
        .iter()
        .zip(gr)
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(_, &g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    // empty sets disable the corresponding boundary admission
    let lower_gate = if gr_min.is_finite() { gr_min * r } else { f64::NEG_INFINITY };
    let upper_gate = if gr_max.is_finite() { gr_max * r } else { f64::INFINITY };
    (0..w.len())
        .filter(|&i| (w[i] > 0.0 || gr[i] < lower_gate) && (w[i] < ub || gr[i] > upper_gate))
        .collect()
}

/// Weights `w_i = (1/α) Σ_j P_ij` from the real block of a partial coupling.
pub fn coupling_weights(ot: &PartialOtResult) -> Vec<f64> {
    (0..ot.plan.rows())
        .map(|i| (ot.plan.row(i).iter().sum::<f64>() / ot.alpha).max(0.0))
        .collect()
}

/// Two-stage upper bound: partial OT coupling, then the weighted MMD².
pub fn partial_mmd_two_stage(
    x: &SampleSet,
    y: &SampleSet,
    alpha: f64,
    p: f64,
    k: &KernelSpec,
) -> Result<PartialMmdResult> {
    check_alpha(alpha)?;
    x.ensure_same_dim(y)?;
    let sq_xy = pairwise_sq_distances(x, y)?;
    let parts = MmdParts::new(x, y, k)?;
    two_stage_from_parts(&parts, &sq_xy, alpha, p, DEFAULT_DUMMY_MULTIPLIER).map(|(r, _)| r)
}

/// Two-stage bound from kernel blocks and the `n × m` squared distances.
pub(crate) fn two_stage_from_parts(
    parts: &MmdParts,
    sq_xy: &Matrix,
    alpha: f64,
    p: f64,
    multiplier: f64,
) -> Result<(PartialMmdResult, PartialOtResult)> {
    let ot = partial_wasserstein_from_sq(sq_xy, alpha, p, multiplier)?;
    let w = coupling_weights(&ot);
    let v = uniform(parts.m());
    let value = quad_form(parts, &w, &v);
    Ok((PartialMmdResult::new(value, w, alpha, PartialMmdMethod::TwoStage, 0), ot))
}

/// Objective of the partial MMD problem at arbitrary weights.
pub fn partial_objective(parts: &MmdParts, w: &[f64]) -> f64 {
    let v = uniform(parts.m());
    let b = parts.cross_term(&v);
    parts.kx.bilinear(w, w) + parts.ky.bilinear(&v, &v) - 2.0 * dot(w, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::mmd_sq;

    fn scalars(v: &[f64]) -> SampleSet {
        SampleSet::from_scalars(v).unwrap()
    }

    fn sqexp(l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(l).unwrap()
    }

    /// Grid optimum at step 1e-3 over the feasible slice of the 2-simplex,
    /// computed offline by exhaustive enumeration (w = (0.5, 0.5, 0)).
    const GRID_OPTIMUM: f64 = 0.038_271_524_687_125_91;

    #[test]
    fn projection_properties() {
        let w = project_box_simplex(&[0.3, 0.9, -0.2, 0.1], 0.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| (0.0..=0.5).contains(&x)));
        assert!((w[1] - 0.5).abs() < 1e-12);

        // single feasible point
        let w = project_box_simplex(&[5.0, -3.0, 0.0], 1.0 / 3.0);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }

        // already feasible points are fixed
        let y = [0.2, 0.3, 0.5];
        let w = project_box_simplex(&y, 0.6);
        for (a, b) in w.iter().zip(y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn qp_alpha_one_equals_mmd() {
        let x = scalars(&[0.0, 1.0, 4.0, -2.0]);
        let y = scalars(&[0.5, 3.0]);
        let parts = MmdParts::new(&x, &y, &sqexp(1.3)).unwrap();
        let r = partial_mmd_qp(&parts, 1.0, DEFAULT_QP_TOL).unwrap();
        assert_eq!(r.weights.w, uniform(4));
        assert_eq!(r.value, mmd_sq(&x, &y, &sqexp(1.3)).unwrap());
    }

    #[test]
    fn qp_subset_case() {
        let parts = MmdParts::new(&scalars(&[0.0, 5.0]), &scalars(&[0.0]), &sqexp(1.0)).unwrap();
        let r = partial_mmd_qp(&parts, 0.5, DEFAULT_QP_TOL).unwrap();
        assert!(r.value.abs() < 1e-9);
        assert!((r.weights.w[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn qp_matches_grid_oracle() {
        let parts = MmdParts::new(&scalars(&[0.0, 1.0, 4.0]), &scalars(&[0.5]), &sqexp(1.0)).unwrap();
        let r = partial_mmd_qp(&parts, 2.0 / 3.0, DEFAULT_QP_TOL).unwrap();
        assert!((r.value - GRID_OPTIMUM).abs() < 1e-5, "{}", r.value);
        assert!(r.weights.max_bound_violation() < 1e-8);
    }

    #[test]
    fn qp_rejects_bad_parameters() {
        let parts = MmdParts::new(&scalars(&[0.0, 1.0]), &scalars(&[0.5]), &sqexp(1.0)).unwrap();
        assert!(partial_mmd_qp(&parts, 0.0, 1e-10).is_err());
        assert!(partial_mmd_qp(&parts, 0.5, 0.0).is_err());
        assert!(partial_mmd_adhoc(&parts, 1.2, 5, RngSeed(0)).is_err());
    }

    #[test]
    fn adhoc_examples() {
        let x = scalars(&[0.0, 1.0, 4.0]);
        let y = scalars(&[0.5]);
        let parts = MmdParts::new(&x, &y, &sqexp(1.0)).unwrap();

        let r = partial_mmd_adhoc(&parts, 1.0, 50, RngSeed(1)).unwrap();
        assert_eq!(r.weights.w, uniform(3));
        assert_eq!(r.value, mmd_sq(&x, &y, &sqexp(1.0)).unwrap());

        let r = partial_mmd_adhoc(&parts, 2.0 / 3.0, 50, RngSeed(1)).unwrap();
        assert!((r.value - GRID_OPTIMUM).abs() < 1e-4, "{}", r.value);
        assert!(r.objective_trace.windows(2).all(|p| p[1] <= p[0]));

        let parts = MmdParts::new(&scalars(&[0.0, 5.0]), &scalars(&[0.0]), &sqexp(1.0)).unwrap();
        let r = partial_mmd_adhoc(&parts, 0.5, 50, RngSeed(1)).unwrap();
        assert!(r.value.abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn adhoc_is_deterministic_per_seed() {
        let x = scalars(&[0.0, 0.4, 1.0, 2.5, 4.0, 4.2]);
        let y = scalars(&[0.5, 4.1]);
        let parts = MmdParts::new(&x, &y, &sqexp(0.8)).unwrap();
        let a = partial_mmd_adhoc(&parts, 0.4, 20, RngSeed(9)).unwrap();
        let b = partial_mmd_adhoc(&parts, 0.4, 20, RngSeed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn working_set_rules() {
        // interior coordinate always in, boundary coordinates gated by gradient
        let w = [0.0, 0.25, 0.5];
        let gr = [-1.0, 0.0, 1.0];
        assert_eq!(working_set(&w, &gr, 0.5, 0.5), vec![0, 1, 2]);
        let gr = [1.0, 0.0, -1.0];
        assert_eq!(working_set(&w, &gr, 0.5, 0.5), vec![1]);
        // every coordinate at the upper bound: gr_min set is empty
        let w = [0.5, 0.5];
        let gr = [2.0, 1.0];
        assert_eq!(working_set(&w, &gr, 0.5, 0.9), vec![0]);
    }

    #[test]
    fn two_stage_examples() {
        let x = scalars(&[0.0, 2.0, -1.0]);
        let r = partial_mmd_two_stage(&x, &x, 1.0, 2.0, &sqexp(1.0)).unwrap();
        for wi in &r.weights.w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(r.value.abs() < 1e-12);

        let r = partial_mmd_two_stage(&scalars(&[0.0, 5.0]), &scalars(&[0.0]), 0.5, 2.0, &sqexp(1.0)).unwrap();
        assert!((r.weights.w[0] - 1.0).abs() < 1e-12);
        assert!(r.weights.w[1].abs() < 1e-12);
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn two_stage_can_exceed_full_mmd() {
        let x = scalars(&[-2.4771354218225192, -2.8783002345002733]);
        let y = scalars(&[0.0, 0.0, 0.0]);
        let k = KernelSpec::exponential(0.7121480317163412).unwrap();
        let r = partial_mmd_two_stage(&x, &y, 0.8589555344988625, 2.0, &k).unwrap();
        assert!(r.value > mmd_sq(&x, &y, &k).unwrap() + 1e-4);
    }
}
