use driftbridge::attribution::{coupling_attribution, export_matching, witness_values};
use driftbridge::calibration::fit_shifted_gamma_values;
use driftbridge::harness::roc_auc;
use driftbridge::mmd::{mmd_sq, weighted_mmd_sq, KernelSpec, MmdParts};
use driftbridge::numerics::{cholesky_factor, pairwise_power_distances};
use driftbridge::ot::{partial_wasserstein, solve_discrete_ot, wasserstein, DiscreteMeasure};
use driftbridge::partial_mmd::{
    partial_mmd_adhoc, partial_mmd_qp, partial_mmd_two_stage, project_box_simplex, DEFAULT_ADHOC_ITERATIONS,
    DEFAULT_QP_TOL,
};
use driftbridge::{Matrix, RngSeed, SampleSet};
use proptest::prelude::*;

fn sample_set(max_n: usize, d: usize) -> impl Strategy<Value = SampleSet> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * d)
            .prop_map(move |v| SampleSet::new(Matrix::from_vec(n, d, v).unwrap()).unwrap())
    })
}

/// Two sample sets of a shared random dimension.
fn pair(max_n: usize, max_m: usize) -> impl Strategy<Value = (SampleSet, SampleSet)> {
    (1..=3usize).prop_flat_map(move |d| (sample_set(max_n, d), sample_set(max_m, d)))
}

fn measure(n: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], n).prop_map(|mut w| {
        if w.iter().all(|&v| v == 0.0) {
            w[0] = 1.0;
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        DiscreteMeasure::new(w).unwrap()
    })
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), 1.0f64..4.0]
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (any::<bool>(), 0.2f64..4.0).prop_map(|(sq, l)| {
        if sq {
            KernelSpec::squared_exponential(l).unwrap()
        } else {
            KernelSpec::exponential(l).unwrap()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_distances_are_symmetric((x, _) in pair(12, 1), p in exponent()) {
        let c = pairwise_power_distances(&x, &x, p).unwrap();
        for i in 0..x.n() {
            prop_assert_eq!(c[(i, i)], 0.0);
            for j in 0..x.n() {
                prop_assert!((c[(i, j)] - c[(j, i)]).abs() <= 1e-12);
                prop_assert!(c[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn cholesky_reconstructs_spd(n in 1usize..=20, entries in prop::collection::vec(-1.0f64..1.0, 400)) {
        let b = Matrix::from_vec(n, n, entries[..n * n].to_vec()).unwrap();
        let mut data = b.transpose().matmul(&b).unwrap().data().to_vec();
        for i in 0..n {
            data[i * n + i] += 0.5;
        }
        let a = Matrix::from_vec(n, n, data).unwrap();
        let r = cholesky_factor(&a, 0.0).unwrap();
        let back = r.transpose().matmul(&r).unwrap();
        let diff = back.data().iter().zip(a.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(diff / a.frobenius_norm() < 1e-8);
    }

    #[test]
    fn coupling_marginals_hold(((x, y), mu, nu) in pair(20, 20).prop_flat_map(|(x, y)| {
        let (n, m) = (x.n(), y.n());
        (Just((x, y)), measure(n), measure(m))
    })) {
        let cost = pairwise_power_distances(&x, &y, 2.0).unwrap();
        let plan = solve_discrete_ot(&cost, &mu, &nu).unwrap();
        prop_assert!(plan.max_marginal_error() < 1e-8);
        // the independent coupling is feasible, so it can only cost more
        let product: f64 = (0..x.n())
            .flat_map(|i| (0..y.n()).map(move |j| (i, j)))
            .map(|(i, j)| cost[(i, j)] * mu.weights()[i] * nu.weights()[j])
            .sum();
        prop_assert!(plan.objective(&cost) <= product + 1e-12);
    }

    #[test]
    fn partial_alpha_one_is_full((x, y) in pair(20, 20), p in exponent()) {
        let full = wasserstein(&x, &y, p).unwrap();
        let partial = partial_wasserstein(&x, &y, 1.0, p).unwrap();
        prop_assert!((full - partial.distance).abs() <= 1e-9);
    }

    #[test]
    fn outlier_limit((x, y) in pair(30, 1), p in exponent()) {
        let r = partial_wasserstein(&x, &y, 1.0 / x.n() as f64, p).unwrap();
        let nearest = (0..x.n())
            .map(|i| driftbridge::numerics::squared_euclidean(x.point(i), y.point(0)).sqrt())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((r.distance - nearest).abs() <= 1e-9);
    }

    #[test]
    fn transported_cost_grows_with_alpha((x, y) in pair(15, 8), a in 0.01f64..=1.0, b in 0.01f64..=1.0, p in exponent()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c_lo = partial_wasserstein(&x, &y, lo, p).unwrap().transported_cost();
        let c_hi = partial_wasserstein(&x, &y, hi, p).unwrap().transported_cost();
        prop_assert!(c_lo <= c_hi + 1e-9, "{} > {}", c_lo, c_hi);
    }

    #[test]
    fn partial_marginals_and_attribution((x, y) in pair(15, 10), alpha in 0.01f64..=1.0, p in exponent()) {
        let r = partial_wasserstein(&x, &y, alpha, p).unwrap();
        prop_assert!(r.augmented_coupling().unwrap().max_marginal_error() < 1e-8);
        let total: f64 = coupling_attribution(&r).iter().map(|a| a.contribution).sum();
        prop_assert!((total - r.distance.powf(p)).abs() <= 1e-8);
        let export = export_matching(&r, &x, &y).unwrap();
        prop_assert!((export.dummy_mass() - (1.0 - alpha)).abs() <= 1e-8);
        prop_assert!(export.rows.len() <= x.n() + y.n());
    }

    #[test]
    fn mmd_symmetric_and_nonnegative((x, y) in pair(16, 16), k in kernel()) {
        let a = mmd_sq(&x, &y, &k).unwrap();
        let b = mmd_sq(&y, &x, &k).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a >= -1e-10);
    }

    #[test]
    fn uniform_weighted_mmd_is_double_sum((x, y) in pair(16, 16), k in kernel()) {
        let (n, m) = (x.n() as f64, y.n() as f64);
        let sum = |a: &SampleSet, b: &SampleSet| {
            let mut s = 0.0;
            for i in 0..a.n() {
                for j in 0..b.n() {
                    s += k.eval(a.point(i), b.point(j));
                }
            }
            s
        };
        let expected = sum(&x, &x) / (n * n) + sum(&y, &y) / (m * m) - 2.0 * sum(&x, &y) / (n * m);
        let parts = MmdParts::new(&x, &y, &k).unwrap();
        let got = weighted_mmd_sq(&parts, &vec![1.0 / n; x.n()], &vec![1.0 / m; y.n()]).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn partial_mmd_methods_are_feasible_and_ordered((x, y) in pair(12, 6), alpha in 0.05f64..=1.0, k in kernel(), seed in any::<u64>()) {
        let parts = MmdParts::new(&x, &y, &k).unwrap();
        let full = mmd_sq(&x, &y, &k).unwrap();
        let ub = 1.0 / (alpha * x.n() as f64);
        let qp = partial_mmd_qp(&parts, alpha, DEFAULT_QP_TOL).unwrap();
        let two = partial_mmd_two_stage(&x, &y, alpha, 2.0, &k).unwrap();
        let adhoc = partial_mmd_adhoc(&parts, alpha, DEFAULT_ADHOC_ITERATIONS, RngSeed(seed)).unwrap();
        for r in [&qp, &two, &adhoc] {
            prop_assert!(r.weights.w.iter().all(|&w| w >= -1e-12));
            prop_assert!((r.weights.sum() - 1.0).abs() <= 1e-8);
        }
        // two-stage weights are not chosen to minimize the objective
        for r in [&qp, &adhoc] {
            prop_assert!(r.value <= full + 1e-9);
        }
        for r in [&qp, &two] {
            prop_assert!(r.weights.w.iter().all(|&w| w <= ub + 1e-8));
        }
        prop_assert!(two.value >= qp.value - 1e-8);
        // renormalization may leave the box; the ordering only binds feasible results
        if adhoc.weights.max_bound_violation() <= 1e-8 {
            prop_assert!(adhoc.value >= qp.value - 1e-8);
        }
        prop_assert!(adhoc.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn box_simplex_projection_is_feasible(y in prop::collection::vec(-5.0f64..5.0, 1..30), alpha in 0.05f64..=1.0) {
        let ub = 1.0 / (alpha * y.len() as f64);
        let w = project_box_simplex(&y, ub);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.iter().all(|&v| (-1e-15..=ub + 1e-12).contains(&v)));
    }

    #[test]
    fn witness_identity((x, y) in pair(16, 16), k in kernel(), raw in prop::collection::vec(0.01f64..1.0, 16)) {
        let s: f64 = raw[..x.n()].iter().sum();
        let w: Vec<f64> = raw[..x.n()].iter().map(|v| v / s).collect();
        let v = vec![1.0 / y.n() as f64; y.n()];
        let fx = witness_values(&x, &y, &w, &v, &k, &x).unwrap();
        let fy = witness_values(&x, &y, &w, &v, &k, &y).unwrap();
        let paired: f64 = w.iter().zip(&fx).map(|(a, b)| a * b).sum::<f64>()
            - v.iter().zip(&fy).map(|(a, b)| a * b).sum::<f64>();
        let parts = MmdParts::new(&x, &y, &k).unwrap();
        prop_assert!((paired - weighted_mmd_sq(&parts, &w, &v).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn gamma_p_value_is_monotone(values in prop::collection::vec(0.0f64..10.0, 20..200)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let fit = fit_shifted_gamma_values(&values).unwrap();
        let span = 20.0 * fit.shape * fit.scale;
        let mut last = 1.0;
        for i in 0..1000 {
            let p = fit.p_value(fit.shift + span * i as f64 / 999.0);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn auc_is_antisymmetric(
        a in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], 1..40),
        b in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], 1..40),
    ) {
        let ab = roc_auc(&a, &b).unwrap();
        let ba = roc_auc(&b, &a).unwrap();
        prop_assert_eq!(ab + ba, 1.0);
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}
