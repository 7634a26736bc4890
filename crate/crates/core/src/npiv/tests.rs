use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::basis::{BasisSpec, Family, MultiIndex};
use crate::error::Error;
use crate::mdp::recipes::{self, RecipeId};
use crate::mdp::{designed_q_mdp, sample_trajectories, Dataset, DiscreteModel, InitialDist, PolicyDensity, TargetFn};
use crate::numerics::{BoxDomain, Matrix, SeededStream, Vector, DEFAULT_RTOL};

fn cubic(m: usize) -> BasisSpec {
    BasisSpec::new(Family::Bspline { degree: 3 }, vec![m, m], BoxDomain::unit(2)).unwrap()
}

fn lab(gamma: f64, noise: f64) -> recipes::Lab {
    recipes::build(RecipeId::Benchmark, gamma, noise).unwrap()
}

fn data(l: &recipes::Lab, n: usize, t: usize, seed: u64) -> Dataset {
    sample_trajectories(&l.mdp, &l.behavior, n, t, 50, seed).unwrap()
}

/// Least squares by Householder QR, independent of the SVD path.
fn qr_lstsq(x: &Matrix, y: &Vector) -> Vector {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

fn random_series(psi: &BasisSpec, seed: u64) -> Vec<f64> {
    let mut rng = SeededStream::new(seed, 0).rng();
    (0..psi.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Lab whose designed `Q*` lies in the span of `psi`.
fn series_lab(psi: &BasisSpec, coefs: &[f64], gamma: f64, noise: f64) -> recipes::Lab {
    let base = lab(gamma, noise);
    let q_star = TargetFn::Series {
        basis: psi.clone(),
        coefficients: coefs.to_vec(),
    };
    let mdp = designed_q_mdp(
        q_star.clone(),
        base.mdp.state_box.clone(),
        base.mdp.action_box.clone(),
        base.mdp.transition.clone(),
        base.target.clone(),
        base.action_rule.clone(),
        gamma,
        noise,
    )
    .unwrap();
    recipes::Lab { mdp, q_star, ..base }
}

#[test]
fn gamma_zero_gives_gamma_equal_psi() {
    let l = lab(0.0, 1.0);
    let ds = data(&l, 5, 20, 1);
    let psi = cubic(4);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.0, &l.action_rule)).unwrap();
    assert_eq!(sys.gamma_pi(), sys.psi);
    assert_eq!(sys.rows(), 100);
}

#[test]
fn single_tuple_system_has_one_row() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 1, 1, 2);
    let psi = cubic(4);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    assert_eq!(
        (sys.psi.nrows(), sys.b.nrows(), sys.g_pi.nrows(), sys.rewards.len()),
        (1, 1, 1, 1)
    );
}

#[test]
fn rows_follow_trajectory_then_time_order() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 7, 900, 3);
    let psi = cubic(4);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    for (row, (i, t)) in [(0, (0, 0)), (899, (0, 899)), (900, (1, 0)), (6299, (6, 899))] {
        let x = ds.get(i, t);
        let expect = psi.row(&crate::mdp::concat(&x.s, &x.a)).unwrap();
        assert_eq!(sys.psi.row(row).iter().copied().collect::<Vec<_>>(), expect);
        assert_eq!(sys.rewards[row], x.r);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool
        .install(|| assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)))
        .unwrap();
    assert_eq!(single.g_pi, sys.g_pi);
    let m = dataset_moments(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    let direct = sys.moments();
    assert!((&m.btg - &direct.btg).amax() <= 1e-9 * direct.btg.amax());
}

#[test]
fn instrument_dimension_is_checked() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 2, 5, 4);
    let (small, big) = (cubic(4), cubic(5));
    let setup = SieveSetup::new(&big, &small, &l.target, 0.9, &l.action_rule);
    assert!(matches!(assemble(&ds, &setup), Err(Error::Config(_))));
    let huge = cubic(8);
    let setup = SieveSetup::new(&small, &huge, &l.target, 0.9, &l.action_rule);
    assert!(matches!(assemble(&ds, &setup), Err(Error::Config(_))));
}

#[test]
fn points_outside_the_basis_are_input_errors() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 2, 5, 4);
    let narrow = BasisSpec::new(
        Family::Bspline { degree: 3 },
        vec![4, 4],
        BoxDomain::new(vec![0.0, 0.0], vec![0.5, 1.0]).unwrap(),
    )
    .unwrap();
    let setup = SieveSetup::new(&narrow, &narrow, &l.target, 0.9, &l.action_rule);
    assert!(matches!(assemble(&ds, &setup), Err(Error::Input(_))));
}

#[test]
fn gamma_zero_with_b_equal_psi_is_ols() {
    let l = lab(0.0, 1.0);
    let ds = data(&l, 20, 50, 5);
    let psi = cubic(5);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.0, &l.action_rule)).unwrap();
    let fit = fit_2sls(&sys, DEFAULT_RTOL).unwrap();
    let ols = qr_lstsq(&sys.psi, &sys.rewards);
    assert!((fit.coefficients() - ols).amax() <= 1e-8);
    assert!(!fit.diagnostics.rank_deficient);
}

#[test]
fn noiseless_series_data_is_recovered_exactly() {
    let psi = cubic(4);
    let c_star = random_series(&psi, 11);
    let l = series_lab(&psi, &c_star, 0.9, 0.0);
    let ds = data(&l, 20, 100, 6);
    let b = cubic(5);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &b, &l.target, 0.9, &l.action_rule)).unwrap();
    let fit = fit_2sls(&sys, DEFAULT_RTOL).unwrap();
    let err = (fit.coefficients() - Vector::from_vec(c_star)).amax();
    assert!(err <= 1e-8, "coefficient error {err:e}");
}

#[test]
fn b_equal_psi_is_lstd() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 20, 50, 7);
    let psi = cubic(4);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    let fit = fit_2sls(&sys, DEFAULT_RTOL).unwrap();
    let a = sys.psi.transpose() * sys.gamma_pi();
    let rhs = sys.psi.transpose() * &sys.rewards;
    let lstd = a.lu().solve(&rhs).unwrap();
    let err = (fit.coefficients() - &lstd).amax() / lstd.amax().max(1.0);
    assert!(err <= 1e-8, "relative difference {err:e}");
}

#[test]
fn coefficients_are_smooth_in_gamma() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 20, 50, 8);
    let (psi, b) = (cubic(4), cubic(5));
    let at = |g: f64| {
        let sys = assemble(&ds, &SieveSetup::new(&psi, &b, &l.target, g, &l.action_rule)).unwrap();
        (sys.clone(), fit_2sls(&sys, DEFAULT_RTOL).unwrap().coefficients())
    };
    let g0 = 0.7;
    let (sys, c) = at(g0);
    // d/dgamma of (G'PG)^{-1} G'PR with G = Psi - gamma G_pi and P the
    // projection onto span B.
    let bt = sys.b.transpose();
    let p_inv = (&bt * &sys.b).try_inverse().unwrap();
    let proj = |m: &Matrix| &sys.b * (&p_inv * (&bt * m));
    let g = sys.gamma_pi();
    let pg = proj(&g);
    let a = g.transpose() * &pg;
    let resid = &sys.rewards - &g * &c;
    let presid = proj(&Matrix::from_column_slice(resid.len(), 1, resid.as_slice()));
    // dG/dgamma = -G_pi
    let rhs = -(sys.g_pi.transpose() * presid).column(0).into_owned() + pg.transpose() * (&sys.g_pi * &c);
    let analytic = a.lu().solve(&rhs).unwrap();
    let h = 1e-5;
    let fd = (at(g0 + h).1 - at(g0 - h).1) / (2.0 * h);
    let err = (&fd - &analytic).amax() / analytic.amax().max(1.0);
    assert!(err <= 1e-4, "relative derivative mismatch {err:e}");
}

#[test]
fn more_data_does_not_raise_population_objective_on_average() {
    let l = lab(0.9, 1.0);
    let (psi, b) = (cubic(4), cubic(5));
    let setup = SieveSetup::new(&psi, &b, &l.target, 0.9, &l.action_rule);
    let population = dataset_moments(&data(&l, 400, 500, 999), &setup).unwrap();
    let mean_obj = |n: usize| {
        (0..50)
            .map(|r| {
                let m = dataset_moments(&data(&l, n, 50, 100 + r), &setup).unwrap();
                let fit = fit_moments(&m, &psi, &b, 0.9, DEFAULT_RTOL).unwrap();
                projected_residual(&population, &fit.coefficients, DEFAULT_RTOL).unwrap()
            })
            .sum::<f64>()
            / 50.0
    };
    let (small, large) = (mean_obj(4), mean_obj(16));
    assert!(large <= small, "objective {large} with more data vs {small}");
}

#[test]
fn empirical_moments_match_population_quadrature() {
    let l = lab(0.9, 1.0);
    let psi = BasisSpec::new(Family::Legendre, vec![2, 2], BoxDomain::unit(2)).unwrap();
    let (n, t) = (100, 100);
    let ds = sample_trajectories(&l.mdp, &l.behavior, n, t, 200, 21).unwrap();
    let setup = SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule);
    let per = trajectory_moments(&ds, &setup).unwrap();
    // Population E[b kappa_pi'] on the discrete chain.
    let dm = DiscreteModel::new(&l.mdp, &l.behavior, &l.target, &l.state_rule, &l.action_rule).unwrap();
    let bpts = psi.eval(&dm.points()).unwrap();
    let gpi = psi.policy_rows(&l.target, &dm.state_nodes, &l.action_rule).unwrap();
    let j = psi.len();
    for col in 0..j {
        let gcol: Vec<f64> = gpi.column(col).iter().copied().collect();
        let next = dm.expect_next(&gcol);
        let kappa: Vec<f64> = (0..dm.len()).map(|g| bpts[(g, col)] - 0.9 * next[g]).collect();
        for row in 0..j {
            let bcol: Vec<f64> = bpts.column(row).iter().copied().collect();
            let pop = dm.inner(&bcol, &kappa);
            let means: Vec<f64> = per.iter().map(|m| m.btg[(row, col)] / t as f64).collect();
            let mean = means.iter().sum::<f64>() / n as f64;
            let sd = (means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!(
                (mean - pop).abs() <= 3.0 * se + 1e-12,
                "entry ({row}, {col}): {mean} vs {pop} (se {se})"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_vanishes_at_the_solution(seed in 0u64..1000, gamma in 0.0f64..0.99, m in 4usize..6) {
        let l = lab(gamma, 1.0);
        let ds = data(&l, 6, 40, seed);
        let psi = cubic(m);
        let b = cubic(m + 1);
        let sys = assemble(&ds, &SieveSetup::new(&psi, &b, &l.target, gamma, &l.action_rule)).unwrap();
        let fit = fit_2sls(&sys, DEFAULT_RTOL).unwrap();
        let r = sys.rewards.norm();
        // Gradient recomputed from the raw rows.
        let proj_inv = crate::numerics::pinv_truncated(&(sys.b.transpose() * &sys.b), DEFAULT_RTOL).unwrap();
        let g = sys.gamma_pi();
        let resid = &sys.rewards - &g * fit.coefficients();
        let grad = (g.transpose() * &sys.b) * (proj_inv * (sys.b.transpose() * resid)) * -2.0;
        prop_assert!(grad.amax() <= 1e-8 * r, "gradient {} vs |R| {}", grad.amax(), r);
        prop_assert!(fit.diagnostics.grad_norm <= 1e-8 * r);
        prop_assert!(fit.diagnostics.rank_projected <= psi.len());
        prop_assert!(fit.diagnostics.rank_btb <= b.len());
    }
}

#[test]
fn rank_deficient_instruments_are_flagged_not_fatal() {
    let l = lab(0.9, 1.0);
    // All data in a corner leaves most B-spline instruments unobserved.
    let mut ds = data(&l, 4, 30, 9);
    for x in ds.tuples.iter_mut() {
        x.s[0] *= 0.2;
        x.a[0] *= 0.2;
    }
    let (psi, b) = (cubic(4), cubic(5));
    let sys = assemble(&ds, &SieveSetup::new(&psi, &b, &l.target, 0.9, &l.action_rule)).unwrap();
    let fit = fit_2sls(&sys, DEFAULT_RTOL).unwrap();
    assert!(fit.diagnostics.rank_deficient);
    assert!(fit.coefficients.iter().all(|v| v.is_finite()));
    assert!(fit.diagnostics.grad_norm <= 1e-8 * fit.diagnostics.r_norm);
}

#[test]
fn non_finite_rows_are_input_errors() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 2, 10, 9);
    let psi = cubic(4);
    let mut sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    sys.rewards[3] = f64::NAN;
    assert!(matches!(fit_2sls(&sys, DEFAULT_RTOL), Err(Error::Input(_))));
}

fn some_fit() -> (recipes::Lab, SieveFit) {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 20, 50, 10);
    let psi = cubic(5);
    let sys = assemble(&ds, &SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule)).unwrap();
    (l, fit_2sls(&sys, DEFAULT_RTOL).unwrap())
}

#[test]
fn unit_coefficient_predicts_the_first_basis_function() {
    let (_, mut fit) = some_fit();
    fit.coefficients.iter_mut().for_each(|v| *v = 0.0);
    fit.coefficients[0] = 1.0;
    let pts = BoxDomain::unit(2).grid(7);
    let q = predict_q(&fit, &pts).unwrap();
    let first = fit
        .psi
        .eval(&pts)
        .unwrap()
        .column(0)
        .iter()
        .copied()
        .collect::<Vec<_>>();
    assert_eq!(q, first);
}

#[test]
fn derivative_predictions_match_finite_differences() {
    let (_, fit) = some_fit();
    let zero = predict_q_deriv(&fit, &[vec![0.3, 0.4]], &MultiIndex::zero(2)).unwrap();
    assert_eq!(zero, predict_q(&fit, &[vec![0.3, 0.4]]).unwrap());
    let mut rng = SeededStream::new(3, 0).rng();
    let h = 1e-5;
    for _ in 0..50 {
        let x = vec![rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
        for (k, alpha) in [(0, vec![1, 0]), (1, vec![0, 1])] {
            let d = predict_q_deriv(&fit, std::slice::from_ref(&x), &MultiIndex(alpha)).unwrap()[0];
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (predict_q(&fit, &[up]).unwrap()[0] - predict_q(&fit, &[dn]).unwrap()[0]) / (2.0 * h);
            assert!((d - fd).abs() <= 1e-6, "{d} vs {fd} at {x:?}");
        }
    }
}

#[test]
fn fit_json_round_trips_exactly() {
    let (_, fit) = some_fit();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.json");
    fit.save(&path).unwrap();
    assert_eq!(SieveFit::load(&path).unwrap(), fit);
}

#[test]
fn exact_q_has_zero_bellman_residual() {
    let psi = cubic(4);
    let c_star = random_series(&psi, 12);
    let l = series_lab(&psi, &c_star, 0.9, 0.5);
    let (_, mut fit) = some_fit();
    fit.psi = psi.clone();
    fit.b = psi;
    fit.coefficients = c_star;
    let pts = BoxDomain::unit(2).grid(11);
    let norms = bellman_residual_norms(&fit, &l.mdp, &l.target, &pts, None, &l.state_rule, &l.action_rule).unwrap();
    assert!(norms.sup <= 1e-8 && norms.l2 <= 1e-8, "{norms:?}");
}

#[test]
fn gamma_zero_residual_is_mean_reward_minus_fit() {
    let l = lab(0.0, 1.0);
    let (_, mut fit) = some_fit();
    fit.gamma = 0.0;
    let pts = BoxDomain::unit(2).grid(5);
    let res = bellman_residual(&fit, &l.mdp, &l.target, &pts, &l.state_rule, &l.action_rule).unwrap();
    let q = predict_q(&fit, &pts).unwrap();
    for ((p, r), qv) in pts.iter().zip(&res).zip(&q) {
        // With gamma = 0 the designed reward mean is Q*(s, a) itself.
        let expect = l.q_star.value(p) - qv;
        assert!((r - expect).abs() <= 1e-10);
    }
}

#[test]
fn plug_in_value_special_cases() {
    let (l, mut fit) = some_fit();
    let s0 = vec![0.35];
    let a0 = vec![0.6];
    let pm = PolicyDensity::constant_action(a0.clone(), l.mdp.action_box.clone());
    let v = plugin_value(
        &fit,
        &pm,
        &InitialDist::PointMass(s0.clone()),
        &l.state_rule,
        &l.action_rule,
    )
    .unwrap();
    let q = predict_q(&fit, &[vec![0.35, 0.6]]).unwrap()[0];
    assert!((v - q).abs() <= 1e-12);
    fit.coefficients.iter_mut().for_each(|c| *c = 0.0);
    let v = plugin_value(&fit, &l.target, &InitialDist::Uniform, &l.state_rule, &l.action_rule).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn bootstrap_se_is_deterministic_and_positive() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 30, 40, 13);
    let psi = cubic(4);
    let setup = SieveSetup::new(&psi, &psi, &l.target, 0.9, &l.action_rule);
    let per = trajectory_moments(&ds, &setup).unwrap();
    let ell = value_functional(&psi, &l.target, &InitialDist::Uniform, &l.state_rule, &l.action_rule).unwrap();
    let a = bootstrap_value_se(&per, &psi, &psi, 0.9, &ell, 50, 4).unwrap();
    let b = bootstrap_value_se(&per, &psi, &psi, 0.9, &ell, 50, 4).unwrap();
    assert_eq!(a, b);
    assert!(a > 0.0 && a.is_finite());
    let total = Moments::sum(&per, psi.len(), psi.len());
    assert_eq!(total.n, ds.len());
}

#[test]
fn choose_j_follows_the_formula() {
    let bs = Family::Bspline { degree: 3 };
    let c = choose_j(10_000, 2.0, 2, JNorm::L2, 1.0, bs).unwrap();
    assert!((c.raw - 10f64.powf(4.0 / 3.0)).abs() < 1e-9);
    assert_eq!((c.j, c.counts.clone()), (25, vec![5, 5]));
    let c2 = choose_j(10_000, 2.0, 2, JNorm::L2, 2.0, bs).unwrap();
    assert!((c2.raw - 2.0 * c.raw).abs() < 1e-9);
    assert!(matches!(
        choose_j(10_000, 1.0, 2, JNorm::Sup, 1.0, bs),
        Err(Error::Capability(_))
    ));
    let sup = choose_j(10_000, 2.0, 2, JNorm::Sup, 1.0, bs).unwrap();
    let base: f64 = 10_000.0 / 10_000f64.ln();
    assert!((sup.raw - base.powf(1.0 / 3.0)).abs() < 1e-9);
    // Small targets are lifted to the family minimum.
    assert_eq!(choose_j(10, 2.0, 2, JNorm::L2, 0.5, bs).unwrap().counts, vec![4, 4]);
}

proptest! {
    #[test]
    fn balanced_counts_are_minimal(target in 1usize..500, d in 1usize..4, min in 1usize..5) {
        let c = balanced_counts(target, d, min);
        let j: usize = c.iter().product();
        prop_assert!(j >= target);
        prop_assert!(c.iter().all(|&m| m >= min));
        prop_assert!(c.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
        // The next smaller balanced shape is too small (or below the minimum).
        let mut smaller = c.clone();
        if let Some(pos) = smaller.iter().rposition(|&m| m > c[d - 1]) {
            smaller[pos] -= 1;
        } else {
            smaller[d - 1] -= 1;
            smaller.sort_unstable_by(|a, b| b.cmp(a));
        }
        prop_assert!(smaller.iter().product::<usize>() < target || smaller.iter().any(|&m| m < min));
    }
}

#[test]
fn multiplier_selection_is_deterministic() {
    let l = lab(0.9, 1.0);
    let ds = data(&l, 40, 50, 14);
    let train = ds.take_trajectories(32);
    let holdout = ds.select_trajectories(&(32..40).collect::<Vec<_>>());
    let design = SieveDesign {
        psi_family: Family::Bspline { degree: 3 },
        b_family: Family::Bspline { degree: 3 },
        b_extra: 1,
        p: 2.0,
        norm: JNorm::L2,
        domain: BoxDomain::unit(2),
    };
    let sel = |_: ()| {
        select_multiplier(
            &train,
            &holdout,
            &design,
            &[0.5, 1.0, 2.0],
            &l.target,
            0.9,
            &l.action_rule,
        )
        .unwrap()
    };
    let (a, b) = (sel(()), sel(()));
    assert_eq!(a.multiplier, b.multiplier);
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.scores.len(), 3);
    let best = a.scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    assert_eq!(
        a.scores.iter().find(|s| s.multiplier == a.multiplier).unwrap().score,
        best
    );
}
