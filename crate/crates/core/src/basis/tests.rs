use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mdp::{AffineTruncatedGaussian, PolicyDensity};
use crate::numerics::{sym_eig_extremes, SeededStream};

fn unit(family: Family, counts: Vec<usize>) -> BasisSpec {
    let d = counts.len();
    BasisSpec::new(family, counts, BoxDomain::unit(d)).unwrap()
}

const CUBIC: Family = Family::Bspline { degree: 3 };

#[test]
fn cosine_and_legendre_closed_forms() {
    let c = unit(Family::Cosine, vec![2]);
    let r = c.row(&[0.0]).unwrap();
    assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2f64.sqrt()).abs() < 1e-15);

    let l = unit(Family::Legendre, vec![2]);
    let r = l.row(&[0.5]).unwrap();
    assert!((r[0] - 1.0).abs() < 1e-15 && r[1].abs() < 1e-15);
}

#[test]
fn cubic_bspline_rows_sum_to_one() {
    let b = unit(CUBIC, vec![8]);
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        let s: f64 = b.row(&[x]).unwrap().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "x={x} sum={s}");
    }
}

#[test]
fn zero_alpha_matches_eval() {
    let b = unit(CUBIC, vec![5, 6]);
    let pts = BoxDomain::unit(2).grid(7);
    let a = b.eval(&pts).unwrap();
    let d = b.eval_deriv(&pts, &MultiIndex::zero(2)).unwrap();
    assert_eq!(a, d);
}

#[test]
fn cosine_derivative_vanishes_at_left_end() {
    let c = unit(Family::Cosine, vec![2]);
    let d = c.eval_deriv(&[vec![0.0]], &MultiIndex(vec![1])).unwrap();
    assert!(d[(0, 0)].abs() < 1e-15 && d[(0, 1)].abs() < 1e-12);
}

/// Uniform knots of a clamped spline basis with `count` functions.
fn interior_knots(degree: usize, count: usize) -> Vec<f64> {
    let spans = count - degree;
    (1..spans).map(|i| i as f64 / spans as f64).collect()
}

fn away_from_knots(x: f64, knots: &[f64]) -> bool {
    knots.iter().all(|k| (x - k).abs() > 1e-3)
}

fn fd_check(spec: &BasisSpec, alpha: &[usize], seed: u64) {
    let h = 1e-5;
    let d = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots: Vec<Vec<f64>> = (0..d)
        .map(|k| match spec.family {
            Family::Bspline { degree } => interior_knots(degree, spec.counts[k]),
            _ => Vec::new(),
        })
        .collect();
    // Differentiate numerically along the first non-zero axis of alpha and
    // analytically along the rest.
    let axis = alpha.iter().position(|&a| a > 0).unwrap();
    let mut lower = alpha.to_vec();
    lower[axis] -= 1;
    let mut tested = 0;
    while tested < 50 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.99)).collect();
        if alpha.iter().sum::<usize>() > 1 && !(0..d).all(|k| away_from_knots(x[k], &knots[k])) {
            continue;
        }
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[axis] += h;
        xm[axis] -= h;
        let lo = MultiIndex(lower.clone());
        let fp = spec.eval_deriv(&[xp], &lo).unwrap();
        let fm = spec.eval_deriv(&[xm], &lo).unwrap();
        let exact = spec.eval_deriv(&[x.clone()], &MultiIndex(alpha.to_vec())).unwrap();
        for c in 0..spec.len() {
            let fd = (fp[(0, c)] - fm[(0, c)]) / (2.0 * h);
            assert!(
                (fd - exact[(0, c)]).abs() <= 1e-6,
                "{:?} alpha={alpha:?} x={x:?} col={c}: fd={fd} exact={}",
                spec.family,
                exact[(0, c)]
            );
        }
        tested += 1;
    }
}

#[test]
fn derivatives_match_finite_differences_in_one_dimension() {
    fd_check(&unit(CUBIC, vec![10]), &[1], 1);
    fd_check(&unit(CUBIC, vec![10]), &[2], 2);
    fd_check(&unit(Family::Cosine, vec![6]), &[1], 3);
    fd_check(&unit(Family::Cosine, vec![4]), &[2], 4);
    fd_check(&unit(Family::Legendre, vec![5]), &[1], 5);
    fd_check(&unit(Family::Legendre, vec![5]), &[2], 6);
}

#[test]
fn derivatives_match_finite_differences_on_tensor_products() {
    let domain = BoxDomain::new(vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap();
    let specs = [
        BasisSpec::new(CUBIC, vec![6, 5], domain.clone()).unwrap(),
        BasisSpec::new(Family::Cosine, vec![4, 5], domain.clone()).unwrap(),
        BasisSpec::new(Family::Legendre, vec![5, 4], domain.clone()).unwrap(),
    ];
    for (i, spec) in specs.iter().enumerate() {
        // random points are drawn in the unit square; map them into the box
        let shifted = BasisSpec {
            domain: BoxDomain::unit(2),
            ..spec.clone()
        };
        for (j, alpha) in [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]].iter().enumerate() {
            fd_check(&shifted, alpha, 100 + 10 * i as u64 + j as u64);
        }
        // the scaled box changes the chain rule factor; spot check it too
        fd_check_box(spec, 200 + i as u64);
    }
}

fn fd_check_box(spec: &BasisSpec, seed: u64) {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let x: Vec<f64> = (0..2)
            .map(|k| {
                let (lo, hi) = (spec.domain.lo[k], spec.domain.hi[k]);
                rng.random_range(lo + 0.01 * (hi - lo)..hi - 0.01 * (hi - lo))
            })
            .collect();
        let exact = spec.eval_deriv(&[x.clone()], &MultiIndex(vec![0, 1])).unwrap();
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[1] += h;
        xm[1] -= h;
        let (fp, fm) = (spec.row(&xp).unwrap(), spec.row(&xm).unwrap());
        for c in 0..spec.len() {
            let fd = (fp[c] - fm[c]) / (2.0 * h);
            assert!((fd - exact[(0, c)]).abs() <= 1e-6, "{:?} col {c}", spec.family);
        }
    }
}

#[test]
fn derivative_beyond_spline_smoothness_is_a_capability_error() {
    let b = unit(CUBIC, vec![6]);
    let e = b.eval_deriv(&[vec![0.5]], &MultiIndex(vec![3])).unwrap_err();
    assert!(matches!(e, Error::Capability(_)), "{e}");
    assert!(unit(Family::Cosine, vec![4])
        .eval_deriv(&[vec![0.5]], &MultiIndex(vec![5]))
        .is_ok());
}

#[test]
fn points_outside_the_domain_are_rejected_by_name() {
    let b = unit(CUBIC, vec![6, 6]);
    let e = b.eval(&[vec![0.5, 0.5], vec![0.2, 1.0000001]]).unwrap_err();
    match e {
        Error::Input(msg) => assert!(msg.contains("1.0000001"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(BasisSpec::new(CUBIC, vec![3], BoxDomain::unit(1)).is_err());
    assert!(BasisSpec::new(Family::Bspline { degree: 0 }, vec![3], BoxDomain::unit(1)).is_err());
    assert!(BasisSpec::new(Family::Cosine, vec![0], BoxDomain::unit(1)).is_err());
    assert!(matches!(
        BasisSpec::new(Family::Cosine, vec![2; 7], BoxDomain::unit(7)),
        Err(Error::Capability(_))
    ));
}

#[test]
fn basis_spec_serde_round_trip() {
    let b = unit(CUBIC, vec![4, 5]);
    let text = serde_json::to_string(&b).unwrap();
    assert_eq!(serde_json::from_str::<BasisSpec>(&text).unwrap(), b);
}

proptest! {
    #[test]
    fn column_index_round_trips(counts in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
        let d = counts.len();
        let b = BasisSpec::new(Family::Cosine, counts, BoxDomain::unit(d)).unwrap();
        let col = (seed as usize) % b.len();
        prop_assert_eq!(b.column_of(&b.multi_index_of(col)), col);
        for c in 0..b.len() {
            let idx = b.multi_index_of(c);
            prop_assert!(idx.iter().zip(&b.counts).all(|(i, m)| i < m));
            prop_assert_eq!(b.column_of(&idx), c);
        }
    }

    #[test]
    fn spline_partition_of_unity_everywhere(count in 4usize..20, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let b = unit(CUBIC, vec![count, 5]);
        let s: f64 = b.row(&[x, y]).unwrap().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd(n in 1usize..40, seed in any::<u64>()) {
        let b = unit(CUBIC, vec![4, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let g = b.gram(&pts).unwrap();
        prop_assert_eq!(g.underdetermined, n < b.len());
        let m = &g.matrix;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-14);
            }
        }
        let (lmin, _) = sym_eig_extremes(m).unwrap();
        prop_assert!(lmin >= -1e-12);
    }
}

#[test]
fn repeated_point_gives_rank_one_gram() {
    let b = unit(Family::Cosine, vec![3, 3]);
    let g = b.gram(&vec![vec![0.3, 0.7]; 20]).unwrap();
    let rank = crate::numerics::numerical_rank(&g.matrix, 1e-10).unwrap();
    assert_eq!(rank, 1);
}

#[test]
fn cosine_gram_on_dense_grid_is_near_identity() {
    let b = unit(Family::Cosine, vec![6]);
    let pts = BoxDomain::unit(1).grid(100_000);
    let g = b.gram(&pts).unwrap();
    let diff = (&g.matrix - Matrix::identity(6, 6)).amax();
    assert!(diff <= 1e-3, "max deviation {diff}");
}

fn action_rule() -> QuadratureRule {
    QuadratureRule::composite_gauss(&BoxDomain::unit(1), 8, 6).unwrap()
}

#[test]
fn point_mass_policy_rows_equal_point_evaluation() {
    let b = unit(CUBIC, vec![5, 6]);
    let a0 = 0.37;
    let pi = PolicyDensity::point_mass(Arc::new(move |s: &[f64]| vec![a0 * s[0] + 0.1]), BoxDomain::unit(1));
    let states = vec![vec![0.0], vec![0.25], vec![0.9]];
    let rows = b.policy_rows(&pi, &states, &action_rule()).unwrap();
    for (i, s) in states.iter().enumerate() {
        let direct = b.row(&[s[0], a0 * s[0] + 0.1]).unwrap();
        for c in 0..b.len() {
            assert_eq!(rows[(i, c)], direct[c]);
        }
    }
}

#[test]
fn uniform_policy_kills_nonconstant_cosine_action_factors() {
    let b = unit(Family::Cosine, vec![3, 4]);
    let pi = PolicyDensity::uniform(BoxDomain::unit(1), &BoxDomain::unit(1)).unwrap();
    let states = vec![vec![0.1], vec![0.5], vec![0.77]];
    let rows = b.policy_rows(&pi, &states, &action_rule()).unwrap();
    for (i, s) in states.iter().enumerate() {
        let srow = unit(Family::Cosine, vec![3]).row(s).unwrap();
        for c in 0..b.len() {
            let idx = b.multi_index_of(c);
            let expect = if idx[1] == 0 { srow[idx[0]] } else { 0.0 };
            assert!((rows[(i, c)] - expect).abs() < 1e-12, "state {i} col {c}");
        }
    }
}

#[test]
fn gaussian_policy_rows_match_monte_carlo() {
    let b = unit(CUBIC, vec![4, 6]);
    let g = AffineTruncatedGaussian::new(vec![0.2], vec![vec![0.6]], vec![0.2], BoxDomain::unit(1)).unwrap();
    let pi = PolicyDensity::gaussian(g, &BoxDomain::unit(1)).unwrap();
    let states = vec![vec![0.15], vec![0.8]];
    let rows = b.policy_rows(&pi, &states, &action_rule()).unwrap();
    let n = 1_000_000;
    for (i, s) in states.iter().enumerate() {
        let mut rng = SeededStream::new(11, i as u64).rng();
        let mut sum = vec![0.0; b.len()];
        let mut sumsq = vec![0.0; b.len()];
        let mut buf = vec![0.0; b.len()];
        for _ in 0..n {
            let a = pi.sample(s, &mut rng);
            b.row_into(&[s[0], a[0]], None, &mut buf);
            for c in 0..b.len() {
                sum[c] += buf[c];
                sumsq[c] += buf[c] * buf[c];
            }
        }
        for c in 0..b.len() {
            let mean = sum[c] / n as f64;
            let var = (sumsq[c] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let diff = (rows[(i, c)] - mean).abs();
            assert!(
                diff <= 3.0 * se + 1e-12,
                "state {i} col {c}: quad {} mc {mean} se {se}",
                rows[(i, c)]
            );
        }
    }
}

#[test]
fn negative_policy_density_is_an_input_error() {
    #[derive(Debug)]
    struct Bad(BoxDomain);
    impl crate::mdp::ActionDensity for Bad {
        fn density(&self, a: &[f64], _: &[f64]) -> f64 {
            2.0 - 4.0 * a[0]
        }
        fn sample(&self, _: &[f64], _: &mut crate::mdp::StreamRng) -> Vec<f64> {
            vec![0.5]
        }
        fn action_box(&self) -> &BoxDomain {
            &self.0
        }
    }
    // integrates to zero, so bypass the constructor check
    let pi = PolicyDensity::Density(Arc::new(Bad(BoxDomain::unit(1))));
    let b = unit(Family::Cosine, vec![2, 2]);
    let e = b.policy_rows(&pi, &[vec![0.5]], &action_rule()).unwrap_err();
    assert!(matches!(e, Error::Input(_)));
}
