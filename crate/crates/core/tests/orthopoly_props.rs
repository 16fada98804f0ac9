use clogsa_core::orthopoly::{family_for, hyperbolic_enumerate, stieltjes_family, MultiIndex};
use clogsa_core::probmodel::{InputModel, Marginal};
use clogsa_core::quadrature::{integrate_piecewise, QuadOptions};
use proptest::prelude::*;
use std::collections::HashSet;

fn gram_error(m: &Marginal, degree: usize) -> f64 {
    let fam = family_for(m, degree).unwrap();
    let (lo, hi) = m.support();
    let breaks: Vec<f64> = match *m {
        Marginal::Triangular { lower, mode, upper } => vec![lower, mode, upper],
        Marginal::Gaussian { mean, std } => (-8..=8).map(|k| mean + 5.0 * std * k as f64).collect(),
    };
    let _ = (lo, hi);
    let opts = QuadOptions { rel_tol: 1e-13, abs_tol: 1e-14, ..Default::default() };
    let mut worst: f64 = 0.0;
    for j in 0..=degree {
        for k in j..=degree {
            let f = |x: f64| {
                let v = fam.eval_all(x, degree);
                v[j] * v[k] * m.pdf(x)
            };
            let got = integrate_piecewise(f, &breaks, &opts).unwrap().value;
            let want = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

#[test]
fn degree_twenty_stays_orthonormal() {
    let model = InputModel::preset("sg-clogging-7d").unwrap();
    for input in model.inputs() {
        let err = gram_error(&input.marginal, 20);
        assert!(err < 1e-7, "{}: {err:e}", input.name);
    }
}

#[test]
fn stieltjes_matches_hermite_for_gaussian() {
    let m = Marginal::gaussian(2.0, 3.0).unwrap();
    let s = stieltjes_family(&m, 12).unwrap();
    let h = family_for(&m, 12).unwrap();
    for x in [-4.0, 0.5, 2.0, 7.3] {
        let a = s.eval_all(x, 12);
        let b = h.eval_all(x, 12);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8 * v.abs().max(1.0));
        }
    }
}

fn as_set(v: &[MultiIndex]) -> HashSet<Vec<u32>> {
    v.iter().map(|a| a.0.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hyperbolic_sets_grow_with_q(d in 1usize..6, p in 1u32..6, q1 in 0.2f64..1.0, dq in 0.0f64..0.5) {
        let q2 = (q1 + dq).min(1.0);
        let a = as_set(&hyperbolic_enumerate(d, p, q1).unwrap());
        let b = as_set(&hyperbolic_enumerate(d, p, q2).unwrap());
        prop_assert!(a.is_subset(&b));
        prop_assert!(a.contains(&vec![0; d]));
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = p;
            prop_assert!(a.contains(&e));
        }
    }

    #[test]
    fn hyperbolic_members_respect_norm(d in 1usize..5, p in 1u32..7, q in 0.3f64..1.0) {
        for a in hyperbolic_enumerate(d, p, q).unwrap() {
            prop_assert!(a.quasi_norm(q) <= p as f64 + 1e-9);
            prop_assert!(a.total_degree() <= p);
        }
    }

    #[test]
    fn triangular_families_are_orthonormal(a in -5.0f64..5.0, w in 0.1f64..10.0, t in 0.0f64..1.0) {
        let m = Marginal::triangular(a, a + t * w, a + w).unwrap();
        prop_assert!(gram_error(&m, 8) < 1e-9);
    }
}
