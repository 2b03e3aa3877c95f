use isf_core::analysis::{backbone_curves, radius_grid, Amplitude, CurveKind};
use isf_core::data::Pairs;
use isf_core::expand::{realify_foliation, solve_isf_series_map, solve_isf_series_vf, ResonancePolicy};
use isf_core::fit::residual_metric;
use isf_core::geometry::{composite_submersion, leaf_chart, leaf_frames, ChartMethod, InversionMode};
use isf_core::poly::compose;
use isf_core::spectral::eig_full;
use isf_core::{Dynamics, Foliation, MultiIndexSet, RealPoly};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn coeff_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

fn poly_from(n: usize, out: usize, alpha: usize, c: &[f64]) -> RealPoly {
    let mut p = RealPoly::zeros(n, out, alpha).unwrap();
    p.coeffs_mut().iter_mut().zip(c).for_each(|(a, b)| *a = *b);
    p
}

/// Two weakly damped rotations, coupled by cubic terms.
fn map_model(cubic: &[f64]) -> RealPoly {
    let mut f = RealPoly::zeros(4, 4, 3).unwrap();
    let set = f.index_set().clone();
    for (j, (rho, w)) in [(0.98, 0.7), (0.95, 1.9)].into_iter().enumerate() {
        let (a, b) = (2 * j, 2 * j + 1);
        let c = f.coeffs_mut();
        c[(a, set.unit(a))] = rho * f64::cos(w);
        c[(a, set.unit(b))] = -rho * f64::sin(w);
        c[(b, set.unit(a))] = rho * f64::sin(w);
        c[(b, set.unit(b))] = rho * f64::cos(w);
    }
    let cubic_range = set.degree_range(3);
    let mut k = 0;
    for j in 0..4 {
        for i in cubic_range.clone() {
            f.coeffs_mut()[(j, i)] = 0.1 * cubic[k % cubic.len()];
            k += 1;
        }
    }
    f
}

fn map_foliation(model: &RealPoly, mode: usize, alpha: usize) -> Foliation {
    let spec = eig_full(&model.jacobian0(), Dynamics::Map).unwrap().with_period(1.0);
    let sel = spec.closed_selection(&[mode]).unwrap();
    let spec = spec.with_selection(&sel).unwrap();
    let ef = solve_isf_series_map(model, &spec, alpha, ResonancePolicy::AlwaysSubmersion).unwrap();
    realify_foliation(&ef).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn index_sets_are_graded_and_nested(n in 1usize..5, a in 1usize..6, b in 1usize..6) {
        let (lo, hi) = (a.min(b), a.max(b));
        let small = MultiIndexSet::new(n, lo).unwrap();
        let big = MultiIndexSet::new(n, hi).unwrap();
        prop_assert_eq!(small.len(), isf_core::poly::binomial(n + lo, n) - 1);
        for i in 0..small.len() {
            prop_assert_eq!(small.get(i), big.get(i));
        }
        for i in 1..big.len() {
            let (d0, d1) = (big.degree(i - 1), big.degree(i));
            prop_assert!(d0 < d1 || (d0 == d1 && big.get(i - 1) != big.get(i)));
            prop_assert!(big.degree(i) >= 1);
        }
        let mut all: Vec<&[u32]> = big.iter().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), big.len());
    }

    #[test]
    fn maps_vanish_at_the_origin(c in coeff_vec(2 * 34)) {
        let p = poly_from(4, 2, 3, &c);
        prop_assert!(p.eval(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn composing_with_identity(c in coeff_vec(2 * 20)) {
        let p = poly_from(3, 2, 3, &c);
        let id = RealPoly::identity(3, 3).unwrap();
        let q = compose(&p, &id, 3).unwrap();
        prop_assert!((q.coeffs() - p.coeffs()).abs().max() < 1e-15);
    }

    #[test]
    fn composition_matches_pointwise(c1 in coeff_vec(2 * 9), c2 in coeff_vec(2 * 9), x in coeff_vec(2)) {
        // truncation error is O(|x|^4); scale the point down
        let x: Vec<f64> = x.iter().map(|v| 1e-3 * v).collect();
        let outer = poly_from(2, 2, 3, &c1);
        let inner = poly_from(2, 2, 3, &c2);
        let direct = outer.eval(inner.eval(&x).unwrap().as_slice()).unwrap();
        let composed = compose(&outer, &inner, 3).unwrap().eval(&x).unwrap();
        prop_assert!((direct - composed).norm() < 1e-10);
    }

    #[test]
    fn leaf_frames_satisfy_constraints(c in coeff_vec(2 * 5)) {
        let a = DMatrix::from_row_slice(2, 5, &c) + DMatrix::from_fn(2, 5, |i, j| if i == j { 2.0 } else { 0.0 });
        let u = RealPoly::linear(&a, 3).unwrap();
        let f = leaf_frames(&u).unwrap();
        prop_assert!(f.constraint_residual(&a) < 1e-12);
        let pp = f.v_perp.transpose() * &f.v_perp;
        prop_assert!((pp - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        prop_assert!((f.v_perp.transpose() * &f.v_par).abs().max() < 1e-12);
    }

    #[test]
    fn residual_metric_ignores_pair_order(cubic in coeff_vec(8), xs in coeff_vec(4 * 12), seed in 0u64..1000) {
        let model = map_model(&cubic);
        let fol = map_foliation(&model, 0, 3);
        let pts: Vec<Vec<f64>> = xs.chunks(4).map(|c| c.iter().map(|v| 0.1 * v).collect()).collect();
        let build = |order: &[usize]| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &k in order {
                x.extend_from_slice(&pts[k]);
                y.extend(model.eval(&pts[k]).unwrap().iter());
            }
            Pairs::new(4, 1.0, x, y).unwrap()
        };
        let id: Vec<usize> = (0..pts.len()).collect();
        let mut perm = id.clone();
        perm.rotate_left(seed as usize % pts.len());
        perm.swap(0, pts.len() - 1);
        let a = residual_metric(&fol, &build(&id)).unwrap();
        let b = residual_metric(&fol, &build(&perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-13 * a.max(1e-300));
    }

    #[test]
    fn atlas_inverse_recovers_states(cubic in coeff_vec(8), x in coeff_vec(4)) {
        let model = map_model(&cubic);
        let fols = vec![map_foliation(&model, 0, 5), map_foliation(&model, 2, 5)];
        let atlas = composite_submersion(fols).unwrap();
        let x: Vec<f64> = x.iter().map(|v| 1e-2 * v).collect();
        let z = atlas.u_hat.eval(&x).unwrap();
        let back = atlas.invert(z.as_slice(), InversionMode::Newton).unwrap().unwrap();
        let err = (back - nalgebra::DVector::from_column_slice(&x)).norm();
        prop_assert!(err < 1e-12, "newton inverse error {err}");
        let trunc = atlas.invert(z.as_slice(), InversionMode::Iterative).unwrap().unwrap();
        let err = (trunc - nalgebra::DVector::from_column_slice(&x)).norm();
        // truncated inverse is exact to order 5
        prop_assert!(err < 1e-9, "series inverse error {err}");
    }
}

#[test]
fn linear_model_has_a_flat_backbone() {
    let mut a = DMatrix::zeros(4, 4);
    for (j, (d, w)) in [(0.01, 1.0), (0.02, 2.3)].into_iter().enumerate() {
        a[(2 * j, 2 * j + 1)] = 1.0;
        a[(2 * j + 1, 2 * j)] = -w * w;
        a[(2 * j + 1, 2 * j + 1)] = -2.0 * d * w;
    }
    let g = RealPoly::linear(&a, 5).unwrap();
    let spec = eig_full(&a, Dynamics::Flow).unwrap();
    let sel = spec.closed_selection(&[0]).unwrap();
    let spec = spec.with_selection(&sel).unwrap();
    let ef = solve_isf_series_vf(&g, &spec, 5, ResonancePolicy::NearResonant { tol: 0.1 }).unwrap();
    let fol = realify_foliation(&ef).unwrap();
    let chart = leaf_chart(&fol.u, &leaf_frames(&fol.u).unwrap(), ChartMethod::PolyIteration).unwrap();
    let grid = radius_grid(0.1, 20).unwrap();
    let curve = backbone_curves(&fol, Amplitude::Chart(&chart), &grid, CurveKind::Isf, 90).unwrap();
    let w0 = curve.samples[0].omega;
    assert!(w0.is_finite());
    for (s, r) in curve.samples.iter().zip(&grid) {
        assert_eq!(s.r, *r);
        assert!(s.valid);
        assert!((s.omega - w0).abs() < 1e-12, "omega drifts to {} at r = {}", s.omega, s.r);
    }
    assert!(curve.samples.windows(2).all(|w| w[1].r > w[0].r));
}
