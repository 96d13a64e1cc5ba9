//! Library results against independent computations done here.

use std::f64::consts::TAU;

use approx::assert_abs_diff_eq;
use centerlab::ergodic::{self, ExponentReport};
use centerlab::kan::{self, KanMap, MeasureMethod};
use centerlab::models::DAMap;
use centerlab::semiconj::Conjugator;
use centerlab::torus::{self, IntegerAutomorphism, TorusPoint};

const A_REF: [[i64; 3]; 3] = [[1, -1, 0], [-1, 2, -1], [0, -1, 2]];

/// `det(lambda I - m)` by cofactor expansion.
fn char_poly(m: &[[i64; 3]; 3], l: f64) -> f64 {
    let a = |i: usize, j: usize| if i == j { l - m[i][j] as f64 } else { -(m[i][j] as f64) };
    a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
        + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
}

/// Roots by scanning for sign changes on a fine grid, then bisecting to the last bit.
fn bisection_roots(m: &[[i64; 3]; 3], lo: f64, hi: f64) -> Vec<f64> {
    let n = 20_000;
    let mut roots = Vec::new();
    for k in 0..n {
        let (mut a, mut b) = (lo + (hi - lo) * k as f64 / n as f64, lo + (hi - lo) * (k + 1) as f64 / n as f64);
        let (fa, fb) = (char_poly(m, a), char_poly(m, b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa * fb > 0.0 {
            continue;
        }
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if c == a || c == b {
                break;
            }
            if char_poly(m, a) * char_poly(m, c) <= 0.0 {
                b = c;
            } else {
                a = c;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots
}

#[test]
fn spectral_split_matches_bisection() {
    let oracle = bisection_roots(&A_REF, 0.0, 10.0);
    assert_eq!(oracle.len(), 3);
    let split = torus::spectral_split(&A_REF).unwrap();
    for (l, o) in split.eigenvalues.iter().zip(&oracle) {
        assert_abs_diff_eq!(*l, *o, epsilon = 1e-10);
    }
    assert_eq!(torus::characteristic_polynomial(&A_REF), (-5, 6, -1));
}

#[test]
fn spectral_split_other_matrix() {
    // Symmetric, positive definite, det 1: three positive eigenvalues off 1.
    let m = [[2, 1, 1], [1, 2, 0], [1, 0, 1]];
    let oracle = bisection_roots(&m, 0.0, 10.0);
    let split = torus::spectral_split(&m).unwrap();
    assert_eq!(oracle.len(), 3);
    for (l, o) in split.eigenvalues.iter().zip(&oracle) {
        assert_abs_diff_eq!(*l, *o, epsilon = 1e-10);
    }
}

#[test]
fn derivative_matches_central_differences() {
    let f = DAMap::reference_with_amplitude(0.1);
    let h = 1e-6;
    for p in [[0.5, 0.5, 0.5], [0.41, 0.55, 0.62], [0.6, 0.45, 0.38], [0.1, 0.9, 0.3]] {
        let d = f.derivative(p);
        for j in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[j] += h;
            lo[j] -= h;
            let (a, b) = (f.evaluate_lift(torus::LiftPoint(hi)).0, f.evaluate_lift(torus::LiftPoint(lo)).0);
            for i in 0..3 {
                assert_abs_diff_eq!(d[i][j], (a[i] - b[i]) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }
}

/// `O(n^2)` definition of Pliss times.
fn pliss_brute(a: &[f64], tau: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&n0| {
            let mut s = 0.0;
            (n0..a.len()).all(|j| {
                s += a[j];
                s / ((j - n0 + 1) as f64) < tau
            })
        })
        .collect()
}

#[test]
fn pliss_matches_brute_force_length_eight() {
    let mut seq = [0.0; 8];
    for code in 0..3usize.pow(8) {
        let mut c = code;
        for x in seq.iter_mut() {
            *x = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        assert_eq!(ergodic::pliss_blocks(&seq, 0.5).indices, pliss_brute(&seq, 0.5), "{seq:?}");
    }
}

#[test]
fn linear_exponents_are_log_eigenvalues() {
    let f = DAMap::linear(IntegerAutomorphism::reference());
    let r = ergodic::lyapunov_spectrum(&f, TorusPoint::new(0.3, 0.1, 0.7), 50_000, 0).unwrap();
    let oracle = bisection_roots(&A_REF, 0.0, 10.0);
    for i in 0..3 {
        assert_abs_diff_eq!(r.exponents[i], oracle[2 - i].ln(), epsilon = 1e-3);
    }
    let text = serde_json::to_string(&r).unwrap();
    let back: ExponentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn unperturbed_semiconjugacy_is_identity() {
    let c = Conjugator::new(DAMap::linear(IntegerAutomorphism::reference()), 1e-8).unwrap();
    for p in [[0.1, 0.2, 0.3], [0.9, 0.0, 0.5]] {
        assert_eq!(c.phi(TorusPoint::new(p[0], p[1], p[2])).unwrap().coords(), p);
    }
}

/// Composite Simpson rule.
fn simpson(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn kan_boundary_integrals() {
    for (a, expected) in [(1.0 / 32.0, -2.443e-4), (0.25, -1.6005e-2)] {
        let oracle = simpson(200_000, |t| (1.0 - a * (TAU * t).cos()).ln());
        let r = kan::kan_validate(&KanMap::new(a, 0.0).unwrap()).unwrap();
        for q in r.quadrature {
            assert_abs_diff_eq!(q, oracle, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(kan::boundary_integral_closed_form(a), oracle, epsilon = 1e-10);
        // Quoted values carry four significant digits.
        assert_abs_diff_eq!(oracle, expected, epsilon = 1e-6);
    }
}

#[test]
fn kan_holonomy_conjugates_boundary_maps() {
    let m = KanMap::new(0.25, 0.1).unwrap();
    let g = |i: usize, x: f64| (3.0 * x + 0.1 * i as f64 * (TAU * x).sin()).rem_euclid(1.0);
    for k in 0..20 {
        let th = k as f64 / 20.0 + 0.013;
        let lhs = g(1, kan::holonomy_at(&m, th, 30));
        let rhs = kan::holonomy_at(&m, g(0, th), 30);
        let d = (lhs - rhs).rem_euclid(1.0);
        assert!(d.min(1.0 - d) < 1e-9, "theta {th}: {lhs} vs {rhs}");
    }
    let id = KanMap::new(0.25, 0.0).unwrap();
    for k in 0..10 {
        let th = k as f64 / 10.0 + 0.05;
        assert_abs_diff_eq!(kan::holonomy_at(&id, th, 25), th, epsilon = 1e-12);
    }
}

#[test]
fn kan_ulam_uniform_at_zero_shear() {
    let m = KanMap::new(0.25, 0.0).unwrap();
    let bm = kan::boundary_measure(&m, 1, &MeasureMethod::Ulam { cells: 64, per_cell: 30 }).unwrap();
    for d in bm.density() {
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-9);
    }
    assert_abs_diff_eq!(bm.transverse_exponent, kan::boundary_integral_closed_form(0.25), epsilon = 1e-3);
}

#[test]
fn kan_hypothesis_from_finite_differences() {
    let s = 0.1;
    let m = KanMap::new(0.25, s).unwrap();
    let h = 1e-7;
    let dtheta = |t: f64| {
        let lift = |th: f64| 3.0 * th + s * t * (TAU * th).sin();
        (lift(h) - lift(-h)) / (2.0 * h)
    };
    // p0 = (0, 0), p1 = (1/2, 1): at theta = 1/2 the phase flips the sign of the cosine.
    let at_p1 = {
        let lift = |th: f64| 3.0 * th + s * (TAU * th).sin();
        (lift(0.5 + h) - lift(0.5 - h)) / (2.0 * h)
    };
    assert_abs_diff_eq!((dtheta(0.0) - at_p1).abs(), TAU * s, epsilon = 1e-6);
    assert_abs_diff_eq!(kan::hypothesis_closed_form(s), TAU * s, epsilon = 1e-12);
    assert_abs_diff_eq!(m.derivative(0.5, 1.0)[0][0], at_p1, epsilon = 1e-6);
}
