//! Points of the 3-torus, their lifts to R^3, and hyperbolic integer automorphisms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};

/// Coordinates within this distance of 1.0 are identified with 0.0 when wrapping.
pub const SEAM_CLAMP: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("matrix determinant is {0}, expected +1 or -1")]
    NotUnimodular(i64),
    #[error("matrix is not hyperbolic: {0}")]
    NotHyperbolic(String),
    #[error("spectrum {0:?} does not satisfy 0 < l1 < 1 < l2 < l3")]
    WrongSignature([f64; 3]),
    #[error("matrix needs 9 integers, got {0}")]
    BadShape(usize),
}

/// A point of T^3 = R^3 / Z^3 with every coordinate in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(Vec3);

/// A point of the universal cover R^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint(pub Vec3);

#[inline]
fn wrap_coord(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 - SEAM_CLAMP {
        0.0
    } else {
        r
    }
}

/// Reduces a lift modulo Z^3.
#[inline]
pub fn wrap(p: LiftPoint) -> TorusPoint {
    TorusPoint([wrap_coord(p.0[0]), wrap_coord(p.0[1]), wrap_coord(p.0[2])])
}

impl TorusPoint {
    /// Wraps arbitrary real coordinates onto the torus.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        wrap(LiftPoint([x, y, z]))
    }

    pub fn coords(&self) -> Vec3 {
        self.0
    }

    /// The representative lift in [0,1)^3.
    pub fn lift(&self) -> LiftPoint {
        LiftPoint(self.0)
    }
}

impl LiftPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        LiftPoint([x, y, z])
    }

    pub fn wrap(&self) -> TorusPoint {
        wrap(*self)
    }
}

/// Shortest displacement `b - a` among all integer translates.
///
/// The lattice is Z^3, so minimizing coordinate-wise gives the same answer as
/// scanning the 27 neighbouring translates.
#[inline]
pub fn min_displacement(a: Vec3, b: Vec3) -> Vec3 {
    let mut d = linalg::sub(b, a);
    for c in d.iter_mut() {
        *c -= c.round();
    }
    d
}

/// Flat distance on T^3.
pub fn torus_distance(a: TorusPoint, b: TorusPoint) -> f64 {
    linalg::norm(min_displacement(a.0, b.0))
}

/// Eigen-data of a hyperbolic automorphism with spectrum `l1 < 1 < l2 < l3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicSplitting {
    /// Ascending eigenvalues.
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors; `eigenvectors[i]` belongs to `eigenvalues[i]`.
    pub eigenvectors: [Vec3; 3],
    /// Rows of the inverse eigenvector matrix: `<dual[i], eigenvectors[j]> = delta_ij`.
    pub dual: [Vec3; 3],
}

impl HyperbolicSplitting {
    /// Coordinates of `v` in the eigenbasis.
    #[inline]
    pub fn coordinates(&self, v: Vec3) -> Vec3 {
        [
            linalg::dot(self.dual[0], v),
            linalg::dot(self.dual[1], v),
            linalg::dot(self.dual[2], v),
        ]
    }

    pub fn stable(&self) -> Vec3 {
        self.eigenvectors[0]
    }
    pub fn center(&self) -> Vec3 {
        self.eigenvectors[1]
    }
    pub fn unstable(&self) -> Vec3 {
        self.eigenvectors[2]
    }
}

/// A 3x3 integer matrix with determinant +-1 and validated hyperbolic splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerAutomorphism {
    matrix: [[i64; 3]; 3],
    inverse: [[i64; 3]; 3],
    splitting: HyperbolicSplitting,
}

/// The reference automorphism `[[1,-1,0],[-1,2,-1],[0,-1,2]]`.
pub const A_REF: [[i64; 3]; 3] = [[1, -1, 0], [-1, 2, -1], [0, -1, 2]];

fn det_i64(m: &[[i64; 3]; 3]) -> i64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Coefficients `(c2, c1, c0)` of the monic characteristic polynomial
/// `x^3 + c2 x^2 + c1 x + c0`.
pub fn characteristic_polynomial(m: &[[i64; 3]; 3]) -> (i64, i64, i64) {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let minors = (m[0][0] * m[1][1] - m[0][1] * m[1][0])
        + (m[0][0] * m[2][2] - m[0][2] * m[2][0])
        + (m[1][1] * m[2][2] - m[1][2] * m[2][1]);
    (-trace, minors, -det_i64(m))
}

#[inline]
fn eval_cubic(c: (f64, f64, f64), x: f64) -> f64 {
    ((x + c.0) * x + c.1) * x + c.2
}

/// Bisection to the floating-point limit, then one Newton polish if it stays in the bracket.
fn root_in(c: (f64, f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = eval_cubic(c, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval_cubic(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let d = (3.0 * x + 2.0 * c.0) * x + c.1;
    if d != 0.0 {
        let xn = x - eval_cubic(c, x) / d;
        if xn >= lo && xn <= hi {
            return xn;
        }
    }
    x
}

fn eigenvector(m: &Mat3, lambda: f64) -> Vec3 {
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let cands = [
        linalg::cross(b[0], b[1]),
        linalg::cross(b[0], b[2]),
        linalg::cross(b[1], b[2]),
    ];
    let mut v = cands
        .into_iter()
        .max_by(|a, b| linalg::norm(*a).total_cmp(&linalg::norm(*b)))
        .unwrap();
    v = linalg::normalize(v);
    // Sign convention: dominant entry positive.
    let imax = (0..3).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap();
    if v[imax] < 0.0 {
        v = linalg::scale(v, -1.0);
    }
    v
}

/// Eigenvalues and eigenvectors of a unimodular integer matrix, validated against
/// the signature `0 < l1 < 1 < l2 < l3`.
pub fn spectral_split(m: &[[i64; 3]; 3]) -> Result<HyperbolicSplitting, TorusError> {
    let d = det_i64(m);
    if d.abs() != 1 {
        return Err(TorusError::NotUnimodular(d));
    }
    let (c2, c1, c0) = characteristic_polynomial(m);
    // Exact tests on the integer polynomial: roots +-1 and the discriminant sign.
    let p_at = |x: i64| x * x * x + c2 * x * x + c1 * x + c0;
    if p_at(1) == 0 || p_at(-1) == 0 {
        return Err(TorusError::NotHyperbolic("eigenvalue of modulus one".into()));
    }
    let (b, c, dd) = (c2 as i128, c1 as i128, c0 as i128);
    let disc = 18 * b * c * dd - 4 * b * b * b * dd + b * b * c * c - 4 * c * c * c - 27 * dd * dd;
    if disc < 0 {
        return Err(TorusError::NotHyperbolic("complex conjugate pair".into()));
    }
    if disc == 0 {
        return Err(TorusError::NotHyperbolic("repeated eigenvalue".into()));
    }
    let cf = (c2 as f64, c1 as f64, c0 as f64);
    // Critical points of the cubic separate the three simple real roots.
    let (qa, qb, qc) = (3.0, 2.0 * cf.0, cf.1);
    let sq = (qb * qb - 4.0 * qa * qc).sqrt();
    let (r1, r2) = ((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa));
    let bound = 1.0 + cf.0.abs().max(cf.1.abs()).max(cf.2.abs());
    let eig = [
        root_in(cf, -bound, r1),
        root_in(cf, r1, r2),
        root_in(cf, r2, bound),
    ];
    if !(eig[0] > 0.0 && eig[0] < 1.0 && eig[1] > 1.0 && eig[2] > eig[1]) {
        return Err(TorusError::WrongSignature(eig));
    }
    let mf = to_f64(m);
    let vecs = [
        eigenvector(&mf, eig[0]),
        eigenvector(&mf, eig[1]),
        eigenvector(&mf, eig[2]),
    ];
    let inv = linalg::inverse(&linalg::from_columns(vecs))
        .ok_or_else(|| TorusError::NotHyperbolic("degenerate eigenbasis".into()))?;
    Ok(HyperbolicSplitting {
        eigenvalues: eig,
        eigenvectors: vecs,
        dual: inv,
    })
}

fn to_f64(m: &[[i64; 3]; 3]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j] as f64;
        }
    }
    out
}

fn adjugate_inverse(m: &[[i64; 3]; 3], det: i64) -> [[i64; 3]; 3] {
    let mut inv = [[0i64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (k0, k1) = ((i + 1) % 3, (i + 2) % 3);
            let cof = m[r0][k0] * m[r1][k1] - m[r0][k1] * m[r1][k0];
            inv[i][j] = cof * det;
        }
    }
    inv
}

impl IntegerAutomorphism {
    pub fn new(matrix: [[i64; 3]; 3]) -> Result<Self, TorusError> {
        let splitting = spectral_split(&matrix)?;
        let det = det_i64(&matrix);
        Ok(Self {
            inverse: adjugate_inverse(&matrix, det),
            matrix,
            splitting,
        })
    }

    /// Builds from a row-major 9-integer array, the config-file form.
    pub fn from_row_major(entries: &[i64]) -> Result<Self, TorusError> {
        if entries.len() != 9 {
            return Err(TorusError::BadShape(entries.len()));
        }
        let mut m = [[0i64; 3]; 3];
        for (k, e) in entries.iter().enumerate() {
            m[k / 3][k % 3] = *e;
        }
        Self::new(m)
    }

    pub fn reference() -> Self {
        Self::new(A_REF).expect("reference matrix is hyperbolic")
    }

    pub fn matrix(&self) -> [[i64; 3]; 3] {
        self.matrix
    }

    pub fn matrix_f64(&self) -> Mat3 {
        to_f64(&self.matrix)
    }

    pub fn inverse_f64(&self) -> Mat3 {
        to_f64(&self.inverse)
    }

    pub fn inverse_matrix(&self) -> [[i64; 3]; 3] {
        self.inverse
    }

    pub fn determinant(&self) -> i64 {
        det_i64(&self.matrix)
    }

    pub fn splitting(&self) -> &HyperbolicSplitting {
        &self.splitting
    }

    pub fn row_major(&self) -> [i64; 9] {
        let m = self.matrix;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    #[inline]
    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.matrix;
        let row = |r: usize| m[r][0] as f64 * v[0] + m[r][1] as f64 * v[1] + m[r][2] as f64 * v[2];
        [row(0), row(1), row(2)]
    }

    #[inline]
    pub fn apply_inverse_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.inverse;
        let row = |r: usize| m[r][0] as f64 * v[0] + m[r][1] as f64 * v[1] + m[r][2] as f64 * v[2];
        [row(0), row(1), row(2)]
    }

    /// Exact matrix-vector product on the cover.
    pub fn apply_lift(&self, q: LiftPoint) -> LiftPoint {
        LiftPoint(self.apply_vec(q.0))
    }

    pub fn apply(&self, p: TorusPoint) -> TorusPoint {
        wrap(self.apply_lift(p.lift()))
    }

    pub fn apply_inverse(&self, p: TorusPoint) -> TorusPoint {
        wrap(LiftPoint(self.apply_inverse_vec(p.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(LiftPoint::new(0.0, 0.0, 0.0)).coords(), [0.0, 0.0, 0.0]);
        assert_eq!(wrap(LiftPoint::new(1.25, -0.5, 3.0)).coords(), [0.25, 0.5, 0.0]);
        assert_eq!(wrap(LiftPoint::new(-1e-16, 0.3, 0.7)).coords(), [0.0, 0.3, 0.7]);
    }

    #[test]
    fn wrap_seam_is_clamped() {
        let p = wrap(LiftPoint::new(1.0 - 5e-16, 2.0 - 1e-17, -3.0));
        assert_eq!(p.coords(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_is_not_hyperbolic() {
        let id = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert!(matches!(spectral_split(&id), Err(TorusError::NotHyperbolic(_))));
    }

    #[test]
    fn two_contracting_eigenvalues_is_wrong_signature() {
        let m = [[3, 2, 1], [2, 2, 1], [1, 1, 1]];
        match spectral_split(&m) {
            Err(TorusError::WrongSignature(e)) => {
                assert!((e[0] - 0.308).abs() < 1e-3);
                assert!((e[1] - 0.643).abs() < 1e-3);
                assert!((e[2] - 5.049).abs() < 1e-3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_unimodular_rejected() {
        let m = [[2, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert_eq!(spectral_split(&m), Err(TorusError::NotUnimodular(2)));
    }

    #[test]
    fn reference_matrix_inverse() {
        let a = IntegerAutomorphism::reference();
        let prod = linalg::mat_mul(&a.matrix_f64(), &a.inverse_f64());
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(prod, eye);
    }

    #[test]
    fn first_column_and_fixed_point() {
        let a = IntegerAutomorphism::reference();
        assert_eq!(a.apply_lift(LiftPoint::new(1.0, 0.0, 0.0)).0, [1.0, -1.0, 0.0]);
        assert_eq!(a.apply(TorusPoint::new(0.0, 0.0, 0.0)).coords(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn distance_uses_nearest_translate() {
        let a = TorusPoint::new(0.05, 0.5, 0.95);
        let b = TorusPoint::new(0.95, 0.5, 0.05);
        assert!((torus_distance(a, b) - (0.02f64).sqrt()).abs() < 1e-15);
    }
}
