//! Fixed-size 3-vector and 3x3 matrix helpers.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

/// `a + k * b`
#[inline]
pub fn axpy(a: Vec3, k: f64, b: Vec3) -> Vec3 {
    [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]]
}

/// Normalizes `a`; returns the zero vector unchanged.
#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Unsigned angle between two directions (lines), in [0, pi/2].
pub fn line_angle(a: Vec3, b: Vec3) -> f64 {
    let c = (dot(a, b).abs() / (norm(a) * norm(b))).min(1.0);
    let s = norm(cross(a, b)) / (norm(a) * norm(b));
    s.atan2(c)
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `m^T v`
#[inline]
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Inverse by cofactors; `None` for a singular matrix.
pub fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    // Columns of the inverse-transpose are the cross products of rows.
    let c0 = cross(m[1], m[2]);
    let c1 = cross(m[2], m[0]);
    let c2 = cross(m[0], m[1]);
    let inv_d = 1.0 / d;
    Some([
        [c0[0] * inv_d, c1[0] * inv_d, c2[0] * inv_d],
        [c0[1] * inv_d, c1[1] * inv_d, c2[1] * inv_d],
        [c0[2] * inv_d, c1[2] * inv_d, c2[2] * inv_d],
    ])
}

/// Matrix with the given vectors as columns.
pub fn from_columns(c: [Vec3; 3]) -> Mat3 {
    [
        [c[0][0], c[1][0], c[2][0]],
        [c[0][1], c[1][1], c[2][1]],
        [c[0][2], c[1][2], c[2][2]],
    ]
}

/// Largest entry-wise absolute difference.
pub fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Operator 2-norm, via the largest eigenvalue of `m^T m` (power iteration).
pub fn op_norm(m: &Mat3) -> f64 {
    let mut v = [1.0, 0.7, 0.3];
    let mut s = 0.0;
    for _ in 0..200 {
        let w = mat_t_vec(m, mat_vec(m, v));
        let n = norm(w);
        if n == 0.0 {
            return 0.0;
        }
        v = scale(w, 1.0 / n);
        if (n - s).abs() <= 1e-15 * n {
            s = n;
            break;
        }
        s = n;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let m = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let inv = inverse(&m).unwrap();
        let id = mat_mul(&m, &inv);
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(max_abs_diff(&id, &eye) < 1e-14);
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(inverse(&m).is_none());
    }

    #[test]
    fn op_norm_of_diagonal() {
        let m = [[0.5, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, 2.0]];
        assert!((op_norm(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn line_angle_ignores_orientation() {
        assert!(line_angle([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]) < 1e-15);
        let a = line_angle([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
