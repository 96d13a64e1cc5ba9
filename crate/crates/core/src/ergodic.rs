//! Orbit statistics: Lyapunov spectrum, center exponent along the center bundle, and
//! Pliss blocks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::models::{DAMap, ModelError};
use crate::rng;
use crate::torus::TorusPoint;

/// Warm-up iterations for the bundle sweeps on each side of the orbit.
pub const SWEEP_WARMUP: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicError {
    #[error("center bundle did not converge along the orbit: {0}")]
    BundleNoConvergence(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    /// Descending.
    pub exponents: [f64; 3],
    pub iterations: usize,
    pub seed: u64,
    pub start: Vec3,
    /// Largest change between the estimates at `N/2` and `N`.
    pub half_width: f64,
    /// Birkhoff average of `log|det Df|` along the same orbit.
    pub log_jacobian: f64,
}

impl ExponentReport {
    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt), returning the
/// diagonal of the triangular factor.
fn gram_schmidt(cols: &mut [Vec3; 3]) -> [f64; 3] {
    let mut r = [0.0; 3];
    for i in 0..3 {
        for j in 0..i {
            let p = linalg::dot(cols[i], cols[j]);
            cols[i] = linalg::axpy(cols[i], -p, cols[j]);
        }
        r[i] = linalg::norm(cols[i]);
        cols[i] = linalg::scale(cols[i], 1.0 / r[i]);
    }
    r
}

fn random_frame(seed: u64) -> [Vec3; 3] {
    let mut r = rng::stream(seed, u64::MAX);
    let mut cols = [[0.0; 3]; 3];
    for (i, c) in cols.iter_mut().enumerate() {
        for (j, x) in c.iter_mut().enumerate() {
            *x = if i == j { 1.0 } else { 0.0 } + 0.1 * (r.gen::<f64>() - 0.5);
        }
    }
    gram_schmidt(&mut cols);
    cols
}

/// Lyapunov spectrum by the derivative cocycle with re-orthonormalization every step.
pub fn lyapunov_spectrum(model: &DAMap, p: TorusPoint, n: usize, seed: u64) -> Result<ExponentReport, ErgodicError> {
    if n < 2 {
        return Err(ErgodicError::Invalid(format!("orbit length {n}")));
    }
    let mut frame = random_frame(seed);
    let mut sums = [0.0; 3];
    let mut half = [0.0; 3];
    let mut logdet = 0.0;
    let mut x = p;
    for k in 0..n {
        let d = model.derivative(x.coords());
        logdet += linalg::det(&d).abs().ln();
        for c in frame.iter_mut() {
            *c = linalg::mat_vec(&d, *c);
        }
        let r = gram_schmidt(&mut frame);
        for i in 0..3 {
            sums[i] += r[i].ln();
        }
        if k + 1 == n / 2 {
            half = sums.map(|s| s / (n / 2) as f64);
        }
        x = model.evaluate(x);
    }
    let mut ex = sums.map(|s| s / n as f64);
    half.sort_by(|a, b| b.total_cmp(a));
    ex.sort_by(|a, b| b.total_cmp(a));
    let half_width = (0..3).map(|i| (ex[i] - half[i]).abs()).fold(0.0, f64::max);
    Ok(ExponentReport {
        exponents: ex,
        iterations: n,
        seed,
        start: p.coords(),
        half_width,
        log_jacobian: logdet / n as f64,
    })
}

/// Spectra from `starts` uniform starting points, start `k` drawn from stream `(seed, k)`.
pub fn spectrum_batch(model: &DAMap, starts: usize, n: usize, seed: u64) -> Result<Vec<ExponentReport>, ErgodicError> {
    (0..starts as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k);
            let p = TorusPoint::new(r.gen(), r.gen(), r.gen());
            lyapunov_spectrum(model, p, n, seed.wrapping_add(k))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterExponent {
    pub value: f64,
    pub half_width: f64,
    /// `log |Df(f^k x) E^c|` for `k < N`.
    pub series: Vec<f64>,
}

fn project_normal(m: &Mat3, n: Vec3, transpose_inverse: bool) -> Vec3 {
    let v = if transpose_inverse {
        let inv = linalg::inverse(m).expect("diffeomorphism derivative is invertible");
        linalg::mat_t_vec(&inv, n)
    } else {
        linalg::mat_t_vec(m, n)
    };
    linalg::normalize(v)
}

/// Center exponent as the Birkhoff average of `log |Df|E^c|`, with `E^c` found by one
/// forward sweep (center-unstable normals) and one backward sweep (center-stable normals).
pub fn center_exponent(model: &DAMap, p: TorusPoint, n: usize) -> Result<CenterExponent, ErgodicError> {
    if n < 2 {
        return Err(ErgodicError::Invalid(format!("orbit length {n}")));
    }
    if model.is_linear() {
        let split = model.base().splitting();
        let v = split.eigenvalues[1].ln();
        return Ok(CenterExponent { value: v, half_width: 0.0, series: vec![v; n] });
    }
    let w = SWEEP_WARMUP;
    // orbit[k] = f^(k - w)(p)
    let mut orbit = Vec::with_capacity(n + 2 * w + 1);
    let mut back = Vec::with_capacity(w);
    let mut y = p;
    for _ in 0..w {
        y = model.inverse(y)?;
        back.push(y);
    }
    orbit.extend(back.into_iter().rev());
    let mut x = p;
    for _ in 0..=(n + w) {
        orbit.push(x);
        x = model.evaluate(x);
    }
    let ders: Vec<Mat3> = orbit.iter().map(|q| model.derivative(q.coords())).collect();
    let split = model.base().splitting();

    // Two seeds per sweep; their disagreement at the orbit start measures convergence.
    let seeds = [split.dual[0], linalg::normalize(linalg::add(split.dual[0], [0.3, -0.2, 0.1]))];
    let mut n_cu = vec![[0.0; 3]; n];
    for (s, seed) in seeds.iter().enumerate() {
        let mut v = linalg::normalize(*seed);
        for k in 0..(n + w) {
            if k >= w && s == 0 {
                n_cu[k - w] = v;
            } else if k == w {
                let a = linalg::line_angle(v, n_cu[0]);
                if a > 1e-8 {
                    return Err(ErgodicError::BundleNoConvergence(format!("center-unstable sweep residual {a:.2e}")));
                }
            }
            v = project_normal(&ders[k], v, true);
        }
    }
    let seeds = [split.dual[2], linalg::normalize(linalg::add(split.dual[2], [0.1, 0.3, -0.2]))];
    let mut n_cs = vec![[0.0; 3]; n];
    for (s, seed) in seeds.iter().enumerate() {
        let mut v = linalg::normalize(*seed);
        for k in (w..orbit.len() - 1).rev() {
            v = project_normal(&ders[k], v, false);
            if k < w + n && s == 0 {
                n_cs[k - w] = v;
            } else if k == w {
                let a = linalg::line_angle(v, n_cs[0]);
                if a > 1e-8 {
                    return Err(ErgodicError::BundleNoConvergence(format!("center-stable sweep residual {a:.2e}")));
                }
            }
        }
    }
    let mut series = Vec::with_capacity(n);
    for k in 0..n {
        let c = linalg::normalize(linalg::cross(n_cu[k], n_cs[k]));
        series.push(linalg::norm(linalg::mat_vec(&ders[k + w], c)).ln());
    }
    let value = series.iter().sum::<f64>() / n as f64;
    let half = series[..n / 2].iter().sum::<f64>() / (n / 2) as f64;
    Ok(CenterExponent { value, half_width: (value - half).abs(), series })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlissReport {
    pub threshold: f64,
    pub len: usize,
    /// 0-based start indices `n0` whose forward averages, starting at `a[n0]`, all stay
    /// below the threshold.
    pub indices: Vec<usize>,
    /// Indices among `indices` within the last `censor_window` positions; their
    /// condition was checked on very few terms.
    pub censored: Vec<usize>,
    pub censor_window: usize,
    pub density: f64,
}

/// Every `n0` with `(1/m) sum_{j<m} a[n0 + j] < tau` for all `m` with `n0 + m <= n`.
pub fn pliss_blocks(a: &[f64], tau: f64) -> PlissReport {
    let n = a.len();
    // b[k] = S_k - tau k; n0 qualifies iff max_{k > n0} b[k] < b[n0].
    let mut b = Vec::with_capacity(n + 1);
    b.push(0.0);
    let mut s = 0.0;
    for (k, x) in a.iter().enumerate() {
        s += x;
        b.push(s - tau * (k + 1) as f64);
    }
    let mut indices = Vec::new();
    let mut suffix_max = f64::NEG_INFINITY;
    for n0 in (0..n).rev() {
        suffix_max = suffix_max.max(b[n0 + 1]);
        if suffix_max < b[n0] {
            indices.push(n0);
        }
    }
    indices.reverse();
    let censor_window = (n / 10).max(1);
    let censored = indices.iter().copied().filter(|&i| i + censor_window >= n).collect();
    let density = if n == 0 { 0.0 } else { indices.len() as f64 / n as f64 };
    PlissReport { threshold: tau, len: n, indices, censored, censor_window, density }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlissFraction {
    pub center_exponent: f64,
    pub epsilon: f64,
    pub density: f64,
}

/// Density of Pliss times of `log |Df|E^c|` along the orbit at threshold `tau + eps`.
pub fn pliss_set_fraction(model: &DAMap, p: TorusPoint, n: usize, eps: f64) -> Result<PlissFraction, ErgodicError> {
    let ce = center_exponent(model, p, n)?;
    let rep = pliss_blocks(&ce.series, ce.value + eps);
    Ok(PlissFraction { center_exponent: ce.value, epsilon: eps, density: rep.density })
}
