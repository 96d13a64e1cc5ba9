//! Kan-type skew products of the cylinder `S^1 x [0,1]`:
//! `(theta, t) -> (3 theta + s t sin(2 pi theta) mod 1, t - a t (1 - t) cos(2 pi theta))`.
//!
//! Validation of the defining conditions, basin statistics, boundary measures, the
//! center holonomy between the two boundary circles, and a test for singularity of that
//! holonomy.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Default quadrature nodes for the boundary integrals.
pub const QUADRATURE_NODES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KanError {
    #[error("condition ({index}) violated: {detail}")]
    ConditionViolated { index: usize, detail: String },
    #[error("Ulam power iteration did not converge after {iterations} steps (change {change:.3e})")]
    UlamNotConverged { iterations: usize, change: f64 },
    #[error("holonomy depths do not contract: ratio {ratio:.3} above {bound:.3}")]
    NotContracting { ratio: f64, bound: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KanMap {
    a: f64,
    s: f64,
}

impl KanMap {
    /// Any `a` in `[0, 1/2]` is constructible; whether the map satisfies the defining
    /// conditions is decided by [`kan_validate`].
    pub fn new(a: f64, s: f64) -> Result<Self, KanError> {
        if !(a.is_finite() && s.is_finite()) {
            return Err(KanError::InvalidParameter(format!("a = {a}, s = {s}")));
        }
        if !(0.0..=0.5).contains(&a) {
            return Err(KanError::InvalidParameter(format!("fiber amplitude {a} outside [0, 1/2]")));
        }
        Ok(Self { a, s })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Fiber map `h_theta(t)`.
    #[inline]
    pub fn fiber(&self, theta: f64, t: f64) -> f64 {
        t - self.a * t * (1.0 - t) * (TAU * theta).cos()
    }

    #[inline]
    pub fn evaluate(&self, theta: f64, t: f64) -> (f64, f64) {
        let x = 3.0 * theta + self.s * t * (TAU * theta).sin();
        (x - x.floor(), self.fiber(theta, t))
    }

    /// Rows `[d theta', d t']` against columns `[d theta, d t]`.
    pub fn derivative(&self, theta: f64, t: f64) -> [[f64; 2]; 2] {
        let (sn, cs) = (TAU * theta).sin_cos();
        [
            [3.0 + TAU * self.s * t * cs, self.s * sn],
            [TAU * self.a * t * (1.0 - t) * sn, 1.0 - self.a * (1.0 - 2.0 * t) * cs],
        ]
    }

    /// Lift of the boundary circle map at `t = i`.
    #[inline]
    pub fn boundary_lift(&self, i: usize, x: f64) -> f64 {
        3.0 * x + self.s * i as f64 * (TAU * x).sin()
    }

    #[inline]
    pub fn boundary_map(&self, i: usize, theta: f64) -> f64 {
        let x = self.boundary_lift(i, theta);
        x - x.floor()
    }

    #[inline]
    pub fn boundary_derivative(&self, i: usize, theta: f64) -> f64 {
        3.0 + TAU * self.s * i as f64 * (TAU * theta).cos()
    }

    /// `d_t h_theta` on the boundary `t = i`.
    #[inline]
    pub fn fiber_derivative(&self, i: usize, theta: f64) -> f64 {
        let sign = if i == 0 { -1.0 } else { 1.0 };
        1.0 + sign * self.a * (TAU * theta).cos()
    }

    /// Inverse of the (increasing) boundary lift: Newton safeguarded by bisection.
    pub fn boundary_lift_inverse(&self, i: usize, y: f64) -> f64 {
        let amp = (self.s * i as f64).abs();
        if amp == 0.0 {
            return y / 3.0;
        }
        let mut lo = (y - amp) / 3.0;
        let mut hi = (y + amp) / 3.0;
        let mut x = y / 3.0;
        let tol = 2.0 * f64::EPSILON * (1.0 + y.abs());
        for _ in 0..100 {
            let f = self.boundary_lift(i, x) - y;
            if f.abs() <= tol {
                break;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let nx = x - f / self.boundary_derivative(i, x);
            x = if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
            if hi - lo <= tol {
                break;
            }
        }
        x
    }

    /// Base expansion along both boundaries requires `3 - 2 pi |s| > 1`.
    pub fn boundary_expansion(&self) -> f64 {
        3.0 - TAU * self.s.abs()
    }
}

/// Closed form of `int_0^1 log(1 - a cos 2 pi theta) d theta`.
pub fn boundary_integral_closed_form(a: f64) -> f64 {
    ((1.0 + (1.0 - a * a).sqrt()) / 2.0).ln()
}

/// Periodic trapezoid rule (spectrally accurate for smooth periodic integrands).
pub fn periodic_quadrature(nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..nodes).map(|k| f(k as f64 / nodes as f64)).sum::<f64>() / nodes as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub index: usize,
    pub name: String,
    pub value: f64,
    /// Positive when the condition holds.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanReport {
    pub a: f64,
    pub s: f64,
    pub checks: Vec<ConditionCheck>,
    pub quadrature: [f64; 2],
    pub closed_form: f64,
    pub quadrature_error: f64,
}

impl KanReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Checks the defining conditions; index 5 is the boundary expansion `3 - 2 pi |s| > 1`.
pub fn kan_check(m: &KanMap) -> KanReport {
    let a = m.a;
    let mut checks = Vec::new();
    let mut push = |index: usize, name: &str, value: f64, margin: f64| {
        checks.push(ConditionCheck { index, name: name.into(), value, margin, passed: margin > 0.0 });
    };

    // (1) The fiber maps fix both boundaries: t(1 - t) vanishes at t = 0, 1.
    let worst = (0..64)
        .map(|k| {
            let th = k as f64 / 64.0;
            m.fiber(th, 0.0).abs().max((m.fiber(th, 1.0) - 1.0).abs())
        })
        .fold(0.0, f64::max);
    push(1, "boundaries fixed", worst, if worst == 0.0 { 1.0 } else { -worst });

    // (2) sup |d_t h| = 1 + a, attained at t in {0, 1}.
    push(2, "fiber derivative bound", 1.0 + a, 3.0 - (1.0 + a));

    // (3) Boundary integrals of log |d_t h|.
    let q = [0, 1].map(|i| periodic_quadrature(QUADRATURE_NODES, |th| m.fiber_derivative(i, th).abs().ln()));
    let closed = boundary_integral_closed_form(a);
    let worst_q = q[0].max(q[1]);
    push(3, "negative boundary integrals", worst_q, -worst_q);

    // (4) Contraction at (0,0) and (1/2,1), and h_0(t) < t < h_{1/2}(t): the gap is
    // a t (1 - t), largest a/4 at t = 1/2; a > 0 makes both strict.
    let contraction = m.fiber_derivative(0, 0.0).abs().max(m.fiber_derivative(1, 0.5).abs());
    push(4, "fixed-point contraction and fiber ordering", contraction, (1.0 - contraction).min(a / 4.0));

    push(5, "boundary expansion", m.boundary_expansion(), m.boundary_expansion() - 1.0);

    KanReport {
        a,
        s: m.s,
        checks,
        quadrature: q,
        closed_form: closed,
        quadrature_error: (q[0] - closed).abs().max((q[1] - closed).abs()),
    }
}

/// [`kan_check`], failing on the first violated condition.
pub fn kan_validate(m: &KanMap) -> Result<KanReport, KanError> {
    let r = kan_check(m);
    if let Some(c) = r.checks.iter().find(|c| !c.passed) {
        return Err(KanError::ConditionViolated {
            index: c.index,
            detail: format!("{} (value {:.6e}, margin {:.3e})", c.name, c.value, c.margin),
        });
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basin {
    Bottom,
    Top,
    Unresolved,
}

/// Iterates until the fiber coordinate is within `trap` of a boundary.
pub fn classify_point(m: &KanMap, mut theta: f64, mut t: f64, horizon: usize, trap: f64) -> Basin {
    for _ in 0..=horizon {
        if t < trap {
            return Basin::Bottom;
        }
        if t > 1.0 - trap {
            return Basin::Top;
        }
        (theta, t) = m.evaluate(theta, t);
    }
    Basin::Unresolved
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryTest {
    /// `(n_top - n_bottom) / sqrt(n_top + n_bottom)`.
    pub sign_z: f64,
    /// Normalized chi-square of cell counts against their involution partners.
    pub cell_z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub grid: usize,
    pub horizon: usize,
    pub trap: f64,
    pub samples_per_cell: usize,
    /// Per cell `[bottom, top, unresolved]`, row-major with `theta` the column index
    /// and `t` the row index.
    pub counts: Vec<[u32; 3]>,
    pub both_fraction: f64,
    pub unresolved_fraction: f64,
    /// Only for `s = 0`, where `(theta, t) -> (theta + 1/2, 1 - t)` commutes with the map.
    pub symmetry: Option<SymmetryTest>,
}

pub fn basin_classify(
    m: &KanMap,
    grid: usize,
    samples_per_cell: usize,
    horizon: usize,
    trap: f64,
    seed: u64,
) -> Result<BasinReport, KanError> {
    if grid == 0 || samples_per_cell == 0 || !(trap > 0.0 && trap < 0.5) {
        return Err(KanError::InvalidParameter(format!("grid {grid}, samples {samples_per_cell}, trap {trap}")));
    }
    let g = grid as f64;
    let counts: Vec<[u32; 3]> = (0..grid * grid)
        .into_par_iter()
        .map(|cell| {
            let (row, col) = (cell / grid, cell % grid);
            let mut r = rng::stream(seed, cell as u64);
            let mut c = [0u32; 3];
            for _ in 0..samples_per_cell {
                let th = (col as f64 + r.gen::<f64>()) / g;
                let t = (row as f64 + r.gen::<f64>()) / g;
                let k = match classify_point(m, th, t, horizon, trap) {
                    Basin::Bottom => 0,
                    Basin::Top => 1,
                    Basin::Unresolved => 2,
                };
                c[k] += 1;
            }
            c
        })
        .collect();
    let cells = counts.len() as f64;
    let both = counts.iter().filter(|c| c[0] > 0 && c[1] > 0).count() as f64 / cells;
    let total = (samples_per_cell * grid * grid) as f64;
    let unresolved = counts.iter().map(|c| c[2] as f64).sum::<f64>() / total;

    let symmetry = (m.s == 0.0 && grid % 2 == 0).then(|| {
        let n0: f64 = counts.iter().map(|c| c[0] as f64).sum();
        let n1: f64 = counts.iter().map(|c| c[1] as f64).sum();
        let sign_z = if n0 + n1 > 0.0 { (n1 - n0) / (n0 + n1).sqrt() } else { 0.0 };
        let mut chi = 0.0;
        let mut dof = 0.0;
        for (cell, c) in counts.iter().enumerate() {
            let (row, col) = (cell / grid, cell % grid);
            let partner = &counts[(grid - 1 - row) * grid + (col + grid / 2) % grid];
            let (x, y) = (c[1] as f64, partner[0] as f64);
            if x + y > 0.0 {
                chi += (x - y).powi(2) / (x + y);
                dof += 1.0;
            }
        }
        let cell_z = if dof > 0.0 { (chi - dof) / (2.0 * dof).sqrt() } else { 0.0 };
        SymmetryTest { sign_z, cell_z, passed: sign_z.abs() < 3.0 && cell_z < 3.0 }
    });

    Ok(BasinReport {
        grid,
        horizon,
        trap,
        samples_per_cell,
        counts,
        both_fraction: both,
        unresolved_fraction: unresolved,
        symmetry,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasureMethod {
    /// Ulam transfer matrix on `cells` cells with `per_cell` midpoint samples each.
    Ulam { cells: usize, per_cell: usize },
    /// Orbit histogram on `cells` cells from `samples` orbit points.
    Orbit { cells: usize, samples: usize, burn_in: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub boundary: usize,
    /// Cell masses, summing to 1.
    pub masses: Vec<f64>,
    /// `int log |d_t h_theta(i)|` against the estimated measure.
    pub transverse_exponent: f64,
    pub iterations: usize,
}

impl BoundaryMeasure {
    /// Cell masses times the cell count.
    pub fn density(&self) -> Vec<f64> {
        let k = self.masses.len() as f64;
        self.masses.iter().map(|m| m * k).collect()
    }
}

const ULAM_TOLERANCE: f64 = 1e-14;
const ULAM_MAX_ITERATIONS: usize = 20_000;
const ORBIT_CHUNK: usize = 1 << 16;

pub fn boundary_measure(m: &KanMap, boundary: usize, method: &MeasureMethod) -> Result<BoundaryMeasure, KanError> {
    if boundary > 1 {
        return Err(KanError::InvalidParameter(format!("boundary {boundary}")));
    }
    let (masses, iterations) = match *method {
        MeasureMethod::Ulam { cells, per_cell } => ulam(m, boundary, cells, per_cell)?,
        MeasureMethod::Orbit { cells, samples, burn_in, seed } => {
            if cells == 0 || samples == 0 {
                return Err(KanError::InvalidParameter("empty orbit histogram".into()));
            }
            let tasks = samples.div_ceil(ORBIT_CHUNK);
            let hists: Vec<Vec<u64>> = (0..tasks)
                .into_par_iter()
                .map(|k| {
                    let mut r = rng::stream(seed, k as u64);
                    let mut x: f64 = r.gen();
                    for _ in 0..burn_in {
                        x = m.boundary_map(boundary, x);
                    }
                    let mut h = vec![0u64; cells];
                    for _ in 0..ORBIT_CHUNK.min(samples - k * ORBIT_CHUNK) {
                        x = m.boundary_map(boundary, x);
                        h[((x * cells as f64) as usize).min(cells - 1)] += 1;
                    }
                    h
                })
                .collect();
            let mut h = vec![0u64; cells];
            for part in hists {
                for (a, b) in h.iter_mut().zip(part) {
                    *a += b;
                }
            }
            (h.iter().map(|&c| c as f64 / samples as f64).collect(), samples)
        }
    };
    let k = masses.len();
    // Cell averages of the integrand by a 16-point midpoint rule.
    let transverse_exponent = masses
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let avg = (0..16)
                .map(|q| m.fiber_derivative(boundary, (j as f64 + (q as f64 + 0.5) / 16.0) / k as f64).abs().ln())
                .sum::<f64>()
                / 16.0;
            w * avg
        })
        .sum();
    Ok(BoundaryMeasure { boundary, masses, transverse_exponent, iterations })
}

fn ulam(m: &KanMap, boundary: usize, cells: usize, per_cell: usize) -> Result<(Vec<f64>, usize), KanError> {
    if cells == 0 || per_cell == 0 {
        return Err(KanError::InvalidParameter("empty Ulam grid".into()));
    }
    let kf = cells as f64;
    // Sparse rows: (target cell, weight).
    let rows: Vec<Vec<(usize, f64)>> = (0..cells)
        .map(|j| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for q in 0..per_cell {
                let th = (j as f64 + (q as f64 + 0.5) / per_cell as f64) / kf;
                let y = m.boundary_map(boundary, th);
                let c = ((y * kf) as usize).min(cells - 1);
                match row.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.1 += 1.0,
                    None => row.push((c, 1.0)),
                }
            }
            row.iter_mut().for_each(|e| e.1 /= per_cell as f64);
            row
        })
        .collect();
    let mut v = vec![1.0 / kf; cells];
    let mut change = f64::INFINITY;
    for it in 1..=ULAM_MAX_ITERATIONS {
        let mut w = vec![0.0; cells];
        for (j, row) in rows.iter().enumerate() {
            for &(c, p) in row {
                w[c] += v[j] * p;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if change <= ULAM_TOLERANCE {
            return Ok((v, it));
        }
    }
    Err(KanError::UlamNotConverged { iterations: ULAM_MAX_ITERATIONS, change })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyMap {
    pub depth: usize,
    pub theta: Vec<f64>,
    pub image: Vec<f64>,
    /// `|pi_n - pi_(n-1)|` per node.
    pub residuals: Vec<f64>,
    /// Circle distance between `g_1(pi(theta))` and `pi(g_0(theta))` per node.
    pub conjugacy_residuals: Vec<f64>,
    /// Largest node residual at each depth `1..=n`.
    pub depth_residuals: Vec<f64>,
    /// Geometric rate fitted to `depth_residuals` above round-off.
    pub rate: Option<f64>,
    pub rate_bound: f64,
}

impl HolonomyMap {
    pub fn strictly_increasing(&self) -> bool {
        self.image.windows(2).all(|w| w[1] > w[0])
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_conjugacy_residual(&self) -> f64 {
        self.conjugacy_residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Holonomy of the center foliation from the bottom circle to the top circle at
/// depth `n`: pull the forward bottom orbit of `theta` back through the inverse branches
/// of the top lift, starting from the identity guess at `3^n theta`.
pub fn holonomy_at(m: &KanMap, theta: f64, n: usize) -> f64 {
    let mut orbit = Vec::with_capacity(n + 1);
    let mut digits = Vec::with_capacity(n);
    let mut x = theta.rem_euclid(1.0);
    orbit.push(x);
    for _ in 0..n {
        let y = 3.0 * x;
        let c = y.floor();
        digits.push(c);
        x = y - c;
        orbit.push(x);
    }
    let mut y = orbit[n];
    for k in (0..n).rev() {
        y = m.boundary_lift_inverse(1, y + digits[k]);
    }
    y
}

pub fn center_holonomy(m: &KanMap, theta: &[f64], depth: usize) -> Result<HolonomyMap, KanError> {
    if depth == 0 {
        return Err(KanError::InvalidParameter("depth must be at least 1".into()));
    }
    let bound = (1.0 + m.a) / m.boundary_expansion() + 0.05;
    // pi at every depth, per node.
    let table: Vec<Vec<f64>> = theta
        .par_iter()
        .map(|&th| (0..=depth).map(|d| holonomy_at(m, th, d)).collect())
        .collect();
    let image: Vec<f64> = table.iter().map(|r| r[depth]).collect();
    let residuals: Vec<f64> = table.iter().map(|r| (r[depth] - r[depth - 1]).abs()).collect();
    let depth_residuals: Vec<f64> = (1..=depth)
        .map(|d| table.iter().map(|r| (r[d] - r[d - 1]).abs()).fold(0.0, f64::max))
        .collect();
    let conjugacy_residuals: Vec<f64> = theta
        .par_iter()
        .zip(&image)
        .map(|(&th, &p)| {
            let lhs = m.boundary_map(1, p);
            let rhs = holonomy_at(m, m.boundary_map(0, th), depth);
            circle_distance(lhs, rhs)
        })
        .collect();

    let usable: Vec<(usize, f64)> = depth_residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 1e-12)
        .map(|(d, r)| (d, *r))
        .collect();
    let rate = match (usable.first(), usable.last()) {
        (Some(&(d0, r0)), Some(&(d1, r1))) if d1 > d0 => Some((r1 / r0).powf(1.0 / (d1 - d0) as f64)),
        _ => None,
    };
    if let Some(r) = rate {
        if r > bound {
            return Err(KanError::NotContracting { ratio: r, bound });
        }
    }
    Ok(HolonomyMap {
        depth,
        theta: theta.to_vec(),
        image,
        residuals,
        conjugacy_residuals,
        depth_residuals,
        rate,
        rate_bound: bound,
    })
}

/// `n` equally spaced nodes `k / n`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub a: f64,
    pub s: f64,
    /// `int log g_1'(pi theta) d m_0`.
    pub transported: f64,
    /// `int log g_1' d m_1`.
    pub physical: f64,
    pub delta: f64,
    /// Jackknife standard error of `delta`.
    pub standard_error: f64,
    /// `delta` in standard errors; infinite when the error is zero and `delta` is not.
    pub z: f64,
    pub significant: bool,
    /// `|d_theta f(p_0) - d_theta f(p_1)|` at `p_0 = (0,0)`, `p_1 = (1/2,1)`.
    pub hypothesis: f64,
    pub derivative_p0: [[f64; 2]; 2],
    pub derivative_p1: [[f64; 2]; 2],
    pub samples: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityConfig {
    pub samples: usize,
    pub blocks: usize,
    pub depth: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SingularityConfig {
    fn default() -> Self {
        Self { samples: 1 << 20, blocks: 64, depth: 30, burn_in: 1000, seed: 0 }
    }
}

/// Jackknife standard error of the mean over contiguous blocks, and the mean.
fn jackknife(block_sums: &[f64], block_sizes: &[usize]) -> (f64, f64) {
    let total: f64 = block_sums.iter().sum();
    let n: usize = block_sizes.iter().sum();
    let mean = total / n as f64;
    let b = block_sums.len() as f64;
    let leave: Vec<f64> = block_sums
        .iter()
        .zip(block_sizes)
        .map(|(s, k)| (total - s) / (n - k) as f64)
        .collect();
    let lbar = leave.iter().sum::<f64>() / b;
    let var = (b - 1.0) / b * leave.iter().map(|l| (l - lbar).powi(2)).sum::<f64>();
    (mean, var.sqrt())
}

/// Compares `log g_1'` integrated against the transported Lebesgue measure and against
/// the top physical measure; a `C^1` holonomy would make them equal.
pub fn singularity_test(m: &KanMap, cfg: &SingularityConfig) -> Result<SingularityReport, KanError> {
    if cfg.blocks < 2 || cfg.samples < cfg.blocks {
        return Err(KanError::InvalidParameter(format!("{} samples in {} blocks", cfg.samples, cfg.blocks)));
    }
    let sizes: Vec<usize> = (0..cfg.blocks)
        .map(|b| cfg.samples / cfg.blocks + usize::from(b < cfg.samples % cfg.blocks))
        .collect();
    let log_d = |th: f64| m.boundary_derivative(1, th).ln();
    // Lebesgue samples pushed through the holonomy; one stream per block.
    let lebesgue: Vec<f64> = (0..cfg.blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(cfg.seed, b as u64);
            (0..sizes[b]).map(|_| log_d(holonomy_at(m, r.gen::<f64>(), cfg.depth))).sum()
        })
        .collect();
    // Top physical measure from one orbit per block.
    let physical: Vec<f64> = (0..cfg.blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(cfg.seed, (cfg.blocks + b) as u64);
            let mut x: f64 = r.gen();
            for _ in 0..cfg.burn_in {
                x = m.boundary_map(1, x);
            }
            (0..sizes[b])
                .map(|_| {
                    x = m.boundary_map(1, x);
                    log_d(x)
                })
                .sum()
        })
        .collect();
    let (transported, se0) = jackknife(&lebesgue, &sizes);
    let (phys, se1) = jackknife(&physical, &sizes);
    let delta = (transported - phys).abs();
    let se = (se0 * se0 + se1 * se1).sqrt();
    let z = if se > 0.0 {
        delta / se
    } else if delta == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let d0 = m.derivative(0.0, 0.0);
    let d1 = m.derivative(0.5, 1.0);
    Ok(SingularityReport {
        a: m.a,
        s: m.s,
        transported,
        physical: phys,
        delta,
        standard_error: se,
        z,
        significant: z > 3.0,
        hypothesis: (d0[0][0] - d1[0][0]).abs(),
        derivative_p0: d0,
        derivative_p1: d1,
        samples: cfg.samples,
        blocks: cfg.blocks,
    })
}

/// Same as `2 pi |s|`; the boundary multipliers at `p_0` and `p_1` are `3` and `3 - 2 pi s`.
pub fn hypothesis_closed_form(s: f64) -> f64 {
    2.0 * PI * s.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameters_validate() {
        for (a, s) in [(1.0 / 32.0, 0.0), (0.25, 0.0), (0.25, 0.1)] {
            let r = kan_validate(&KanMap::new(a, s).unwrap()).unwrap();
            assert!(r.quadrature_error < 1e-12);
        }
    }

    #[test]
    fn zero_amplitude_violates_condition_three() {
        match kan_validate(&KanMap::new(0.0, 0.0).unwrap()) {
            Err(KanError::ConditionViolated { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weak_base_violates_expansion() {
        match kan_validate(&KanMap::new(0.25, 0.4).unwrap()) {
            Err(KanError::ConditionViolated { index, .. }) => assert_eq!(index, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symmetry_of_the_family() {
        let m = KanMap::new(0.25, 0.0).unwrap();
        for (th, t) in [(0.1, 0.3), (0.37, 0.81), (0.9, 0.5)] {
            let (a, b) = m.evaluate(th, t);
            let (c, d) = m.evaluate(th + 0.5, 1.0 - t);
            assert!(circle_distance(a + 0.5, c) < 1e-14);
            assert!((1.0 - b - d).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_points_are_trapped_immediately() {
        let m = KanMap::new(0.25, 0.1).unwrap();
        assert_eq!(classify_point(&m, 0.3, 0.0, 0, 0.02), Basin::Bottom);
        assert_eq!(classify_point(&m, 0.3, 1.0, 0, 0.02), Basin::Top);
    }

    #[test]
    fn holonomy_fixes_the_fixed_points() {
        let m = KanMap::new(0.25, 0.1).unwrap();
        assert_eq!(holonomy_at(&m, 0.0, 25), 0.0);
        assert!((holonomy_at(&m, 0.5, 25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lift_inverse_round_trip() {
        let m = KanMap::new(0.25, 0.1).unwrap();
        for y in [-0.3, 0.0, 0.7, 1.4, 2.9] {
            let x = m.boundary_lift_inverse(1, y);
            assert!((m.boundary_lift(1, x) - y).abs() < 1e-14);
        }
    }

    #[test]
    fn jackknife_of_constant_blocks() {
        let (mean, se) = jackknife(&[2.0, 2.0, 2.0], &[1, 1, 1]);
        assert_eq!(mean, 2.0);
        assert_eq!(se, 0.0);
    }
}
