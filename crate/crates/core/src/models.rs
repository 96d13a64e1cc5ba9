//! Derived-from-Anosov perturbations of a linear automorphism, with exact
//! derivatives, Newton inversion, cone verification and invariant-bundle frames.
//!
//! The perturbation is the closed-form bump `x -> A x + s rho(|x - q| / r0) v` with
//! `rho(t) = (1 - t^2)^3` on `|t| <= 1`. Setting `s = 0` gives the linear model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::torus::{self, IntegerAutomorphism, LiftPoint, TorusError, TorusPoint};

/// `sup_u 6 u (1 - u^2)^2` over `u in [0,1]`, attained at `u = 1/sqrt 5`.
const BUMP_GRADIENT_FACTOR: f64 = 96.0 / (25.0 * 2.236_067_977_499_79);

pub const DEFAULT_BUNDLE_ITERATIONS: usize = 60;
pub const DEFAULT_BUNDLE_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_FRAME_DETERMINANT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Torus(#[from] TorusError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("perturbation too strong for a diffeomorphism: s*sup|grad rho|*|A^-1 v| = {0:.4} >= 1")]
    NotDiffeomorphism(f64),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("bundle frame is degenerate (determinant {0:.3e})")]
    DegenerateFrame(f64),
}

/// Parameters of a DA map as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DAParams {
    pub matrix: Vec<i64>,
    pub s: f64,
    pub center: [f64; 3],
    pub radius: f64,
    pub direction: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct DAMap {
    base: IntegerAutomorphism,
    a: Mat3,
    s: f64,
    center: TorusPoint,
    radius: f64,
    direction: Vec3,
    max_newton: usize,
}

impl DAMap {
    pub fn new(
        base: IntegerAutomorphism,
        s: f64,
        center: TorusPoint,
        radius: f64,
        direction: Vec3,
    ) -> Result<Self, ModelError> {
        if !s.is_finite() {
            return Err(ModelError::InvalidParameter(format!("s = {s}")));
        }
        if !(radius > 0.0 && radius < 0.5) {
            return Err(ModelError::InvalidParameter(format!("radius {radius} not in (0, 0.5)")));
        }
        let n = linalg::norm(direction);
        if !(n.is_finite() && n > 0.0) {
            return Err(ModelError::InvalidParameter("direction must be a non-zero vector".into()));
        }
        let direction = linalg::scale(direction, 1.0 / n);
        let map = Self {
            a: base.matrix_f64(),
            base,
            s,
            center,
            radius,
            direction,
            max_newton: 60,
        };
        let bound = map.diffeomorphism_bound();
        if bound >= 1.0 {
            return Err(ModelError::NotDiffeomorphism(bound));
        }
        Ok(map)
    }

    /// The unperturbed automorphism viewed as a map model.
    pub fn linear(base: IntegerAutomorphism) -> Self {
        let e2 = base.splitting().center();
        Self::new(base, 0.0, TorusPoint::new(0.5, 0.5, 0.5), 0.2, e2).expect("s = 0 is always valid")
    }

    /// Reference DA configuration: `A_ref`, `s = 0.05`, `r0 = 0.2`, `v = e2`, bump at the cube center.
    pub fn reference() -> Self {
        Self::reference_with_amplitude(0.05)
    }

    pub fn reference_with_amplitude(s: f64) -> Self {
        let base = IntegerAutomorphism::reference();
        let e2 = base.splitting().center();
        Self::new(base, s, TorusPoint::new(0.5, 0.5, 0.5), 0.2, e2).expect("reference config is valid")
    }

    pub fn from_params(p: &DAParams) -> Result<Self, ModelError> {
        let base = IntegerAutomorphism::from_row_major(&p.matrix)?;
        Self::new(
            base,
            p.s,
            TorusPoint::new(p.center[0], p.center[1], p.center[2]),
            p.radius,
            p.direction,
        )
    }

    pub fn params(&self) -> DAParams {
        DAParams {
            matrix: self.base.row_major().to_vec(),
            s: self.s,
            center: self.center.coords(),
            radius: self.radius,
            direction: self.direction,
        }
    }

    pub fn base(&self) -> &IntegerAutomorphism {
        &self.base
    }
    pub fn amplitude(&self) -> f64 {
        self.s
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn bump_center(&self) -> TorusPoint {
        self.center
    }
    pub fn direction(&self) -> Vec3 {
        self.direction
    }
    pub fn is_linear(&self) -> bool {
        self.s == 0.0
    }

    /// `s * sup|grad rho| * |A^-1 v|`; the lift is a diffeomorphism of R^3 when this is below 1.
    pub fn diffeomorphism_bound(&self) -> f64 {
        let w = self.base.apply_inverse_vec(self.direction);
        self.s.abs() * BUMP_GRADIENT_FACTOR / self.radius * linalg::norm(w)
    }

    /// Bump value and gradient at `x` (any lift).
    #[inline]
    pub fn bump(&self, x: Vec3) -> (f64, Vec3) {
        let d = torus::min_displacement(self.center.coords(), x);
        let r2 = linalg::dot(d, d) / (self.radius * self.radius);
        if r2 >= 1.0 {
            return (0.0, [0.0; 3]);
        }
        let one = 1.0 - r2;
        let rho = one * one * one;
        let g = -6.0 * one * one / (self.radius * self.radius);
        (rho, linalg::scale(d, g))
    }

    /// Periodic displacement `lift(f) - A`.
    #[inline]
    pub fn displacement(&self, x: Vec3) -> Vec3 {
        if self.s == 0.0 {
            return [0.0; 3];
        }
        let (rho, _) = self.bump(x);
        linalg::scale(self.direction, self.s * rho)
    }

    #[inline]
    pub fn evaluate_lift(&self, q: LiftPoint) -> LiftPoint {
        let ax = self.base.apply_vec(q.0);
        if self.s == 0.0 {
            return LiftPoint(ax);
        }
        LiftPoint(linalg::add(ax, self.displacement(q.0)))
    }

    #[inline]
    pub fn evaluate(&self, p: TorusPoint) -> TorusPoint {
        if self.s == 0.0 {
            return self.base.apply(p);
        }
        torus::wrap(self.evaluate_lift(p.lift()))
    }

    #[inline]
    pub fn derivative(&self, x: Vec3) -> Mat3 {
        if self.s == 0.0 {
            return self.a;
        }
        let (_, g) = self.bump(x);
        let mut m = self.a;
        for (i, row) in m.iter_mut().enumerate() {
            let k = self.s * self.direction[i];
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += k * g[j];
            }
        }
        m
    }

    pub fn jacobian(&self, x: Vec3) -> f64 {
        linalg::det(&self.derivative(x))
    }

    /// Newton inversion on the cover, seeded at `A^-1 y`.
    pub fn inverse_lift(&self, y: LiftPoint) -> Result<LiftPoint, ModelError> {
        let mut x = self.base.apply_inverse_vec(y.0);
        if self.s == 0.0 {
            return Ok(LiftPoint(x));
        }
        let scale = 1.0 + y.0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for _ in 0..self.max_newton {
            let r = linalg::sub(self.evaluate_lift(LiftPoint(x)).0, y.0);
            let rn = r.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if rn <= 4.0 * f64::EPSILON * scale {
                return Ok(LiftPoint(x));
            }
            let jinv = linalg::inverse(&self.derivative(x))
                .ok_or_else(|| ModelError::NoConvergence("singular derivative in inverse".into()))?;
            let step = linalg::mat_vec(&jinv, r);
            x = linalg::sub(x, step);
            if step.iter().fold(0.0f64, |m, c| m.max(c.abs())) <= 2.0 * f64::EPSILON * scale {
                return Ok(LiftPoint(x));
            }
        }
        let r = linalg::sub(self.evaluate_lift(LiftPoint(x)).0, y.0);
        if linalg::norm(r) <= 1e-12 * scale {
            Ok(LiftPoint(x))
        } else {
            Err(ModelError::NoConvergence(format!(
                "inverse Newton residual {:.3e} after {} iterations",
                linalg::norm(r),
                self.max_newton
            )))
        }
    }

    pub fn inverse(&self, p: TorusPoint) -> Result<TorusPoint, ModelError> {
        if self.s == 0.0 {
            return Ok(self.base.apply_inverse(p));
        }
        Ok(torus::wrap(self.inverse_lift(p.lift())?))
    }

    /// Statistics of `log|det Df|` on the `n^3` cell-centred grid.
    pub fn jacobian_stats(&self, n: usize) -> JacobianStats {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for p in grid_points(n) {
            let l = self.jacobian(p.coords()).abs().ln();
            min = min.min(l);
            max = max.max(l);
            sum += l;
        }
        JacobianStats {
            min_log_jacobian: min,
            max_log_jacobian: max,
            mean_log_jacobian: sum / (n * n * n) as f64,
        }
    }

    /// Bundle frame at `p`; see [`bundle_at`].
    pub fn bundle_at(&self, p: TorusPoint, n_iter: usize) -> Result<BundleFrame, ModelError> {
        bundle_at(self, p, n_iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub min_log_jacobian: f64,
    pub max_log_jacobian: f64,
    pub mean_log_jacobian: f64,
}

/// Cell-centred `n^3` grid on the torus.
pub fn grid_points(n: usize) -> impl Iterator<Item = TorusPoint> {
    let h = 1.0 / n as f64;
    (0..n * n * n).map(move |k| {
        let (i, j, l) = (k / (n * n), (k / n) % n, k % n);
        TorusPoint::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (l as f64 + 0.5) * h)
    })
}

/// Estimated invariant splitting at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleFrame {
    pub point: TorusPoint,
    pub ss: Vec3,
    pub c: Vec3,
    pub uu: Vec3,
    /// Convergence residuals (radians) for ss, c, uu.
    pub residuals: [f64; 3],
    pub determinant: f64,
}

impl BundleFrame {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    pub fn direction(&self, bundle: Bundle) -> Vec3 {
        match bundle {
            Bundle::Stable => self.ss,
            Bundle::Center => self.c,
            Bundle::Unstable => self.uu,
        }
    }
}

/// One of the three invariant line bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bundle {
    #[serde(rename = "ss")]
    Stable,
    #[serde(rename = "c")]
    Center,
    #[serde(rename = "uu")]
    Unstable,
}

impl Bundle {
    pub fn index(self) -> usize {
        match self {
            Bundle::Stable => 0,
            Bundle::Center => 1,
            Bundle::Unstable => 2,
        }
    }
}

impl std::str::FromStr for Bundle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ss" => Ok(Bundle::Stable),
            "c" => Ok(Bundle::Center),
            "uu" => Ok(Bundle::Unstable),
            other => Err(format!("unknown bundle '{other}' (expected ss, c or uu)")),
        }
    }
}

fn orient(v: Vec3, reference: Vec3) -> Vec3 {
    if linalg::dot(v, reference) < 0.0 {
        linalg::scale(v, -1.0)
    } else {
        v
    }
}

/// Power-iteration estimate of the splitting at `p`.
///
/// `E^uu` and the center-unstable plane are pushed forward along the backward orbit,
/// `E^ss` and the center-stable plane are pulled back along the forward orbit, and
/// `E^c` is the intersection of the two planes. Each quantity is iterated from two
/// different seeds; the angle between the results is its residual.
pub fn bundle_at(f: &DAMap, p: TorusPoint, n_iter: usize) -> Result<BundleFrame, ModelError> {
    bundle_with(f, p, n_iter, DEFAULT_BUNDLE_TOLERANCE, DEFAULT_FRAME_DETERMINANT)
}

pub fn bundle_with(
    f: &DAMap,
    p: TorusPoint,
    n_iter: usize,
    tolerance: f64,
    min_determinant: f64,
) -> Result<BundleFrame, ModelError> {
    let split = f.base().splitting();
    let [e1, e2, e3] = split.eigenvectors;
    if f.is_linear() {
        return Ok(BundleFrame {
            point: p,
            ss: e1,
            c: e2,
            uu: e3,
            residuals: [0.0; 3],
            determinant: linalg::det(&linalg::from_columns([e1, e2, e3])),
        });
    }

    // Backward orbit p_{-1}, ..., p_{-n}; derivatives along it, applied oldest first.
    let mut back = Vec::with_capacity(n_iter);
    let mut q = p;
    for _ in 0..n_iter {
        q = f.inverse(q)?;
        back.push(f.derivative(q.coords()));
    }
    let mut fwd = Vec::with_capacity(n_iter);
    let mut q = p;
    for _ in 0..n_iter {
        fwd.push(f.derivative(q.coords()));
        q = f.evaluate(q);
    }

    let n_cu0 = linalg::cross(e2, e3);
    let n_cs0 = linalg::cross(e1, e2);
    let mut uu = [e3, linalg::normalize(linalg::add(e3, linalg::add(e1, e2)))];
    let mut ncu = [n_cu0, linalg::normalize(linalg::axpy(n_cu0, 0.5, linalg::cross(e3, e1)))];
    for m in back.iter().rev() {
        let minv = linalg::inverse(m).ok_or_else(|| ModelError::NoConvergence("singular Df".into()))?;
        for k in 0..2 {
            uu[k] = linalg::normalize(linalg::mat_vec(m, uu[k]));
            ncu[k] = linalg::normalize(linalg::mat_t_vec(&minv, ncu[k]));
        }
    }
    let mut ss = [e1, linalg::normalize(linalg::add(e1, linalg::add(e2, e3)))];
    let mut ncs = [n_cs0, linalg::normalize(linalg::axpy(n_cs0, 0.5, linalg::cross(e3, e1)))];
    for m in fwd.iter().rev() {
        let minv = linalg::inverse(m).ok_or_else(|| ModelError::NoConvergence("singular Df".into()))?;
        for k in 0..2 {
            ss[k] = linalg::normalize(linalg::mat_vec(&minv, ss[k]));
            ncs[k] = linalg::normalize(linalg::mat_t_vec(m, ncs[k]));
        }
    }
    let c0 = linalg::normalize(linalg::cross(ncu[0], ncs[0]));
    let c1 = linalg::normalize(linalg::cross(ncu[1], ncs[1]));
    let residuals = [
        linalg::line_angle(ss[0], ss[1]),
        linalg::line_angle(c0, c1),
        linalg::line_angle(uu[0], uu[1]),
    ];
    let frame = BundleFrame {
        point: p,
        ss: orient(ss[0], e1),
        c: orient(c0, e2),
        uu: orient(uu[0], e3),
        residuals,
        determinant: linalg::det(&linalg::from_columns([ss[0], c0, uu[0]])),
    };
    if frame.max_residual() > tolerance || !frame.max_residual().is_finite() {
        return Err(ModelError::NoConvergence(format!(
            "bundle residual {:.3e} > {:.1e} after {} iterations",
            frame.max_residual(),
            tolerance,
            n_iter
        )));
    }
    if frame.determinant.abs() < min_determinant {
        return Err(ModelError::DegenerateFrame(frame.determinant));
    }
    Ok(frame)
}

/// Apertures (radians) of the stable, center and unstable cones, centred on the
/// eigendirections of the linear part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeField {
    pub apertures: [f64; 3],
}

impl ConeField {
    pub fn uniform(aperture: f64) -> Self {
        Self { apertures: [aperture; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeFailure {
    pub point: [f64; 3],
    pub check: String,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: usize,
    pub points_checked: usize,
    /// Worst cone margins (radians) for: ss backward, cs backward, cu forward, uu forward.
    pub worst_margins: [f64; 4],
    /// Worst `|Df E^ss| / |Df E^c|` and `|Df E^c| / |Df E^uu|`.
    pub worst_ratios: [f64; 2],
    pub ratio_constant: f64,
    pub failure_count: usize,
    /// First failures, capped.
    pub failures: Vec<ConeFailure>,
    pub errors: Vec<String>,
    pub jacobian: JacobianStats,
}

impl VerificationReport {
    pub fn cones_invariant(&self) -> bool {
        self.errors.is_empty() && self.worst_margins.iter().all(|m| *m > 0.0)
    }

    pub fn dominated(&self) -> bool {
        self.errors.is_empty() && self.worst_ratios.iter().all(|r| *r <= self.ratio_constant)
    }

    pub fn passed(&self) -> bool {
        self.cones_invariant() && self.dominated() && self.failure_count == 0
    }
}

/// Unit vectors on the boundary of the cone of half-angle `alpha` around `axis`.
fn line_cone_boundary(axis: Vec3, alpha: f64, k: usize) -> Vec<Vec3> {
    let axis = linalg::normalize(axis);
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = linalg::normalize(linalg::cross(axis, helper));
    let w = linalg::cross(axis, u);
    (0..k)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / k as f64;
            let radial = linalg::add(linalg::scale(u, t.cos()), linalg::scale(w, t.sin()));
            linalg::add(linalg::scale(axis, alpha.cos()), linalg::scale(radial, alpha.sin()))
        })
        .collect()
}

/// Unit vectors at angle `alpha` from the plane spanned by `a` and `b`.
fn plane_cone_boundary(a: Vec3, b: Vec3, alpha: f64, k: usize) -> (Vec3, Vec<Vec3>) {
    let n = linalg::normalize(linalg::cross(a, b));
    let u = linalg::normalize(a);
    let w = linalg::normalize(linalg::cross(n, u));
    let out = (0..k)
        .flat_map(|i| {
            let t = std::f64::consts::TAU * i as f64 / k as f64;
            let inplane = linalg::add(linalg::scale(u, t.cos()), linalg::scale(w, t.sin()));
            [1.0, -1.0].map(|sg| {
                linalg::add(linalg::scale(inplane, alpha.cos()), linalg::scale(n, sg * alpha.sin()))
            })
        })
        .collect();
    (n, out)
}

fn angle_to_plane(normal: Vec3, v: Vec3) -> f64 {
    (linalg::dot(normal, v).abs() / linalg::norm(v)).min(1.0).asin()
}

/// Grid check of cone invariance and domination on the `n^3` grid.
///
/// The strong cones are line cones around `e1`, `e3`; the center is checked through
/// the center-unstable cone (forward) and center-stable cone (backward) of the same
/// aperture. Domination ratios use the bundle frames at each grid point.
pub fn verify_cones(f: &DAMap, cones: &ConeField, n: usize, ratio_constant: f64) -> VerificationReport {
    const BOUNDARY_SAMPLES: usize = 24;
    const MAX_LISTED: usize = 100;
    let split = f.base().splitting();
    let [e1, e2, e3] = split.eigenvectors;
    let [a_s, a_c, a_u] = cones.apertures;
    let mut report = VerificationReport {
        grid: n,
        points_checked: 0,
        worst_margins: [f64::INFINITY; 4],
        worst_ratios: [0.0; 2],
        ratio_constant,
        failure_count: 0,
        failures: Vec::new(),
        errors: Vec::new(),
        jacobian: f.jacobian_stats(n.clamp(1, 16)),
    };
    for (name, a) in [("ss", a_s), ("c", a_c), ("uu", a_u)] {
        if !(a > 0.0 && a < std::f64::consts::FRAC_PI_4) {
            report.errors.push(format!("degenerate {name} cone aperture {a}: must lie in (0, pi/4)"));
        }
    }
    for (i, j, ai, aj) in [(0, 1, a_s, a_c), (0, 2, a_s, a_u), (1, 2, a_c, a_u)] {
        if linalg::line_angle(split.eigenvectors[i], split.eigenvectors[j]) <= ai + aj {
            report.errors.push(format!("cones around e{} and e{} overlap", i + 1, j + 1));
        }
    }
    if !report.errors.is_empty() {
        report.worst_margins = [f64::NAN; 4];
        report.worst_ratios = [f64::NAN; 2];
        return report;
    }
    let ss_cone = line_cone_boundary(e1, a_s, BOUNDARY_SAMPLES);
    let uu_cone = line_cone_boundary(e3, a_u, BOUNDARY_SAMPLES);
    let (n_cs, cs_cone) = plane_cone_boundary(e1, e2, a_c, BOUNDARY_SAMPLES);
    let (n_cu, cu_cone) = plane_cone_boundary(e2, e3, a_c, BOUNDARY_SAMPLES);

    for p in grid_points(n) {
        report.points_checked += 1;
        let x = p.coords();
        let m = f.derivative(x);
        let Some(minv) = linalg::inverse(&m) else {
            report.errors.push(format!("singular derivative at {x:?}"));
            continue;
        };
        let margins = [
            a_s - ss_cone.iter().map(|v| linalg::line_angle(linalg::mat_vec(&minv, *v), e1)).fold(0.0, f64::max),
            a_c - cs_cone.iter().map(|v| angle_to_plane(n_cs, linalg::mat_vec(&minv, *v))).fold(0.0, f64::max),
            a_c - cu_cone.iter().map(|v| angle_to_plane(n_cu, linalg::mat_vec(&m, *v))).fold(0.0, f64::max),
            a_u - uu_cone.iter().map(|v| linalg::line_angle(linalg::mat_vec(&m, *v), e3)).fold(0.0, f64::max),
        ];
        for (k, name) in ["ss", "cs", "cu", "uu"].iter().enumerate() {
            report.worst_margins[k] = report.worst_margins[k].min(margins[k]);
            if margins[k] <= 0.0 {
                report.failure_count += 1;
                if report.failures.len() < MAX_LISTED {
                    report.failures.push(ConeFailure { point: x, check: format!("{name} cone"), margin: margins[k] });
                }
            }
        }
        match bundle_at(f, p, DEFAULT_BUNDLE_ITERATIONS) {
            Ok(frame) => {
                let s = linalg::norm(linalg::mat_vec(&m, frame.ss));
                let c = linalg::norm(linalg::mat_vec(&m, frame.c));
                let u = linalg::norm(linalg::mat_vec(&m, frame.uu));
                let ratios = [s / c, c / u];
                for k in 0..2 {
                    report.worst_ratios[k] = report.worst_ratios[k].max(ratios[k]);
                    if ratios[k] > ratio_constant {
                        report.failure_count += 1;
                        if report.failures.len() < MAX_LISTED {
                            report.failures.push(ConeFailure {
                                point: x,
                                check: if k == 0 { "ss/c ratio".into() } else { "c/uu ratio".into() },
                                margin: ratio_constant - ratios[k],
                            });
                        }
                    }
                }
            }
            Err(e) => report.errors.push(format!("bundle at {x:?}: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_matches_automorphism() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let p = TorusPoint::new(0.13, 0.71, 0.42);
        assert_eq!(f.evaluate(p), f.base().apply(p));
        assert_eq!(f.derivative(p.coords()), f.base().matrix_f64());
        assert_eq!(f.inverse(p).unwrap(), f.base().apply_inverse(p));
    }

    #[test]
    fn derivative_is_linear_outside_bump() {
        let f = DAMap::reference();
        let p = TorusPoint::new(0.5, 0.5, 0.5 + 0.21);
        assert_eq!(f.derivative(p.coords()), f.base().matrix_f64());
        let far = TorusPoint::new(0.0, 0.1, 0.9);
        assert_eq!(f.derivative(far.coords()), f.base().matrix_f64());
    }

    #[test]
    fn violent_bump_is_rejected() {
        let base = IntegerAutomorphism::reference();
        let e2 = base.splitting().center();
        let err = DAMap::new(base, 1.0, TorusPoint::new(0.5, 0.5, 0.5), 0.2, e2).unwrap_err();
        assert!(matches!(err, ModelError::NotDiffeomorphism(b) if b > 1.0));
    }

    #[test]
    fn bad_radius_rejected() {
        let base = IntegerAutomorphism::reference();
        let r = DAMap::new(base, 0.01, TorusPoint::new(0.5, 0.5, 0.5), 0.5, [1.0, 0.0, 0.0]);
        assert!(matches!(r, Err(ModelError::InvalidParameter(_))));
    }

    #[test]
    fn zero_aperture_is_reported() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let rep = verify_cones(&f, &ConeField { apertures: [0.3, 0.0, 0.3] }, 4, 0.5);
        assert!(!rep.passed());
        assert!(rep.errors.iter().any(|e| e.contains("degenerate c cone")));
    }

    #[test]
    fn linear_frame_is_eigenbasis() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let fr = f.bundle_at(TorusPoint::new(0.3, 0.3, 0.3), 50).unwrap();
        let e = f.base().splitting().eigenvectors;
        for (a, b) in [(fr.ss, e[0]), (fr.c, e[1]), (fr.uu, e[2])] {
            assert!(linalg::norm(linalg::sub(a, b)) < 1e-10);
        }
    }
}
