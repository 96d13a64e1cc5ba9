//! The semiconjugacy `phi` with `phi o f = A o phi`, computed as a truncated geometric
//! series in eigen-coordinates, plus fiber and center-image diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foliation::{trace_leaf, FoliationError, LeafSegment};
use crate::linalg::{self, Vec3};
use crate::models::{Bundle, DAMap, ModelError};
use crate::rng;
use crate::torus::{self, LiftPoint, TorusPoint};

/// Depth ceiling for automatic truncation.
pub const MAX_DEPTH: usize = 400;
/// Default truncation tolerance on the summed tail bounds.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjugacyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Foliation(#[from] FoliationError),
    #[error("leaf window too short: endpoint within {threshold:.3e} of the target ({distance:.3e})")]
    LeafTooShort { distance: f64, threshold: f64 },
    #[error("sampled leaf misses the fiber: closest image at distance {0:.3e}")]
    FiberMissed(f64),
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct Conjugator {
    model: DAMap,
    depth: usize,
    /// Sup of `|p_i|`, the displacement in eigen-coordinates.
    sup_p: [f64; 3],
    tails: [f64; 3],
}

impl Conjugator {
    /// Smallest depth whose summed tail bound is at most `tol`.
    pub fn new(model: DAMap, tol: f64) -> Result<Self, ConjugacyError> {
        if !(tol > 0.0) {
            return Err(ConjugacyError::Invalid(format!("tolerance {tol}")));
        }
        let mut c = Self::with_depth(model, 1)?;
        while c.tail_bound() > tol {
            if c.depth >= MAX_DEPTH {
                return Err(ConjugacyError::Invalid(format!("tolerance {tol} needs depth beyond {MAX_DEPTH}")));
            }
            c.depth += 1;
            c.tails = tails(&c.model, c.sup_p, c.depth);
        }
        Ok(c)
    }

    pub fn with_depth(model: DAMap, depth: usize) -> Result<Self, ConjugacyError> {
        if depth == 0 {
            return Err(ConjugacyError::Invalid("depth must be at least 1".into()));
        }
        // The bump peaks at 1, so |p_i| <= |s| |<d_i, v>| is attained.
        let dual = model.base().splitting().dual;
        let v = model.direction();
        let s = model.amplitude().abs();
        let sup_p = [0, 1, 2].map(|i| s * linalg::dot(dual[i], v).abs());
        let t = tails(&model, sup_p, depth);
        Ok(Self { model, depth, sup_p, tails: t })
    }

    pub fn model(&self) -> &DAMap {
        &self.model
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tail_bounds(&self) -> [f64; 3] {
        self.tails
    }

    /// Sum of the per-direction tail bounds.
    pub fn tail_bound(&self) -> f64 {
        self.tails.iter().sum()
    }

    pub fn displacement_sup(&self) -> [f64; 3] {
        self.sup_p
    }

    /// Analytic bound on `sup |phi - id|` for the untruncated series.
    pub fn sup_bound(&self) -> f64 {
        let l = self.model.base().splitting().eigenvalues;
        self.sup_p[0] / (1.0 - l[0]) + self.sup_p[1] / (l[1] - 1.0) + self.sup_p[2] / (l[2] - 1.0)
    }

    /// Correction `u(p)` in eigen-coordinates.
    pub fn u_coordinates(&self, p: TorusPoint) -> Result<Vec3, ConjugacyError> {
        if self.model.is_linear() {
            return Ok([0.0; 3]);
        }
        let split = self.model.base().splitting();
        let l = split.eigenvalues;
        let mut out = [0.0; 3];

        let mut x = p;
        let mut w = [1.0 / l[1], 1.0 / l[2]];
        for _ in 0..self.depth {
            let c = split.coordinates(self.model.displacement(x.coords()));
            out[1] += w[0] * c[1];
            out[2] += w[1] * c[2];
            w[0] /= l[1];
            w[1] /= l[2];
            x = self.model.evaluate(x);
        }

        if self.sup_p[0] > 0.0 {
            let mut y = p;
            let mut w1 = 1.0;
            for _ in 0..self.depth {
                y = self.model.inverse(y)?;
                out[0] -= w1 * split.coordinates(self.model.displacement(y.coords()))[0];
                w1 *= l[0];
            }
        }
        Ok(out)
    }

    /// Correction `u(p)` as a vector.
    pub fn u(&self, p: TorusPoint) -> Result<Vec3, ConjugacyError> {
        let c = self.u_coordinates(p)?;
        let e = self.model.base().splitting().eigenvectors;
        let mut v = [0.0; 3];
        for i in 0..3 {
            v = linalg::axpy(v, c[i], e[i]);
        }
        Ok(v)
    }

    pub fn phi_lift(&self, q: LiftPoint) -> Result<LiftPoint, ConjugacyError> {
        if self.model.is_linear() {
            return Ok(q);
        }
        Ok(LiftPoint(linalg::add(q.0, self.u(torus::wrap(q))?)))
    }

    pub fn phi(&self, p: TorusPoint) -> Result<TorusPoint, ConjugacyError> {
        if self.model.is_linear() {
            return Ok(p);
        }
        Ok(torus::wrap(self.phi_lift(p.lift())?))
    }

    /// `|phi(f(x)) - A(phi(x))|` on the torus.
    pub fn residual(&self, p: TorusPoint) -> Result<f64, ConjugacyError> {
        let lhs = self.phi(self.model.evaluate(p))?;
        let rhs = self.model.base().apply(self.phi(p)?);
        Ok(torus::torus_distance(lhs, rhs))
    }
}

fn tails(model: &DAMap, sup_p: [f64; 3], n: usize) -> [f64; 3] {
    let l = model.base().splitting().eigenvalues;
    let n = n as i32;
    [
        sup_p[0] * l[0].powi(n) / (1.0 - l[0]),
        sup_p[1] * l[1].powi(-(n + 1)) / (1.0 - 1.0 / l[1]),
        sup_p[2] * l[2].powi(-(n + 1)) / (1.0 - 1.0 / l[2]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub point: Vec3,
    pub residual: f64,
    /// `|phi(x) - x|` on the cover.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub depth: usize,
    pub tail_bounds: [f64; 3],
    pub samples: Vec<ResidualSample>,
    pub max_residual: f64,
    pub max_offset: f64,
    pub sup_bound: f64,
}

impl ResidualReport {
    /// Residual contract: every residual within twice the summed tail bound.
    pub fn within_contract(&self) -> bool {
        self.max_residual <= 2.0 * self.tail_bounds.iter().sum::<f64>()
    }
}

/// Residuals at `n` uniform points drawn from stream `(seed, 0)`.
pub fn residual_sweep(c: &Conjugator, n: usize, seed: u64) -> Result<ResidualReport, ConjugacyError> {
    let mut r = rng::stream(seed, 0);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let p = TorusPoint::new(r.gen(), r.gen(), r.gen());
        let residual = c.residual(p)?;
        let offset = linalg::norm(c.u(p)?);
        samples.push(ResidualSample { point: p.coords(), residual, offset });
    }
    let max_residual = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    let max_offset = samples.iter().map(|s| s.offset).fold(0.0, f64::max);
    Ok(ResidualReport {
        depth: c.depth(),
        tail_bounds: c.tail_bounds(),
        samples,
        max_residual,
        max_offset,
        sup_bound: c.sup_bound(),
    })
}

/// Finds `x` with `phi(x)` close to `z` by the iteration `x <- x + (z - phi(x))`.
pub fn locate_preimage(c: &Conjugator, z: TorusPoint) -> Result<(TorusPoint, f64), ConjugacyError> {
    let mut x = z;
    let mut best = (z, f64::INFINITY);
    for _ in 0..60 {
        let d = torus::min_displacement(c.phi(x)?.coords(), z.coords());
        let e = linalg::norm(d);
        if e < best.1 {
            best = (x, e);
        }
        if e <= 1e-14 {
            break;
        }
        x = torus::wrap(LiftPoint(linalg::add(x.coords(), d)));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberEstimate {
    pub target: Vec3,
    pub delta: f64,
    pub threshold: f64,
    pub diameter: f64,
    /// Closest image distance found on the sampled leaf.
    pub closest: f64,
}

/// Arclength of the longest run of leaf nodes around the closest node whose images lie
/// within `delta + tail` of `z`.
pub fn fiber_diameter_on_leaf(
    c: &Conjugator,
    z: TorusPoint,
    leaf: &LeafSegment,
    delta: f64,
) -> Result<FiberEstimate, ConjugacyError> {
    if !(delta >= 0.0) || leaf.is_empty() {
        return Err(ConjugacyError::Invalid(format!("delta {delta}, {} leaf nodes", leaf.len())));
    }
    let threshold = delta + c.tail_bound();
    let dist = leaf
        .points
        .iter()
        .map(|q| Ok(torus::torus_distance(c.phi(torus::wrap(*q))?, z)))
        .collect::<Result<Vec<f64>, ConjugacyError>>()?;
    let (k, closest) = dist
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, d)| if *d < b.1 { (i, *d) } else { b });
    if closest > threshold {
        return Err(ConjugacyError::FiberMissed(closest));
    }
    let last = dist.len() - 1;
    for end in [0, last] {
        if dist[end] <= threshold {
            return Err(ConjugacyError::LeafTooShort { distance: dist[end], threshold });
        }
    }
    let mut lo = k;
    while lo > 0 && dist[lo - 1] <= threshold {
        lo -= 1;
    }
    let mut hi = k;
    while hi < last && dist[hi + 1] <= threshold {
        hi += 1;
    }
    Ok(FiberEstimate {
        target: z.coords(),
        delta,
        threshold,
        diameter: leaf.arclength[hi] - leaf.arclength[lo],
        closest,
    })
}

/// Locates a preimage of `z`, traces its center leaf and measures the fiber.
pub fn fiber_diameter(
    c: &Conjugator,
    z: TorusPoint,
    delta: f64,
    half_length: f64,
    step: f64,
) -> Result<FiberEstimate, ConjugacyError> {
    let (x, _) = locate_preimage(c, z)?;
    let leaf = trace_leaf(c.model(), x.lift(), Bundle::Center, half_length, step)?;
    fiber_diameter_on_leaf(c, z, &leaf, delta)
}

/// Max distance of the `phi`-image of a leaf polyline from its best line parallel to
/// the center eigendirection (centroid fit in the orthogonal plane).
pub fn center_image_check(c: &Conjugator, points: &[LiftPoint]) -> Result<f64, ConjugacyError> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let e = c.model().base().splitting().center();
    let proj = points
        .iter()
        .map(|q| {
            let y = c.phi_lift(*q)?.0;
            Ok(linalg::axpy(y, -linalg::dot(y, e), e))
        })
        .collect::<Result<Vec<Vec3>, ConjugacyError>>()?;
    let n = proj.len() as f64;
    let mean = proj.iter().fold([0.0; 3], |a, p| linalg::axpy(a, 1.0 / n, *p));
    Ok(proj.iter().map(|p| linalg::norm(linalg::sub(*p, mean))).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::IntegerAutomorphism;

    #[test]
    fn linear_model_gives_identity() {
        let c = Conjugator::new(DAMap::linear(IntegerAutomorphism::reference()), 1e-8).unwrap();
        let p = TorusPoint::new(0.3, 0.7, 0.1);
        assert_eq!(c.phi(p).unwrap(), p);
        assert_eq!(c.residual(p).unwrap(), 0.0);
        assert_eq!(c.tail_bound(), 0.0);
    }

    #[test]
    fn reference_depth_from_tail() {
        let c = Conjugator::new(DAMap::reference(), 1e-8).unwrap();
        assert!(c.tail_bound() <= 1e-8);
        let shallower = Conjugator::with_depth(DAMap::reference(), c.depth() - 1).unwrap();
        assert!(shallower.tail_bound() > 1e-8);
    }

    #[test]
    fn residual_within_contract() {
        let c = Conjugator::new(DAMap::reference(), 1e-8).unwrap();
        let rep = residual_sweep(&c, 200, 5).unwrap();
        assert!(rep.within_contract(), "{}", rep.max_residual);
        assert!(rep.max_offset <= rep.sup_bound + c.tail_bound());
    }

    #[test]
    fn unstable_leaf_is_not_mapped_to_a_center_line() {
        let c = Conjugator::new(DAMap::reference(), 1e-8).unwrap();
        let p = LiftPoint::new(0.45, 0.5, 0.52);
        let uu = trace_leaf(c.model(), p, Bundle::Unstable, 0.5, 0.05).unwrap();
        assert!(center_image_check(&c, &uu.points).unwrap() > 0.1);
        let cl = trace_leaf(c.model(), p, Bundle::Center, 0.5, 0.05).unwrap();
        assert!(center_image_check(&c, &cl.points).unwrap() < 1e-6);
    }
}
