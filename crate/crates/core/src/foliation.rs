//! Leaf geometry: integration of center and strong-unstable leaves, foliation boxes
//! with plaque charts, and the quasi-isometry / growth-rate diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Vec3};
use crate::models::{bundle_at, Bundle, DAMap, ModelError, DEFAULT_BUNDLE_ITERATIONS};
use crate::rng;
use crate::torus::{self, LiftPoint, TorusPoint};

/// Largest allowed turn (radians) of the field across one integration step.
pub const MAX_STEP_TURN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoliationError {
    #[error("bundle did not converge mid-trace: {0}")]
    BundleNoConvergence(#[from] ModelError),
    #[error("step rejected: field turns {angle:.3} rad over one step near {at:?}")]
    StepRejected { angle: f64, at: Vec3 },
    #[error("plaques collide: distance {distance:.3e} below {threshold:.3e}")]
    PlaqueCollision { distance: f64, threshold: f64 },
    #[error("polyline refinement exceeded the budget of {0} points")]
    RefinementExplosion(usize),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Unit direction field of one invariant bundle.
#[derive(Debug, Clone, Copy)]
pub struct BundleField<'a> {
    pub model: &'a DAMap,
    pub bundle: Bundle,
    pub iterations: usize,
    fixed: Option<Vec3>,
}

/// Whether the leaves of `bundle` are the straight lines of the matching eigendirection:
/// true for linear maps, and for DA maps pushing along that eigendirection.
pub fn straight_leaves(model: &DAMap, bundle: Bundle) -> bool {
    if model.is_linear() {
        return true;
    }
    let c = model.base().splitting().coordinates(model.direction());
    let i = bundle.index();
    (0..3).all(|j| j == i || c[j].abs() <= 1e-12 * c[i].abs())
}

/// Whether the center-unstable leaves are the planes spanned by the expanding
/// eigendirections.
pub fn flat_center_unstable(model: &DAMap) -> bool {
    model.is_linear() || {
        let c = model.base().splitting().coordinates(model.direction());
        c[0].abs() <= 1e-12 * (c[1].abs() + c[2].abs())
    }
}

impl<'a> BundleField<'a> {
    pub fn new(model: &'a DAMap, bundle: Bundle) -> Self {
        let fixed = straight_leaves(model, bundle)
            .then(|| model.base().splitting().eigenvectors[bundle.index()]);
        Self { model, bundle, iterations: DEFAULT_BUNDLE_ITERATIONS, fixed }
    }

    #[inline]
    pub fn direction(&self, x: Vec3) -> Result<Vec3, ModelError> {
        if let Some(d) = self.fixed {
            return Ok(d);
        }
        Ok(bundle_at(self.model, torus::wrap(LiftPoint(x)), self.iterations)?.direction(self.bundle))
    }

    fn oriented(&self, x: Vec3, reference: Vec3) -> Result<Vec3, ModelError> {
        let d = self.direction(x)?;
        Ok(if linalg::dot(d, reference) < 0.0 { linalg::scale(d, -1.0) } else { d })
    }

    /// One RK4 step of arclength `h` along the field, orientation matched to `tangent`.
    /// Returns the new point and the tangent there.
    pub fn rk4_step(&self, x: Vec3, tangent: Vec3, h: f64) -> Result<(Vec3, Vec3), FoliationError> {
        let k1 = self.oriented(x, tangent)?;
        let k2 = self.oriented(linalg::axpy(x, 0.5 * h, k1), k1)?;
        let k3 = self.oriented(linalg::axpy(x, 0.5 * h, k2), k2)?;
        let k4 = self.oriented(linalg::axpy(x, h, k3), k3)?;
        let incr = linalg::add(linalg::add(k1, k4), linalg::scale(linalg::add(k2, k3), 2.0));
        let next = linalg::axpy(x, h / 6.0, incr);
        let t_next = self.oriented(next, k4)?;
        let turn = linalg::line_angle(k1, t_next);
        if turn > MAX_STEP_TURN {
            return Err(FoliationError::StepRejected { angle: turn, at: x });
        }
        Ok((next, t_next))
    }

    /// Integrates arclength `len` (may be negative) starting at `x`, steps at most `h`.
    pub fn flow(&self, x: Vec3, len: f64, h: f64) -> Result<Vec3, FoliationError> {
        let reference = self.model.base().splitting().eigenvectors[self.bundle.index()];
        let sign = if len < 0.0 { -1.0 } else { 1.0 };
        let mut tangent = linalg::scale(self.oriented(x, reference)?, sign);
        let steps = (len.abs() / h).ceil().max(1.0) as usize;
        let hs = len.abs() / steps as f64;
        let mut p = x;
        if hs == 0.0 {
            return Ok(p);
        }
        for _ in 0..steps {
            let (n, t) = self.rk4_step(p, tangent, hs)?;
            p = n;
            tangent = t;
        }
        Ok(p)
    }
}

/// Polyline approximation of a leaf segment, in lift coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSegment {
    pub points: Vec<LiftPoint>,
    pub bundle: Bundle,
    /// Signed arclength of each point, measured from the base point.
    pub arclength: Vec<f64>,
    /// Index of the base point in `points`.
    pub base_index: usize,
}

impl LeafSegment {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.arclength.last().unwrap_or(&0.0) - self.arclength.first().unwrap_or(&0.0)
    }

    /// Sum of chord lengths.
    pub fn chord_length(&self) -> f64 {
        polyline_length(&self.points)
    }

    pub fn base(&self) -> LiftPoint {
        self.points[self.base_index]
    }

    /// Straight segment `p + t dir`, `|t| <= half_length`, sampled at `step`.
    pub fn straight(p: LiftPoint, dir: Vec3, bundle: Bundle, half_length: f64, step: f64) -> Self {
        let k = (half_length / step).ceil() as usize;
        let ts: Vec<f64> = (0..=2 * k).map(|i| -half_length + half_length * i as f64 / k as f64).collect();
        LeafSegment {
            points: ts.iter().map(|t| LiftPoint(linalg::axpy(p.0, *t, dir))).collect(),
            bundle,
            arclength: ts,
            base_index: k,
        }
    }
}

pub fn polyline_length(points: &[LiftPoint]) -> f64 {
    points.windows(2).map(|w| linalg::norm(linalg::sub(w[1].0, w[0].0))).sum()
}

/// Traces the leaf of `bundle` through `p` to arclength `half_length` on both sides.
pub fn trace_leaf(
    model: &DAMap,
    p: LiftPoint,
    bundle: Bundle,
    half_length: f64,
    step: f64,
) -> Result<LeafSegment, FoliationError> {
    if !(half_length > 0.0 && step > 0.0 && step.is_finite()) {
        return Err(FoliationError::Invalid(format!("half_length {half_length}, step {step}")));
    }
    let field = BundleField::new(model, bundle);
    let reference = model.base().splitting().eigenvectors[bundle.index()];
    let start_dir = field.oriented(p.0, reference)?;
    let steps = (half_length / step).ceil() as usize;
    let hs = half_length / steps as f64;
    let mut sides: [Vec<(Vec3, f64)>; 2] = [Vec::with_capacity(steps), Vec::with_capacity(steps)];
    for (side, sign) in [1.0f64, -1.0].into_iter().enumerate() {
        let mut x = p.0;
        let mut tangent = linalg::scale(start_dir, sign);
        for k in 1..=steps {
            let (n, t) = field.rk4_step(x, tangent, hs)?;
            x = n;
            tangent = t;
            sides[side].push((x, sign * hs * k as f64));
        }
    }
    let mut points = Vec::with_capacity(2 * steps + 1);
    let mut arclength = Vec::with_capacity(2 * steps + 1);
    for (x, s) in sides[1].iter().rev() {
        points.push(LiftPoint(*x));
        arclength.push(*s);
    }
    points.push(p);
    arclength.push(0.0);
    for (x, s) in &sides[0] {
        points.push(LiftPoint(*x));
        arclength.push(*s);
    }
    Ok(LeafSegment { points, bundle, arclength, base_index: steps })
}

/// Image polyline of a segment, refined so no image chord exceeds `max_chord`.
pub fn push_forward(
    model: &DAMap,
    points: &[LiftPoint],
    max_chord: f64,
    budget: usize,
) -> Result<Vec<LiftPoint>, FoliationError> {
    let mut out = Vec::with_capacity(points.len() * 4);
    if points.is_empty() {
        return Ok(out);
    }
    out.push(model.evaluate_lift(points[0]));
    for w in points.windows(2) {
        // Depth-first subdivision of the preimage chord.
        let mut stack = vec![(w[0].0, w[1].0, model.evaluate_lift(w[1]).0, 0u32)];
        let mut tail_img = out.last().unwrap().0;
        while let Some((a, b, fb, depth)) = stack.pop() {
            if linalg::norm(linalg::sub(fb, tail_img)) <= max_chord || depth > 40 {
                out.push(LiftPoint(fb));
                tail_img = fb;
                if out.len() > budget {
                    return Err(FoliationError::RefinementExplosion(budget));
                }
            } else {
                let m = linalg::scale(linalg::add(a, b), 0.5);
                let fm = model.evaluate_lift(LiftPoint(m)).0;
                stack.push((m, b, fb, depth + 1));
                stack.push((a, m, fm, depth + 1));
            }
        }
    }
    Ok(out)
}

fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = linalg::sub(b, a);
    let l2 = linalg::dot(ab, ab);
    let t = if l2 == 0.0 { 0.0 } else { (linalg::dot(linalg::sub(p, a), ab) / l2).clamp(0.0, 1.0) };
    linalg::norm(linalg::sub(p, linalg::axpy(a, t, ab)))
}

/// Largest distance from a point of `a` to the polyline `b`.
pub fn directed_distance(a: &[LiftPoint], b: &[LiftPoint]) -> f64 {
    a.iter()
        .map(|p| {
            if b.len() == 1 {
                return linalg::norm(linalg::sub(p.0, b[0].0));
            }
            b.windows(2)
                .map(|w| point_segment_distance(p.0, w[0].0, w[1].0))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

pub fn hausdorff_distance(a: &[LiftPoint], b: &[LiftPoint]) -> f64 {
    directed_distance(a, b).max(directed_distance(b, a))
}

/// Distance from `trace(f(p))` to the refined image `f(trace(p))`.
///
/// The image is longer than the trace at `f(p)` for expanding bundles, so the
/// distance is measured one-sided from the shorter curve.
pub fn leaf_invariance_defect(
    model: &DAMap,
    p: TorusPoint,
    bundle: Bundle,
    half_length: f64,
    step: f64,
) -> Result<f64, FoliationError> {
    let leaf = trace_leaf(model, p.lift(), bundle, half_length, step)?;
    let image = push_forward(model, &leaf.points, step, 1_000_000)?;
    let fp = model.evaluate_lift(p.lift());
    let leaf_fp = trace_leaf(model, fp, bundle, half_length, step)?;
    Ok(directed_distance(&leaf_fp.points, &image))
}

/// Coordinates in a foliation box: transversal `(a, b)` and leaf arclength `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoord {
    pub a: f64,
    pub b: f64,
    pub t: f64,
}

/// Foliation box: a planar transversal square through `center`, spanned by the two
/// bundles other than `bundle`, and the plaques of `bundle` through a grid on it.
#[derive(Debug, Clone)]
pub struct FoliationBox {
    pub model: DAMap,
    pub bundle: Bundle,
    pub center: LiftPoint,
    /// Transversal axes (unit) and the plaque direction at the center.
    pub axes: [Vec3; 3],
    pub radius: f64,
    pub half_length: f64,
    pub grid: usize,
    pub step: f64,
    pub plaques: Vec<LeafSegment>,
    /// Dual basis for `axes`.
    dual: [Vec3; 3],
    /// Plaques are parallel segments and the chart is affine.
    affine: bool,
    /// How far the affine chart may stray from the true one, transversally and along plaques.
    slack: [f64; 2],
}

/// Request for [`build_box`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub bundle: Bundle,
    pub radius: f64,
    pub half_length: f64,
    pub grid: usize,
    pub step: f64,
}

pub fn build_box(model: &DAMap, center: TorusPoint, spec: &BoxSpec) -> Result<FoliationBox, FoliationError> {
    if spec.grid < 2 || !(spec.radius > 0.0) || !(spec.half_length > 0.0) {
        return Err(FoliationError::Invalid(format!("box spec {spec:?}")));
    }
    let frame = bundle_at(model, center, DEFAULT_BUNDLE_ITERATIONS)?;
    let affine = straight_leaves(model, spec.bundle);
    let along = if affine {
        model.base().splitting().eigenvectors[spec.bundle.index()]
    } else {
        frame.direction(spec.bundle)
    };
    let others: Vec<Vec3> = [Bundle::Stable, Bundle::Center, Bundle::Unstable]
        .into_iter()
        .filter(|b| *b != spec.bundle)
        .map(|b| frame.direction(b))
        .collect();
    let axes = [others[0], others[1], along];
    let inv = linalg::inverse(&linalg::from_columns(axes))
        .ok_or_else(|| FoliationError::Invalid("degenerate box frame".into()))?;
    let mut bx = FoliationBox {
        model: model.clone(),
        bundle: spec.bundle,
        center: center.lift(),
        axes,
        radius: spec.radius,
        half_length: spec.half_length,
        grid: spec.grid,
        step: spec.step,
        plaques: Vec::with_capacity(spec.grid * spec.grid),
        dual: inv,
        affine,
        slack: [0.0; 2],
    };
    for i in 0..spec.grid {
        for j in 0..spec.grid {
            let base = bx.base_point(bx.grid_value(i), bx.grid_value(j));
            bx.plaques.push(trace_leaf(model, base, spec.bundle, spec.half_length, spec.step)?);
        }
    }
    bx.check_collisions()?;
    if !affine {
        let mut dev = [0.0f64; 2];
        for (k, pl) in bx.plaques.iter().enumerate() {
            let (a, b) = (bx.grid_value(k / spec.grid), bx.grid_value(k % spec.grid));
            for (p, t) in pl.points.iter().zip(&pl.arclength) {
                let c = bx.affine_chart(*p);
                dev[0] = dev[0].max((c.a - a).abs()).max((c.b - b).abs());
                dev[1] = dev[1].max((c.t - t).abs());
            }
        }
        let pad = bx.grid_spacing();
        bx.slack = dev.map(|d| 2.0 * d + pad);
    }
    Ok(bx)
}

impl FoliationBox {
    fn grid_value(&self, i: usize) -> f64 {
        -self.radius + 2.0 * self.radius * i as f64 / (self.grid - 1) as f64
    }

    pub fn grid_spacing(&self) -> f64 {
        2.0 * self.radius / (self.grid - 1) as f64
    }

    pub fn base_point(&self, a: f64, b: f64) -> LiftPoint {
        LiftPoint(linalg::axpy(linalg::axpy(self.center.0, a, self.axes[0]), b, self.axes[1]))
    }

    fn field(&self) -> BundleField<'_> {
        BundleField::new(&self.model, self.bundle)
    }

    /// Plaque point at box coordinates.
    pub fn chart_inverse(&self, c: BoxCoord) -> Result<LiftPoint, FoliationError> {
        let base = self.base_point(c.a, c.b);
        if self.affine {
            return Ok(LiftPoint(linalg::axpy(base.0, c.t, self.axes[2])));
        }
        Ok(LiftPoint(self.field().flow(base.0, c.t, self.step)?))
    }

    fn affine_chart(&self, y: LiftPoint) -> BoxCoord {
        let d = linalg::sub(y.0, self.center.0);
        BoxCoord { a: linalg::dot(self.dual[0], d), b: linalg::dot(self.dual[1], d), t: linalg::dot(self.dual[2], d) }
    }

    /// Cheap test: `false` only for points the chart would place outside the box.
    pub fn may_contain(&self, y: LiftPoint) -> bool {
        let c = self.affine_chart(y);
        c.a.abs() <= self.radius + self.slack[0]
            && c.b.abs() <= self.radius + self.slack[0]
            && c.t.abs() <= self.half_length + self.slack[1]
    }

    /// Box coordinates of a lift point near the box. Slides along the plaque field to
    /// the transversal plane; `t` is the arclength slid.
    pub fn chart(&self, y: LiftPoint) -> Result<BoxCoord, FoliationError> {
        if self.affine {
            return Ok(self.affine_chart(y));
        }
        let normal = linalg::normalize(linalg::cross(self.axes[0], self.axes[1]));
        let field = self.field();
        let mut t = 0.0;
        let mut x = y.0;
        for _ in 0..8 {
            let dist = linalg::dot(normal, linalg::sub(x, self.center.0));
            if dist.abs() < 1e-13 {
                break;
            }
            let e = field.oriented(x, self.axes[2])?;
            let dt = dist / linalg::dot(normal, e);
            x = field.flow(x, -dt, self.step)?;
            t += dt;
        }
        let d = linalg::sub(x, self.center.0);
        Ok(BoxCoord { a: linalg::dot(self.dual[0], d), b: linalg::dot(self.dual[1], d), t })
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn contains(&self, c: &BoxCoord) -> bool {
        c.a.abs() <= self.radius && c.b.abs() <= self.radius && c.t.abs() <= self.half_length
    }

    /// Axis-aligned bounding box of the plaques, in lift coordinates.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for pl in &self.plaques {
            for p in &pl.points {
                for k in 0..3 {
                    lo[k] = lo[k].min(p.0[k]);
                    hi[k] = hi[k].max(p.0[k]);
                }
            }
        }
        (lo, hi)
    }

    /// Pairwise plaque separation on the torus, via a spatial hash at the threshold scale.
    fn check_collisions(&self) -> Result<(), FoliationError> {
        use std::collections::HashMap;
        let threshold = 0.25 * self.grid_spacing();
        let cells = (1.0 / threshold).floor().max(1.0) as i64;
        let cell_of = |p: TorusPoint| {
            let c = p.coords();
            [
                ((c[0] * cells as f64) as i64).min(cells - 1),
                ((c[1] * cells as f64) as i64).min(cells - 1),
                ((c[2] * cells as f64) as i64).min(cells - 1),
            ]
        };
        let mut table: HashMap<[i64; 3], Vec<(usize, TorusPoint)>> = HashMap::new();
        for (k, pl) in self.plaques.iter().enumerate() {
            for w in pl.points.windows(2) {
                let chord = linalg::norm(linalg::sub(w[1].0, w[0].0));
                let sub = (chord / threshold).ceil().max(1.0) as usize;
                for s in 0..sub {
                    let x = linalg::axpy(w[0].0, s as f64 / sub as f64, linalg::sub(w[1].0, w[0].0));
                    let tp = torus::wrap(LiftPoint(x));
                    table.entry(cell_of(tp)).or_default().push((k, tp));
                }
            }
            let last = pl.points.last().unwrap().wrap();
            table.entry(cell_of(last)).or_default().push((k, last));
        }
        let mut worst = f64::INFINITY;
        for (cell, pts) in &table {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let nb = [
                            (cell[0] + dx).rem_euclid(cells),
                            (cell[1] + dy).rem_euclid(cells),
                            (cell[2] + dz).rem_euclid(cells),
                        ];
                        let Some(other) = table.get(&nb) else { continue };
                        for (ka, pa) in pts {
                            for (kb, pb) in other {
                                if ka < kb {
                                    worst = worst.min(torus::torus_distance(*pa, *pb));
                                }
                            }
                        }
                    }
                }
            }
        }
        if worst < threshold {
            return Err(FoliationError::PlaqueCollision { distance: worst, threshold });
        }
        Ok(())
    }
}

/// Empirical quasi-isometry constant for one window length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiIsometryEstimate {
    pub half_length: f64,
    pub pairs: usize,
    /// `max d_leaf / d_ambient`.
    pub max_ratio: f64,
    /// Smallest `Q >= 1` with `d_leaf <= Q d_ambient + Q` on the sample.
    pub q: f64,
}

/// Samples random point pairs on center leaves and fits the affine quasi-isometry
/// bound. Windows are nested, so `q` is non-decreasing in the window length.
pub fn quasi_isometry_report(
    model: &DAMap,
    pairs: usize,
    half_lengths: &[f64],
    step: f64,
    seed: u64,
) -> Result<Vec<QuasiIsometryEstimate>, FoliationError> {
    let l_max = half_lengths.iter().cloned().fold(0.0, f64::max);
    let leaves = 10usize.min(pairs.max(1));
    let mut rng = rng::stream(seed, 0);
    let mut samples: Vec<(f64, f64, f64)> = Vec::with_capacity(pairs);
    for k in 0..leaves {
        let p = TorusPoint::new(rng.gen(), rng.gen(), rng.gen());
        let leaf = trace_leaf(model, p.lift(), Bundle::Center, l_max, step)?;
        let per = pairs / leaves + usize::from(k < pairs % leaves);
        for _ in 0..per {
            let i = rng.gen_range(0..leaf.len());
            let j = rng.gen_range(0..leaf.len());
            if i == j {
                continue;
            }
            let dl = (leaf.arclength[i] - leaf.arclength[j]).abs();
            let de = linalg::norm(linalg::sub(leaf.points[i].0, leaf.points[j].0));
            let reach = leaf.arclength[i].abs().max(leaf.arclength[j].abs());
            samples.push((reach, dl, de));
        }
    }
    Ok(half_lengths
        .iter()
        .map(|&l| {
            let inside: Vec<_> = samples.iter().filter(|s| s.0 <= l + 1e-12).collect();
            let max_ratio = inside.iter().map(|s| s.1 / s.2).fold(0.0, f64::max);
            let q = inside.iter().map(|s| s.1 / (s.2 + 1.0)).fold(1.0, f64::max);
            QuasiIsometryEstimate { half_length: l, pairs: inside.len(), max_ratio, q }
        })
        .collect())
}

/// Lengths of forward (or backward) images of a leaf segment and the fitted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub bundle: Bundle,
    /// `lengths[n]` = length of the n-th image.
    pub lengths: Vec<f64>,
    /// Least-squares slope of `log length` over the second half of the range.
    pub rate: f64,
}

fn chord_data(seg: &LeafSegment) -> Vec<(Vec3, Vec3, f64)> {
    seg.points
        .windows(2)
        .map(|w| {
            let d = linalg::sub(w[1].0, w[0].0);
            let l = linalg::norm(d);
            (linalg::scale(linalg::add(w[0].0, w[1].0), 0.5), linalg::scale(d, 1.0 / l), l)
        })
        .collect()
}

/// Slope of `y` against its index over `[start, end)`.
pub fn index_slope(y: &[f64], start: usize) -> f64 {
    let pts: Vec<(f64, f64)> = y.iter().enumerate().skip(start).map(|(i, v)| (i as f64, *v)).collect();
    least_squares_slope(&pts).0
}

/// Least-squares slope and RMS residual.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    (slope, (rss / n).sqrt())
}

/// Growth of `length(f^n(segment))`, computed as `sum |Df^n(m_j) u_j| l_j` over the
/// chords (midpoint `m_j`, unit direction `u_j`, length `l_j`) so no image polyline
/// has to be stored.
pub fn growth_rate(model: &DAMap, seg: &LeafSegment, n_max: usize) -> Result<GrowthReport, FoliationError> {
    if seg.len() < 2 || n_max < 2 {
        return Err(FoliationError::Invalid("growth needs a segment with 2+ points and n_max >= 2".into()));
    }
    let mut lengths = vec![0.0; n_max + 1];
    for (mid, dir, l) in chord_data(seg) {
        let mut x = torus::wrap(LiftPoint(mid));
        let mut v = dir;
        lengths[0] += l;
        for len in lengths.iter_mut().skip(1) {
            v = linalg::mat_vec(&model.derivative(x.coords()), v);
            x = model.evaluate(x);
            *len += linalg::norm(v) * l;
        }
    }
    let logs: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
    Ok(GrowthReport { bundle: seg.bundle, rate: index_slope(&logs, n_max / 2), lengths })
}

/// Lengths of backward images of a center segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardLengths {
    pub lengths: Vec<f64>,
    /// Largest length over the whole range: empirical `K_f`.
    pub bound: f64,
    /// Whether the tail half never exceeds the head half.
    pub bounded: bool,
}

pub fn backward_center_length(
    model: &DAMap,
    seg: &LeafSegment,
    n_max: usize,
) -> Result<BackwardLengths, FoliationError> {
    // Tracking a raw tangent vector backwards amplifies any stable component by
    // 1/l1 per step, so the factor is taken from the center bundle at each point.
    let field = BundleField::new(model, Bundle::Center);
    let mut lengths = vec![0.0; n_max + 1];
    for (mid, _, l) in chord_data(seg) {
        let mut x = torus::wrap(LiftPoint(mid));
        let mut factor = l;
        lengths[0] += l;
        for len in lengths.iter_mut().skip(1) {
            x = model.inverse(x)?;
            let ec = field.direction(x.coords())?;
            factor /= linalg::norm(linalg::mat_vec(&model.derivative(x.coords()), ec));
            *len += factor;
        }
    }
    let half = n_max / 2;
    let head = lengths[..=half].iter().cloned().fold(0.0, f64::max);
    let tail = lengths[half..].iter().cloned().fold(0.0, f64::max);
    Ok(BackwardLengths { bound: head.max(tail), bounded: tail <= head, lengths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::IntegerAutomorphism;

    #[test]
    fn linear_center_leaf_is_straight() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let p = LiftPoint::new(0.2, 0.4, 0.9);
        let leaf = trace_leaf(&f, p, Bundle::Center, 3.0, 0.05).unwrap();
        let e2 = f.base().splitting().center();
        let dev = leaf
            .points
            .iter()
            .map(|q| {
                let d = linalg::sub(q.0, p.0);
                linalg::norm(linalg::axpy(d, -linalg::dot(d, e2), e2))
            })
            .fold(0.0, f64::max);
        assert!(dev <= 1e-10, "deviation {dev}");
        assert!((leaf.total_length() - 6.0).abs() < 1e-12);
        assert!(leaf.arclength.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn oversized_box_collides() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let spec = BoxSpec { bundle: Bundle::Center, radius: 0.4, half_length: 2.0, grid: 8, step: 0.02 };
        let r = build_box(&f, TorusPoint::new(0.3, 0.3, 0.3), &spec);
        assert!(matches!(r, Err(FoliationError::PlaqueCollision { .. })), "{r:?}");
    }

    #[test]
    fn linear_box_chart_is_affine() {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let spec = BoxSpec { bundle: Bundle::Center, radius: 0.1, half_length: 0.1, grid: 4, step: 0.02 };
        let bx = build_box(&f, TorusPoint::new(0.3, 0.3, 0.3), &spec).unwrap();
        let c = BoxCoord { a: 0.03, b: -0.07, t: 0.05 };
        let back = bx.chart(bx.chart_inverse(c).unwrap()).unwrap();
        assert!((back.a - c.a).abs() < 1e-12 && (back.b - c.b).abs() < 1e-12 && (back.t - c.t).abs() < 1e-12);
    }

    #[test]
    fn prefilter_keeps_every_box_point() {
        let f = DAMap::reference();
        let spec = BoxSpec { bundle: Bundle::Unstable, radius: 0.1, half_length: 0.1, grid: 4, step: 0.01 };
        let bx = build_box(&f, TorusPoint::new(0.45, 0.5, 0.55), &spec).unwrap();
        assert!(!bx.is_affine());
        let mut r = rng::stream(3, 0);
        let (lo, hi) = bx.bounding_box();
        let mut inside = 0;
        for _ in 0..400 {
            let q = LiftPoint([0, 1, 2].map(|k| lo[k] - 0.05 + (hi[k] - lo[k] + 0.1) * r.gen::<f64>()));
            if bx.contains(&bx.chart(q).unwrap()) {
                inside += 1;
                assert!(bx.may_contain(q), "{q:?}");
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn slope_of_line() {
        let (s, r) = least_squares_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        assert!((s - 2.0).abs() < 1e-14 && r < 1e-14);
    }
}
