//! Binned disintegration of sampled measures along foliation boxes, atomicity
//! diagnostics, and partial entropy from dynamical leaf-ball masses.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ergodic::ExponentReport;
use crate::foliation::{flat_center_unstable, trace_leaf, BoxCoord, FoliationBox, FoliationError};
use crate::linalg::{self, Vec3};
use crate::models::{Bundle, DAMap, ModelError};
use crate::rng;
use crate::torus::{self, LiftPoint, TorusPoint};

/// Samples per parallel task. Fixed, so results do not depend on the worker count.
pub const CHUNK: usize = 1 << 14;
/// Default burn-in for orbit samplers.
pub const DEFAULT_BURN_IN: usize = 1000;
const BASE_STREAM: u64 = 1 << 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisintError {
    #[error(transparent)]
    Foliation(#[from] FoliationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("transversal bin {bin} holds {count} samples, below the floor {floor}")]
    InsufficientSamples { bin: usize, count: u64, floor: u64 },
    #[error("leaf ball of width {width:.3e} is below the resolution {resolution:.3e}")]
    ResolutionFloor { width: f64, resolution: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Foliation whose conditional measures are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Foliation {
    #[serde(rename = "c")]
    Center,
    #[serde(rename = "uu")]
    StrongUnstable,
    /// Two-dimensional center-unstable foliation.
    #[serde(rename = "u")]
    Unstable,
}

impl Foliation {
    pub fn bundle(self) -> Option<Bundle> {
        match self {
            Foliation::Center => Some(Bundle::Center),
            Foliation::StrongUnstable => Some(Bundle::Unstable),
            Foliation::Unstable => None,
        }
    }
}

impl std::str::FromStr for Foliation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "c" | "wu" => Ok(Foliation::Center),
            "uu" => Ok(Foliation::StrongUnstable),
            "u" => Ok(Foliation::Unstable),
            _ => Err(format!("unknown foliation {s:?} (expected c, uu or u)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    /// Uniform on the torus, restricted to the box.
    Volume,
    /// Points of long orbits after a burn-in; one orbit per task.
    Orbit { burn_in: usize },
    /// Every sample at one point.
    Delta { point: Vec3 },
}

impl Sampler {
    pub fn orbit() -> Self {
        Sampler::Orbit { burn_in: DEFAULT_BURN_IN }
    }
}

/// Runs `f(task, count, rng)` over fixed-size chunks of `m` samples in parallel,
/// results in task order.
fn chunked<T: Send>(m: usize, seed: u64, f: impl Fn(u64, usize, &mut rng::Rng) -> T + Sync) -> Vec<T> {
    let tasks = m.div_ceil(CHUNK);
    (0..tasks)
        .into_par_iter()
        .map(|k| {
            let count = CHUNK.min(m - k * CHUNK);
            let mut r = rng::stream(seed, k as u64);
            f(k as u64, count, &mut r)
        })
        .collect()
}

fn random_point(r: &mut rng::Rng) -> TorusPoint {
    TorusPoint::new(r.gen(), r.gen(), r.gen())
}

/// Orbit points for one task.
fn orbit_chunk(model: &DAMap, burn_in: usize, count: usize, r: &mut rng::Rng) -> Vec<TorusPoint> {
    let mut x = random_point(r);
    for _ in 0..burn_in {
        x = model.evaluate(x);
    }
    (0..count)
        .map(|_| {
            x = model.evaluate(x);
            x
        })
        .collect()
}

/// Translates of `y` near `center`, nearest first.
fn translates(center: Vec3, y: TorusPoint) -> impl Iterator<Item = Vec3> {
    let d = torus::min_displacement(center, y.coords());
    (0..27).map(move |k| {
        let off = [(k % 3) as f64, ((k / 3) % 3) as f64, (k / 9) as f64].map(|o| if o == 2.0 { -1.0 } else { o });
        linalg::add(d, off)
    })
}

/// Histogram layout: `transversal[0] x transversal[1]` plaque bins and `leaf` bins along
/// each plaque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub transversal: [usize; 2],
    pub leaf: usize,
}

impl Bins {
    /// Splits `t` transversal bins into the most square factor pair.
    pub fn new(t: usize, leaf: usize) -> Self {
        let mut a = (t as f64).sqrt().floor() as usize;
        while a > 1 && t % a != 0 {
            a -= 1;
        }
        let a = a.max(1);
        Bins { transversal: [a, t / a], leaf }
    }

    pub fn plaques(&self) -> usize {
        self.transversal[0] * self.transversal[1]
    }
}

fn bin_of(x: f64, half: f64, n: usize) -> usize {
    (((x + half) / (2.0 * half) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

/// Joint, marginal and conditional histograms of a measure sampled in a foliation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalProfile {
    pub bundle: Bundle,
    pub bins: Bins,
    pub radius: f64,
    pub half_length: f64,
    pub drawn: u64,
    pub accepted: u64,
    /// Row-major `plaques x leaf` counts.
    pub joint: Vec<u64>,
    pub marginal: Vec<u64>,
    pub floor: u64,
    #[serde(skip)]
    pub samples: Vec<BoxCoord>,
}

impl ConditionalProfile {
    fn empty(bx: &FoliationBox, bins: Bins, floor: u64) -> Self {
        ConditionalProfile {
            bundle: bx.bundle,
            bins,
            radius: bx.radius,
            half_length: bx.half_length,
            drawn: 0,
            accepted: 0,
            joint: vec![0; bins.plaques() * bins.leaf],
            marginal: vec![0; bins.plaques()],
            floor,
            samples: Vec::new(),
        }
    }

    pub fn plaque_bin(&self, a: f64, b: f64) -> usize {
        let i = bin_of(a, self.radius, self.bins.transversal[0]);
        let j = bin_of(b, self.radius, self.bins.transversal[1]);
        i * self.bins.transversal[1] + j
    }

    pub fn leaf_bin(&self, t: f64) -> usize {
        bin_of(t, self.half_length, self.bins.leaf)
    }

    pub fn leaf_bin_width(&self) -> f64 {
        2.0 * self.half_length / self.bins.leaf as f64
    }

    fn add(&mut self, c: BoxCoord) {
        let p = self.plaque_bin(c.a, c.b);
        let l = self.leaf_bin(c.t);
        self.joint[p * self.bins.leaf + l] += 1;
        self.marginal[p] += 1;
        self.accepted += 1;
    }

    pub fn joint_row(&self, bin: usize) -> &[u64] {
        &self.joint[bin * self.bins.leaf..(bin + 1) * self.bins.leaf]
    }

    fn check_floor(&self, bin: usize) -> Result<u64, DisintError> {
        let count = self.marginal[bin];
        if count == 0 || count < self.floor {
            return Err(DisintError::InsufficientSamples { bin, count, floor: self.floor });
        }
        Ok(count)
    }

    /// Conditional probability vector on plaque bin `bin`.
    pub fn conditional(&self, bin: usize) -> Result<Vec<f64>, DisintError> {
        let count = self.check_floor(bin)? as f64;
        Ok(self.joint_row(bin).iter().map(|&j| j as f64 / count).collect())
    }

    /// `marginal x conditional`, rounded back to counts.
    pub fn reassembled(&self) -> Vec<u64> {
        let mut out = vec![0; self.joint.len()];
        for bin in 0..self.marginal.len() {
            let m = self.marginal[bin];
            if m == 0 {
                continue;
            }
            for (l, &j) in self.joint_row(bin).iter().enumerate() {
                let p = j as f64 / m as f64;
                out[bin * self.bins.leaf + l] = (p * m as f64).round() as u64;
            }
        }
        out
    }

    /// Discrete Rokhlin identity: marginals are the row sums of the joint histogram and
    /// marginal x conditional gives the joint histogram back.
    pub fn rokhlin_identity(&self) -> bool {
        (0..self.marginal.len()).all(|b| self.joint_row(b).iter().sum::<u64>() == self.marginal[b])
            && self.marginal.iter().sum::<u64>() == self.accepted
            && self.reassembled() == self.joint
    }

    /// Conditional CDF on plaque bin `bin` at leaf coordinate `t`, linear inside bins.
    pub fn cdf(&self, bin: usize, t: f64) -> Result<f64, DisintError> {
        let count = self.check_floor(bin)? as f64;
        let x = ((t + self.half_length) / self.leaf_bin_width()).clamp(0.0, self.bins.leaf as f64);
        let full = x.floor() as usize;
        let row = self.joint_row(bin);
        let c: u64 = row[..full].iter().sum();
        let mut frac = 0.0;
        if full < self.bins.leaf {
            frac = (x - full as f64) * row[full] as f64;
        }
        Ok((c as f64 + frac) / count)
    }

    /// Fraction of cells, over plaque bins above the floor, whose count is within three
    /// binomial standard deviations of the uniform conditional.
    pub fn uniformity_fraction(&self) -> f64 {
        let p = 1.0 / self.bins.leaf as f64;
        let mut ok = 0usize;
        let mut total = 0usize;
        for bin in 0..self.marginal.len() {
            let m = self.marginal[bin];
            if m == 0 || m < self.floor {
                continue;
            }
            let mean = m as f64 * p;
            let sd = (m as f64 * p * (1.0 - p)).sqrt();
            for &j in self.joint_row(bin) {
                total += 1;
                if (j as f64 - mean).abs() <= 3.0 * sd {
                    ok += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            ok as f64 / total as f64
        }
    }
}

/// Box coordinates of a torus point, if it lies in the box.
fn locate_in_box(bx: &FoliationBox, aabb: &(Vec3, Vec3), y: TorusPoint) -> Result<Option<BoxCoord>, DisintError> {
    for d in translates(bx.center.0, y) {
        let q = LiftPoint(linalg::add(bx.center.0, d));
        if !bx.is_affine() && ((0..3).any(|k| q.0[k] < aabb.0[k] || q.0[k] > aabb.1[k]) || !bx.may_contain(q)) {
            continue;
        }
        let c = bx.chart(q)?;
        if bx.contains(&c) {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

fn padded_aabb(bx: &FoliationBox) -> (Vec3, Vec3) {
    let (lo, hi) = bx.bounding_box();
    let pad = bx.grid_spacing();
    (lo.map(|v| v - pad), hi.map(|v| v + pad))
}

/// Samples `m` points from `sampler`, charts those inside `bx` and bins them.
pub fn disintegrate(
    bx: &FoliationBox,
    sampler: &Sampler,
    m: usize,
    bins: Bins,
    seed: u64,
    floor: u64,
) -> Result<ConditionalProfile, DisintError> {
    if bins.plaques() == 0 || bins.leaf == 0 {
        return Err(DisintError::Invalid(format!("bins {bins:?}")));
    }
    let aabb = padded_aabb(bx);
    let model = &bx.model;
    let parts: Vec<Result<Vec<BoxCoord>, DisintError>> = match sampler {
        Sampler::Delta { point } => {
            let p = TorusPoint::new(point[0], point[1], point[2]);
            let c = locate_in_box(bx, &aabb, p)?
                .ok_or_else(|| DisintError::Invalid(format!("delta point {point:?} outside the box")))?;
            vec![Ok(vec![c; m])]
        }
        Sampler::Volume => chunked(m, seed, |_, count, r| {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                if bx.is_affine() {
                    let c = BoxCoord {
                        a: bx.radius * (2.0 * r.gen::<f64>() - 1.0),
                        b: bx.radius * (2.0 * r.gen::<f64>() - 1.0),
                        t: bx.half_length * (2.0 * r.gen::<f64>() - 1.0),
                    };
                    out.push(c);
                } else {
                    let q = LiftPoint([0, 1, 2].map(|k| aabb.0[k] + (aabb.1[k] - aabb.0[k]) * r.gen::<f64>()));
                    if !bx.may_contain(q) {
                        continue;
                    }
                    let c = bx.chart(q)?;
                    if bx.contains(&c) {
                        out.push(c);
                    }
                }
            }
            Ok(out)
        }),
        Sampler::Orbit { burn_in } => chunked(m, seed, |_, count, r| {
            let mut out = Vec::new();
            for y in orbit_chunk(model, *burn_in, count, r) {
                if let Some(c) = locate_in_box(bx, &aabb, y)? {
                    out.push(c);
                }
            }
            Ok(out)
        }),
    };
    let mut profile = ConditionalProfile::empty(bx, bins, floor);
    profile.drawn = m as u64;
    for part in parts {
        for c in part? {
            profile.add(c);
            profile.samples.push(c);
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomicityThresholds {
    /// Median top-4 mass above which the profile is atomic-like.
    pub atomic_top4: f64,
    /// Median top-4 mass below which (with high entropy) it is continuous-like.
    pub continuous_top4: f64,
    /// Normalized histogram entropy required for continuous-like.
    pub continuous_entropy: f64,
    /// Bin mass counted as an atom.
    pub atom_mass: f64,
}

impl Default for AtomicityThresholds {
    fn default() -> Self {
        Self { atomic_top4: 0.9, continuous_top4: 0.3, continuous_entropy: 0.8, atom_mass: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    AtomicLike,
    ContinuousLike,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaqueConcentration {
    pub bin: usize,
    pub count: u64,
    pub top1: f64,
    pub top4: f64,
    pub top16: f64,
    pub atoms: usize,
    /// Histogram entropy divided by `log(leaf bins)`.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicityDiagnostics {
    pub plaques: Vec<PlaqueConcentration>,
    pub median_top4: f64,
    pub median_entropy: f64,
    pub verdict: Verdict,
    pub thresholds: AtomicityThresholds,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Concentration statistics of every plaque bin above the floor.
pub fn atomicity(profile: &ConditionalProfile, th: &AtomicityThresholds) -> AtomicityDiagnostics {
    let mut plaques = Vec::new();
    for bin in 0..profile.marginal.len() {
        let Ok(mut p) = profile.conditional(bin) else { continue };
        p.sort_by(|a, b| b.total_cmp(a));
        let top = |k: usize| p.iter().take(k).sum::<f64>().min(1.0);
        let h: f64 = p.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum();
        let norm = if p.len() > 1 { (p.len() as f64).ln() } else { 1.0 };
        plaques.push(PlaqueConcentration {
            bin,
            count: profile.marginal[bin],
            top1: top(1),
            top4: top(4),
            top16: top(16),
            atoms: p.iter().filter(|&&q| q >= th.atom_mass).count(),
            entropy: h / norm,
        });
    }
    let median_top4 = median(&mut plaques.iter().map(|c| c.top4).collect::<Vec<_>>());
    let median_entropy = median(&mut plaques.iter().map(|c| c.entropy).collect::<Vec<_>>());
    let verdict = if plaques.is_empty() {
        Verdict::Indeterminate
    } else if median_top4 > th.atomic_top4 {
        Verdict::AtomicLike
    } else if median_top4 < th.continuous_top4 && median_entropy > th.continuous_entropy {
        Verdict::ContinuousLike
    } else {
        Verdict::Indeterminate
    };
    AtomicityDiagnostics { plaques, median_top4, median_entropy, verdict, thresholds: *th }
}

/// Leaf-arclength offsets `(lo, hi)` around `x` of the dynamical balls
/// `{y in F(x) : d_F(f^i x, f^i y) < eps, 0 <= i <= n}`, for `n = 0..=n_max`.
///
/// Leaf distances after `i` steps come from pushing every chord of a traced leaf
/// through the derivative cocycle.
pub fn leaf_ball_offsets(
    model: &DAMap,
    bundle: Bundle,
    x: LiftPoint,
    eps: f64,
    n_max: usize,
) -> Result<Vec<(f64, f64)>, DisintError> {
    let seg = trace_leaf(model, x, bundle, 1.05 * eps, eps / 64.0)?;
    let nc = seg.len() - 1;
    // len[i][j]: length of chord j after i steps.
    let mut len = vec![vec![0.0; nc]; n_max + 1];
    for j in 0..nc {
        let mut m = linalg::scale(linalg::add(seg.points[j].0, seg.points[j + 1].0), 0.5);
        let mut v = linalg::sub(seg.points[j + 1].0, seg.points[j].0);
        for row in len.iter_mut() {
            row[j] = linalg::norm(v);
            v = linalg::mat_vec(&model.derivative(m), v);
            m = model.evaluate_lift(LiftPoint(m)).0;
        }
    }
    let k = seg.base_index;
    let s = &seg.arclength;
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let reach = |chords: &mut dyn Iterator<Item = usize>| -> f64 {
            let mut cum = vec![0.0; n + 1];
            let mut dist = 0.0;
            for j in chords {
                let ds = (s[j + 1] - s[j]).abs();
                let mut f: f64 = 1.0;
                for i in 0..=n {
                    if cum[i] + len[i][j] >= eps {
                        f = f.min((eps - cum[i]) / len[i][j]);
                    }
                }
                if f < 1.0 {
                    return dist + f.max(0.0) * ds;
                }
                for i in 0..=n {
                    cum[i] += len[i][j];
                }
                dist += ds;
            }
            dist
        };
        let hi = reach(&mut (k..nc));
        let lo = reach(&mut (0..k).rev());
        out.push((-lo, hi));
    }
    Ok(out)
}

/// Conditional mass of the dynamical ball `B(x, n, eps)` on the plaque bin of `x`.
pub fn leaf_ball_mass(
    bx: &FoliationBox,
    profile: &ConditionalProfile,
    x: BoxCoord,
    n: usize,
    eps: f64,
) -> Result<f64, DisintError> {
    let offsets = leaf_ball_offsets(&bx.model, bx.bundle, bx.chart_inverse(x)?, eps, n)?;
    interval_mass(profile, x, offsets[n])
}

fn interval_mass(profile: &ConditionalProfile, x: BoxCoord, (lo, hi): (f64, f64)) -> Result<f64, DisintError> {
    let width = hi - lo;
    if width < profile.leaf_bin_width() {
        return Err(DisintError::ResolutionFloor { width, resolution: profile.leaf_bin_width() });
    }
    let bin = profile.plaque_bin(x.a, x.b);
    Ok(profile.cdf(bin, x.t + hi)? - profile.cdf(bin, x.t + lo)?)
}

/// A slab of center-unstable planes: `|c1| <= radius` across, `|c2|, |c3| <= half_length`
/// along, in eigen-coordinates about `center`. Only for maps whose center-unstable
/// leaves are the expanding eigenplanes.
#[derive(Debug, Clone)]
pub struct PlaneSlab {
    pub model: DAMap,
    pub center: LiftPoint,
    pub radius: f64,
    pub half_length: f64,
}

impl PlaneSlab {
    pub fn new(model: &DAMap, center: TorusPoint, radius: f64, half_length: f64) -> Result<Self, DisintError> {
        if !flat_center_unstable(model) {
            return Err(DisintError::Unsupported(
                "center-unstable leaves are curved for this perturbation direction".into(),
            ));
        }
        if !(radius > 0.0 && half_length > 0.0) {
            return Err(DisintError::Invalid(format!("slab radius {radius}, half length {half_length}")));
        }
        Ok(Self { model: model.clone(), center: center.lift(), radius, half_length })
    }

    pub fn coords(&self, d: Vec3) -> Vec3 {
        self.model.base().splitting().coordinates(d)
    }

    pub fn point(&self, c: Vec3) -> LiftPoint {
        let e = self.model.base().splitting().eigenvectors;
        LiftPoint((0..3).fold(self.center.0, |p, i| linalg::axpy(p, c[i], e[i])))
    }

    pub fn contains(&self, c: &Vec3) -> bool {
        c[0].abs() <= self.radius && c[1].abs() <= self.half_length && c[2].abs() <= self.half_length
    }

    /// Length of the part of `d` inside the plane.
    fn in_plane_norm(&self, d: Vec3) -> f64 {
        let split = self.model.base().splitting();
        linalg::norm(linalg::axpy(d, -linalg::dot(split.dual[0], d), split.eigenvectors[0]))
    }
}

/// Samples in a [`PlaneSlab`], grouped by bin of the stable coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneProfile {
    pub bins: usize,
    pub radius: f64,
    pub half_length: f64,
    pub drawn: u64,
    pub accepted: u64,
    pub counts: Vec<u64>,
    pub floor: u64,
    /// Eigen-coordinates per bin.
    #[serde(skip)]
    pub samples: Vec<Vec<Vec3>>,
}

impl PlaneProfile {
    pub fn bin(&self, c0: f64) -> usize {
        bin_of(c0, self.radius, self.bins)
    }
}

pub fn disintegrate_plane(
    slab: &PlaneSlab,
    sampler: &Sampler,
    m: usize,
    bins: usize,
    seed: u64,
    floor: u64,
) -> Result<PlaneProfile, DisintError> {
    if bins == 0 {
        return Err(DisintError::Invalid("zero bins".into()));
    }
    let locate = |y: TorusPoint| translates(slab.center.0, y).map(|d| slab.coords(d)).find(|c| slab.contains(c));
    let parts: Vec<Vec<Vec3>> = match sampler {
        Sampler::Delta { point } => {
            let c = locate(TorusPoint::new(point[0], point[1], point[2]))
                .ok_or_else(|| DisintError::Invalid(format!("delta point {point:?} outside the slab")))?;
            vec![vec![c; m]]
        }
        Sampler::Volume => chunked(m, seed, |_, count, r| {
            (0..count)
                .map(|_| {
                    [slab.radius, slab.half_length, slab.half_length].map(|h| h * (2.0 * r.gen::<f64>() - 1.0))
                })
                .collect()
        }),
        Sampler::Orbit { burn_in } => chunked(m, seed, |_, count, r| {
            orbit_chunk(&slab.model, *burn_in, count, r).into_iter().filter_map(locate).collect()
        }),
    };
    let mut profile = PlaneProfile {
        bins,
        radius: slab.radius,
        half_length: slab.half_length,
        drawn: m as u64,
        accepted: 0,
        counts: vec![0; bins],
        floor,
        samples: vec![Vec::new(); bins],
    };
    for c in parts.into_iter().flatten() {
        let b = profile.bin(c[0]);
        profile.counts[b] += 1;
        profile.accepted += 1;
        profile.samples[b].push(c);
    }
    Ok(profile)
}

/// Sample counts of the plane dynamical balls `B(x, n, eps)` for `n = 0..=n_max`,
/// by testing every sample of the same stable bin pointwise (moved onto the plane of `x`).
pub fn plane_ball_counts(
    slab: &PlaneSlab,
    profile: &PlaneProfile,
    x: Vec3,
    eps: f64,
    n_max: usize,
) -> (u64, Vec<u64>) {
    let bin = profile.bin(x[0]);
    let model = &slab.model;
    let mut orbit = Vec::with_capacity(n_max + 1);
    let mut p = slab.point(x);
    for _ in 0..=n_max {
        orbit.push(p.0);
        p = model.evaluate_lift(p);
    }
    let mut counts = vec![0u64; n_max + 1];
    for y in &profile.samples[bin] {
        let mut q = slab.point([x[0], y[1], y[2]]);
        for (i, xi) in orbit.iter().enumerate() {
            if slab.in_plane_norm(linalg::sub(q.0, *xi)) >= eps {
                break;
            }
            counts[i] += 1;
            if i < n_max {
                q = model.evaluate_lift(q);
            }
        }
    }
    (profile.counts[bin], counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub eps: Vec<f64>,
    pub n_max: usize,
    pub base_points: usize,
    pub seed: u64,
    /// Mean weighted fit residual above which a slope is marked invalid.
    pub residual_bound: f64,
    /// Minimum expected sample count inside a ball for it to enter the fit.
    pub count_floor: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { eps: vec![0.1, 0.05, 0.025], n_max: 12, base_points: 64, seed: 0, residual_bound: 0.25, count_floor: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSlope {
    pub eps: f64,
    pub slope: f64,
    pub half_width: f64,
    pub base_points: usize,
    pub mean_points: f64,
    pub residual: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub foliation: Foliation,
    pub scales: Vec<ScaleSlope>,
    /// Slope at the smallest valid scale, clamped at 0.
    pub estimate: f64,
    pub half_width: f64,
    /// Needs at least two valid scales.
    pub valid: bool,
    /// Smallest-scale slope minus largest-scale slope.
    pub trend: f64,
    pub samples: u64,
}

/// Weighted least-squares slope of `y` on `x`, and the weighted rms residual.
fn weighted_slope(pts: &[(f64, f64, f64)]) -> (f64, f64) {
    let w: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / w;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / w;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let res = pts.iter().map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / w;
    (slope, res.sqrt())
}

/// Fit of `-log mass` against `n` for one base point; `masses[n]` with expected counts.
fn point_slope(masses: &[(f64, f64)]) -> Option<(f64, f64, usize)> {
    let pts: Vec<(f64, f64, f64)> = masses
        .iter()
        .enumerate()
        .map(|(n, (m, w))| (n as f64, -m.ln(), *w))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (s, r) = weighted_slope(&pts);
    Some((s, r, pts.len()))
}

fn summarize(eps: f64, fits: &[(f64, f64, usize)], bound: f64) -> ScaleSlope {
    let k = fits.len();
    if k == 0 {
        return ScaleSlope {
            eps,
            slope: f64::NAN,
            half_width: f64::INFINITY,
            base_points: 0,
            mean_points: 0.0,
            residual: f64::NAN,
            valid: false,
        };
    }
    let mean = fits.iter().map(|f| f.0).sum::<f64>() / k as f64;
    let var = if k > 1 { fits.iter().map(|f| (f.0 - mean).powi(2)).sum::<f64>() / (k - 1) as f64 } else { f64::INFINITY };
    let residual = fits.iter().map(|f| f.1).sum::<f64>() / k as f64;
    ScaleSlope {
        eps,
        slope: mean,
        half_width: 2.0 * (var / k as f64).sqrt(),
        base_points: k,
        mean_points: fits.iter().map(|f| f.2 as f64).sum::<f64>() / k as f64,
        residual,
        valid: k >= 2 && residual <= bound,
    }
}

fn finish(foliation: Foliation, mut scales: Vec<ScaleSlope>, samples: u64) -> EntropyEstimate {
    scales.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let valid_scales: Vec<&ScaleSlope> = scales.iter().filter(|s| s.valid).collect();
    let (estimate, half_width, trend) = match (valid_scales.first(), valid_scales.last()) {
        (Some(big), Some(small)) => (small.slope.max(0.0), small.half_width, small.slope - big.slope),
        _ => (f64::NAN, f64::INFINITY, f64::NAN),
    };
    EntropyEstimate { foliation, valid: valid_scales.len() >= 2, scales, estimate, half_width, trend, samples }
}

/// Draws base points among the samples whose `eps`-ball fits in the plaque.
fn pick_bases<T: Copy>(samples: &[T], count: usize, stream: u64, fits: impl Fn(&T) -> bool) -> Vec<T> {
    let mut r = rng::stream(stream, BASE_STREAM);
    let mut out = Vec::with_capacity(count);
    if samples.is_empty() {
        return out;
    }
    for _ in 0..count * 100 {
        if out.len() == count {
            break;
        }
        let s = samples[r.gen_range(0..samples.len())];
        if fits(&s) {
            out.push(s);
        }
    }
    out
}

/// Partial entropy along a one-dimensional foliation from a box profile.
pub fn partial_entropy_line(
    bx: &FoliationBox,
    profile: &ConditionalProfile,
    cfg: &EntropyConfig,
) -> Result<EntropyEstimate, DisintError> {
    let foliation = match bx.bundle {
        Bundle::Center => Foliation::Center,
        Bundle::Unstable => Foliation::StrongUnstable,
        Bundle::Stable => return Err(DisintError::Unsupported("stable foliation".into())),
    };
    let mut scales = Vec::new();
    for (ei, &eps) in cfg.eps.iter().enumerate() {
        let bases = pick_bases(&profile.samples, cfg.base_points, cfg.seed.wrapping_add(ei as u64), |c| {
            c.t.abs() + 1.05 * eps <= bx.half_length
                && profile.marginal[profile.plaque_bin(c.a, c.b)] >= profile.floor.max(1)
        });
        let fits: Vec<Option<(f64, f64, usize)>> = bases
            .par_iter()
            .map(|x| {
                let count = profile.marginal[profile.plaque_bin(x.a, x.b)] as f64;
                let offsets = leaf_ball_offsets(&bx.model, bx.bundle, bx.chart_inverse(*x)?, eps, cfg.n_max)?;
                let mut masses = Vec::new();
                for off in offsets {
                    match interval_mass(profile, *x, off) {
                        Ok(m) if m * count >= cfg.count_floor => masses.push((m, m * count)),
                        Ok(_) | Err(DisintError::ResolutionFloor { .. }) => break,
                        Err(e) => return Err(e),
                    }
                }
                Ok(point_slope(&masses))
            })
            .collect::<Result<_, DisintError>>()?;
        let fits: Vec<_> = fits.into_iter().flatten().collect();
        scales.push(summarize(eps, &fits, cfg.residual_bound));
    }
    Ok(finish(foliation, scales, profile.accepted))
}

/// Partial entropy along the center-unstable planes from a slab profile.
pub fn partial_entropy_plane(
    slab: &PlaneSlab,
    profile: &PlaneProfile,
    cfg: &EntropyConfig,
) -> Result<EntropyEstimate, DisintError> {
    let all: Vec<Vec3> = profile.samples.iter().flatten().copied().collect();
    let mut scales = Vec::new();
    for (ei, &eps) in cfg.eps.iter().enumerate() {
        let bases = pick_bases(&all, cfg.base_points, cfg.seed.wrapping_add(ei as u64), |c| {
            c[1].abs() + 1.05 * eps <= slab.half_length
                && c[2].abs() + 1.05 * eps <= slab.half_length
                && profile.counts[profile.bin(c[0])] >= profile.floor.max(1)
        });
        let fits: Vec<(f64, f64, usize)> = bases
            .par_iter()
            .filter_map(|x| {
                let (total, counts) = plane_ball_counts(slab, profile, *x, eps, cfg.n_max);
                let masses: Vec<(f64, f64)> = counts
                    .iter()
                    .take_while(|&&c| c as f64 >= cfg.count_floor)
                    .map(|&c| (c as f64 / total as f64, c as f64))
                    .collect();
                point_slope(&masses)
            })
            .collect();
        scales.push(summarize(eps, &fits, cfg.residual_bound));
    }
    Ok(finish(Foliation::Unstable, scales, profile.accepted))
}

/// Box geometry and sampling for [`partial_entropy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySetup {
    pub center: Vec3,
    pub radius: f64,
    pub half_length: f64,
    /// Plaque bins (split into a near-square grid) for line foliations; stable bins for
    /// the plane foliation.
    pub transversal_bins: usize,
    pub leaf_bins: usize,
    pub sampler: Sampler,
    pub samples: usize,
    pub floor: u64,
    pub config: EntropyConfig,
}

impl Default for EntropySetup {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5, 0.5],
            radius: 0.25,
            half_length: 0.25,
            transversal_bins: 32,
            leaf_bins: 64,
            sampler: Sampler::Volume,
            samples: 1_000_000,
            floor: 100,
            config: EntropyConfig::default(),
        }
    }
}

pub fn line_box(model: &DAMap, bundle: Bundle, setup: &EntropySetup) -> Result<FoliationBox, DisintError> {
    let spec = crate::foliation::BoxSpec {
        bundle,
        radius: setup.radius,
        half_length: setup.half_length,
        grid: 5,
        step: setup.half_length / 16.0,
    };
    let c = setup.center;
    Ok(crate::foliation::build_box(model, TorusPoint::new(c[0], c[1], c[2]), &spec)?)
}

/// Builds the box, samples the measure and estimates the partial entropy.
pub fn partial_entropy(model: &DAMap, foliation: Foliation, setup: &EntropySetup) -> Result<EntropyEstimate, DisintError> {
    let seed = setup.config.seed;
    match foliation.bundle() {
        Some(bundle) => {
            let bx = line_box(model, bundle, setup)?;
            let bins = Bins::new(setup.transversal_bins, setup.leaf_bins);
            let profile = disintegrate(&bx, &setup.sampler, setup.samples, bins, seed, setup.floor)?;
            partial_entropy_line(&bx, &profile, &setup.config)
        }
        None => {
            let c = setup.center;
            let slab = PlaneSlab::new(model, TorusPoint::new(c[0], c[1], c[2]), setup.radius, setup.half_length)?;
            // Plane balls need many samples per stable bin; at most 8 bins.
            let bins = setup.transversal_bins.clamp(1, 8);
            let profile = disintegrate_plane(&slab, &setup.sampler, setup.samples, bins, seed, setup.floor)?;
            partial_entropy_plane(&slab, &profile, &setup.config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub tau_uu: f64,
    pub h_u: f64,
    pub h_wu: f64,
    /// `tau_uu - (h_u - h_wu)`.
    pub margin: f64,
    /// Sum of the half-widths; infinite when an estimate is invalid.
    pub half_width: f64,
    /// `margin >= -half_width`, or none when the estimates cannot support a verdict.
    pub holds: Option<bool>,
}

pub fn entropy_inequality_check(u: &EntropyEstimate, wu: &EntropyEstimate, exponents: &ExponentReport) -> InequalityCheck {
    let tau = exponents.exponents[0];
    let margin = tau - (u.estimate - wu.estimate);
    let half_width = if u.valid && wu.valid {
        u.half_width + wu.half_width + exponents.half_width
    } else {
        f64::INFINITY
    };
    let holds = (half_width.is_finite() && margin.is_finite()).then_some(margin >= -half_width);
    InequalityCheck { tau_uu: tau, h_u: u.estimate, h_wu: wu.estimate, margin, half_width, holds }
}
