//! Operations runnable from the command line or from a config file.

use std::path::PathBuf;

use centerlab::disintegration::{
    self, AtomicityThresholds, Bins, DisintError, EntropyConfig, EntropyEstimate, EntropySetup, Foliation, Sampler,
};
use centerlab::ergodic::{self, ErgodicError};
use centerlab::foliation::{self, FoliationError};
use centerlab::kan::{self, MeasureMethod, SingularityConfig};
use centerlab::models::{Bundle, ConeField, DAMap};
use centerlab::semiconj::{self, ConjugacyError, Conjugator};
use centerlab::torus::{self, TorusPoint};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{validated_kan, CliError, ModelConfig};

impl From<ErgodicError> for CliError {
    fn from(e: ErgodicError) -> Self {
        match e {
            ErgodicError::Model(m) => m.into(),
            ErgodicError::Invalid(s) => CliError::Config(s),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<FoliationError> for CliError {
    fn from(e: FoliationError) -> Self {
        match e {
            FoliationError::Invalid(s) => CliError::Config(s),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ConjugacyError> for CliError {
    fn from(e: ConjugacyError) -> Self {
        match e {
            ConjugacyError::Model(m) => m.into(),
            ConjugacyError::Foliation(f) => f.into(),
            ConjugacyError::Invalid(s) => CliError::Config(s),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DisintError> for CliError {
    fn from(e: DisintError) -> Self {
        match e {
            DisintError::Model(m) => m.into(),
            DisintError::Foliation(f) => f.into(),
            DisintError::Invalid(s) => CliError::Config(s),
            DisintError::Unsupported(s) => CliError::Config(format!("unsupported: {s}")),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected x,y,z, got {} values", v.len()))
}

fn parse_bins(s: &str) -> Result<(usize, usize), String> {
    let (t, l) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected TxL, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(t)?, p(l)?))
}

/// Implements `Default` from the clap defaults, so config files and flags share them.
macro_rules! clap_default {
    ($($t:ty),* $(,)?) => {
        $(impl Default for $t {
            fn default() -> Self {
                <$t as Parser>::parse_from(["centerlab"])
            }
        })*
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Volume,
    Orbit,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Ulam,
    Orbit,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateArgs {
    /// Grid points per axis for the cone checks.
    #[arg(long, default_value_t = 16)]
    pub grid: usize,
    /// Cone apertures (radians) for ss, c, uu.
    #[arg(long, value_parser = parse_point, default_value = "0.4,0.3,0.3")]
    pub apertures: [f64; 3],
    /// Domination constant for the bundle stretch ratios.
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Summed tail bound that fixes the series depth.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberArgs {
    /// Target point `x,y,z`; repeatable.
    #[arg(long, value_parser = parse_point, default_value = "0.5,0.5,0.5")]
    pub z: Vec<[f64; 3]>,
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Half length of the traced center leaf.
    #[arg(long, default_value_t = 0.5)]
    pub len: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceArgs {
    #[arg(long, value_parser = parse_point, default_value = "0.5,0.5,0.5")]
    pub at: [f64; 3],
    #[arg(long, default_value = "c")]
    pub bundle: Bundle,
    /// Half length on each side of the base point.
    #[arg(long, default_value_t = 1.0)]
    pub len: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthArgs {
    #[arg(long, default_value = "uu")]
    pub bundle: Bundle,
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    #[arg(long, value_parser = parse_point, default_value = "0.3,0.6,0.2")]
    pub at: [f64; 3],
    #[arg(long, default_value_t = 0.05)]
    pub len: f64,
    #[arg(long, default_value_t = 0.005)]
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxArgs {
    #[arg(long, value_parser = parse_point, default_value = "0.5,0.5,0.5")]
    pub center: [f64; 3],
    #[arg(long, default_value_t = 0.25)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.25)]
    pub half_length: f64,
    #[arg(long, value_enum, default_value_t = SamplerKind::Volume)]
    pub sampler: SamplerKind,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Atom location for the delta sampler.
    #[arg(long, value_parser = parse_point)]
    pub point: Option<[f64; 3]>,
    /// Minimum plaque count for a conditional to be reported.
    #[arg(long, default_value_t = 100)]
    pub floor: u64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisintArgs {
    #[arg(long, default_value = "c")]
    pub foliation: Foliation,
    /// Transversal x leaf bins.
    #[arg(long, value_parser = parse_bins, default_value = "32x64")]
    pub bins: (usize, usize),
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: BoxArgs,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyArgs {
    #[arg(long, default_value = "c")]
    pub bundle: Foliation,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 12)]
    pub nmax: usize,
    #[arg(long, default_value_t = 64)]
    pub base_points: usize,
    #[arg(long, value_parser = parse_bins, default_value = "32x64")]
    pub bins: (usize, usize),
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: BoxArgs,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IneqArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 12)]
    pub nmax: usize,
    #[arg(long, default_value_t = 64)]
    pub base_points: usize,
    /// Orbit length for the strong unstable exponent.
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
    #[arg(long, value_parser = parse_point, default_value = "0.1234,0.5678,0.9012")]
    pub at: [f64; 3],
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: BoxArgs,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlissArgs {
    /// CSV with a header row; without it the series is `log |Df E^c|` along an orbit.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column to read; the last one by default.
    #[arg(long)]
    pub column: Option<String>,
    /// Threshold; defaults to the series mean plus `eps`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
    #[arg(long, value_parser = parse_point, default_value = "0.1234,0.5678,0.9012")]
    pub at: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KanArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub kan: KanArgs,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, default_value_t = 4)]
    pub samples_per_cell: usize,
    #[arg(long, default_value_t = 100_000)]
    pub horizon: usize,
    /// Distance to a boundary circle counted as capture.
    #[arg(long, default_value_t = 0.02)]
    pub trap: f64,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub kan: KanArgs,
    /// 0 for the bottom circle, 1 for the top.
    #[arg(long, default_value_t = 1)]
    pub boundary: usize,
    #[arg(long, value_enum, default_value_t = MethodKind::Ulam)]
    pub method: MethodKind,
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    #[arg(long, default_value_t = 300)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolonomyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub kan: KanArgs,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, default_value_t = 25)]
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingularityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub kan: KanArgs,
    #[arg(long, default_value_t = 1 << 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub blocks: usize,
    #[arg(long, default_value_t = 30)]
    pub depth: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
}

clap_default!(
    ValidateArgs,
    SpectrumArgs,
    ResidualArgs,
    FiberArgs,
    TraceArgs,
    GrowthArgs,
    BoxArgs,
    DisintArgs,
    EntropyArgs,
    IneqArgs,
    PlissArgs,
    KanArgs,
    BasinArgs,
    MeasureArgs,
    HolonomyArgs,
    SingularityArgs,
);

/// Experiment block of a config file; also what every subcommand resolves to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Experiment {
    ModelValidate(ValidateArgs),
    Spectrum(SpectrumArgs),
    SemiconjResidual(ResidualArgs),
    SemiconjFiber(FiberArgs),
    LeafTrace(TraceArgs),
    Growth(GrowthArgs),
    Disint(DisintArgs),
    Entropy(EntropyArgs),
    IneqCheck(IneqArgs),
    Pliss(PlissArgs),
    KanValidate(KanArgs),
    KanBasins(BasinArgs),
    KanMeasure(MeasureArgs),
    KanHolonomy(HolonomyArgs),
    KanSingularity(SingularityArgs),
}

const DEFAULT_KAN: (f64, f64) = (0.25, 0.0);

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ModelValidate(_) => "model-validate",
            Experiment::Spectrum(_) => "spectrum",
            Experiment::SemiconjResidual(_) => "semiconj-residual",
            Experiment::SemiconjFiber(_) => "semiconj-fiber",
            Experiment::LeafTrace(_) => "leaf-trace",
            Experiment::Growth(_) => "growth",
            Experiment::Disint(_) => "disint",
            Experiment::Entropy(_) => "entropy",
            Experiment::IneqCheck(_) => "ineq-check",
            Experiment::Pliss(_) => "pliss",
            Experiment::KanValidate(_) => "kan-validate",
            Experiment::KanBasins(_) => "kan-basins",
            Experiment::KanMeasure(_) => "kan-measure",
            Experiment::KanHolonomy(_) => "kan-holonomy",
            Experiment::KanSingularity(_) => "kan-singularity",
        }
    }

    fn kan_args(&mut self) -> Option<&mut KanArgs> {
        match self {
            Experiment::KanValidate(k) => Some(k),
            Experiment::KanBasins(b) => Some(&mut b.kan),
            Experiment::KanMeasure(m) => Some(&mut m.kan),
            Experiment::KanHolonomy(h) => Some(&mut h.kan),
            Experiment::KanSingularity(s) => Some(&mut s.kan),
            _ => None,
        }
    }

    /// Fills Kan parameters from the model block (flags win) and returns the model the
    /// operation actually runs on.
    pub fn resolve(&mut self, model: Option<ModelConfig>) -> ModelConfig {
        match self.kan_args() {
            Some(k) => {
                let (a0, s0) = model.and_then(|m| m.kan_parameters()).unwrap_or(DEFAULT_KAN);
                let a = *k.a.get_or_insert(a0);
                let s = *k.s.get_or_insert(s0);
                ModelConfig::Kan { a, s }
            }
            None => model.unwrap_or_default(),
        }
    }
}

/// One warning: the operation, the affected parameter and, when numeric, its range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub operation: String,
    pub parameter: String,
    pub range: Option<[f64; 2]>,
    pub message: String,
}

/// CSV table with a header row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn cells<T: std::fmt::Display>(v: &[T]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

pub struct Output {
    pub result: Value,
    pub table: Option<Table>,
    pub warnings: Vec<Warning>,
}

struct Ctx<'a> {
    op: &'a str,
    model: &'a ModelConfig,
    seed: u64,
    warnings: Vec<Warning>,
}

impl Ctx<'_> {
    fn warn(&mut self, parameter: &str, range: Option<[f64; 2]>, message: impl Into<String>) {
        self.warnings.push(Warning {
            operation: self.op.to_string(),
            parameter: parameter.to_string(),
            range,
            message: message.into(),
        });
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn point(p: [f64; 3]) -> Result<TorusPoint, CliError> {
    require(p.iter().all(|x| x.is_finite()), || format!("point {p:?} is not finite"))?;
    Ok(TorusPoint::new(p[0], p[1], p[2]))
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    require(x > 0.0 && x.is_finite(), || format!("{name} must be positive, got {x}"))
}

pub fn run(exp: &Experiment, model: &ModelConfig, seed: u64) -> Result<Output, CliError> {
    let mut ctx = Ctx { op: exp.name(), model, seed, warnings: Vec::new() };
    let (result, table) = match exp {
        Experiment::ModelValidate(a) => model_validate(&mut ctx, a)?,
        Experiment::Spectrum(a) => spectrum(&mut ctx, a)?,
        Experiment::SemiconjResidual(a) => semiconj_residual(&mut ctx, a)?,
        Experiment::SemiconjFiber(a) => semiconj_fiber(&mut ctx, a)?,
        Experiment::LeafTrace(a) => leaf_trace(&mut ctx, a)?,
        Experiment::Growth(a) => growth(&mut ctx, a)?,
        Experiment::Disint(a) => disint(&mut ctx, a)?,
        Experiment::Entropy(a) => entropy(&mut ctx, a)?,
        Experiment::IneqCheck(a) => ineq_check(&mut ctx, a)?,
        Experiment::Pliss(a) => pliss(&mut ctx, a)?,
        Experiment::KanValidate(a) => kan_validate(&mut ctx, a)?,
        Experiment::KanBasins(a) => kan_basins(&mut ctx, a)?,
        Experiment::KanMeasure(a) => kan_measure(&mut ctx, a)?,
        Experiment::KanHolonomy(a) => kan_holonomy(&mut ctx, a)?,
        Experiment::KanSingularity(a) => kan_singularity(&mut ctx, a)?,
    };
    Ok(Output { result, table, warnings: ctx.warnings })
}

type OpResult = Result<(Value, Option<Table>), CliError>;

fn log_reference(model: &DAMap) -> [f64; 3] {
    let l = model.base().splitting().eigenvalues;
    [l[2].ln(), l[1].ln(), l[0].ln()]
}

fn model_validate(ctx: &mut Ctx, a: &ValidateArgs) -> OpResult {
    if let Some((ka, ks)) = ctx.model.kan_parameters() {
        return kan_validate(ctx, &KanArgs { a: Some(ka), s: Some(ks) });
    }
    require(a.grid >= 1, || "grid must be at least 1".into())?;
    require(a.apertures.iter().all(|x| *x > 0.0 && *x < std::f64::consts::FRAC_PI_2), || {
        format!("apertures {:?} must lie in (0, pi/2)", a.apertures)
    })?;
    positive("ratio", a.ratio)?;
    let model = ctx.model.torus_map()?;
    let report = centerlab::models::verify_cones(&model, &ConeField { apertures: a.apertures }, a.grid, a.ratio);
    let mut round_trip: f64 = 0.0;
    for p in centerlab::models::grid_points(a.grid) {
        let back = model.inverse(model.evaluate(p))?;
        round_trip = round_trip.max(torus::torus_distance(back, p));
    }
    if !report.cones_invariant() {
        ctx.warn("apertures", None, "cone field is not invariant on the grid");
    }
    if !report.dominated() {
        ctx.warn(
            "ratio",
            Some([0.0, a.ratio]),
            format!("bundle stretch ratios {:?} exceed the domination constant", report.worst_ratios),
        );
    }
    let result = json!({
        "kind": "torus",
        "passed": report.passed(),
        "cones_invariant": report.cones_invariant(),
        "dominated": report.dominated(),
        "diffeomorphism_bound": model.diffeomorphism_bound(),
        "inverse_round_trip": round_trip,
        "report": to_value(&report),
    });
    Ok((result, None))
}

fn spectrum(ctx: &mut Ctx, a: &SpectrumArgs) -> OpResult {
    require(a.starts >= 1, || "starts must be at least 1".into())?;
    require(a.iters >= 2, || "iters must be at least 2".into())?;
    let model = ctx.model.torus_map()?;
    let reports = ergodic::spectrum_batch(&model, a.starts, a.iters, ctx.seed)?;
    let mut table = Table::new(&["start", "exp1", "exp2", "exp3", "halfwidth"]);
    let mut mean = [0.0; 3];
    for (k, r) in reports.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(cells(&r.exponents));
        row.push(r.half_width.to_string());
        table.push(row);
        for i in 0..3 {
            mean[i] += r.exponents[i] / reports.len() as f64;
        }
    }
    let result = json!({
        "mean": mean,
        "reference": log_reference(&model),
        "reports": to_value(&reports),
    });
    Ok((result, Some(table)))
}

fn semiconj_residual(ctx: &mut Ctx, a: &ResidualArgs) -> OpResult {
    require(a.samples >= 1, || "samples must be at least 1".into())?;
    positive("tol", a.tol)?;
    let c = Conjugator::new(ctx.model.torus_map()?, a.tol)?;
    let rep = semiconj::residual_sweep(&c, a.samples, ctx.seed)?;
    if !rep.within_contract() {
        ctx.warn("tol", Some([0.0, a.tol]), format!("max residual {:e} above twice the tail bound", rep.max_residual));
    }
    let mut table = Table::new(&["x", "y", "z", "residual", "offset"]);
    for s in &rep.samples {
        let mut row = cells(&s.point);
        row.push(s.residual.to_string());
        row.push(s.offset.to_string());
        table.push(row);
    }
    let result = json!({
        "depth": rep.depth,
        "tail_bounds": rep.tail_bounds,
        "max_residual": rep.max_residual,
        "max_offset": rep.max_offset,
        "sup_bound": rep.sup_bound,
        "within_contract": rep.within_contract(),
    });
    Ok((result, Some(table)))
}

fn semiconj_fiber(ctx: &mut Ctx, a: &FiberArgs) -> OpResult {
    require(a.delta >= 0.0 && a.delta.is_finite(), || format!("delta {}", a.delta))?;
    positive("tol", a.tol)?;
    positive("len", a.len)?;
    positive("step", a.step)?;
    let c = Conjugator::new(ctx.model.torus_map()?, a.tol)?;
    let mut table = Table::new(&["x", "y", "z", "diameter", "closest"]);
    let mut estimates = Vec::new();
    for z in &a.z {
        match semiconj::fiber_diameter(&c, point(*z)?, a.delta, a.len, a.step) {
            Ok(f) => {
                let mut row = cells(z);
                row.push(f.diameter.to_string());
                row.push(f.closest.to_string());
                table.push(row);
                estimates.push(to_value(&f));
            }
            Err(e @ (ConjugacyError::LeafTooShort { .. } | ConjugacyError::FiberMissed(_))) => {
                ctx.warn("len", Some([0.0, a.len]), format!("target {z:?}: {e}"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let result = json!({ "depth": c.depth(), "tail_bound": c.tail_bound(), "estimates": estimates });
    Ok((result, Some(table)))
}

fn leaf_trace(ctx: &mut Ctx, a: &TraceArgs) -> OpResult {
    positive("len", a.len)?;
    positive("step", a.step)?;
    require(a.bundle != Bundle::Stable, || "leaf trace supports the c and uu bundles".into())?;
    let model = ctx.model.torus_map()?;
    let leaf = foliation::trace_leaf(&model, point(a.at)?.lift(), a.bundle, a.len, a.step)?;
    let mut table = Table::new(&["index", "x", "y", "z", "arclength"]);
    for (k, (p, s)) in leaf.points.iter().zip(&leaf.arclength).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(cells(&p.0));
        row.push(s.to_string());
        table.push(row);
    }
    let result = json!({
        "bundle": a.bundle,
        "points": leaf.len(),
        "arclength": leaf.total_length(),
        "chord_length": leaf.chord_length(),
        "straight": foliation::straight_leaves(&model, a.bundle),
    });
    Ok((result, Some(table)))
}

fn growth(ctx: &mut Ctx, a: &GrowthArgs) -> OpResult {
    require(a.n >= 2, || "n must be at least 2".into())?;
    positive("len", a.len)?;
    positive("step", a.step)?;
    require(a.bundle != Bundle::Stable, || "growth supports the c and uu bundles".into())?;
    let model = ctx.model.torus_map()?;
    let seg = foliation::trace_leaf(&model, point(a.at)?.lift(), a.bundle, a.len, a.step)?;
    let rep = foliation::growth_rate(&model, &seg, a.n)?;
    let reference = model.base().splitting().eigenvalues[a.bundle.index()].ln();
    let backward = match a.bundle {
        Bundle::Center => Some(foliation::backward_center_length(&model, &seg, a.n)?),
        _ => None,
    };
    let mut table = Table::new(&["n", "length", "backward_length"]);
    for (n, l) in rep.lengths.iter().enumerate() {
        let b = backward.as_ref().map_or(String::new(), |b| b.lengths[n].to_string());
        table.push(vec![n.to_string(), l.to_string(), b]);
    }
    let result = json!({
        "bundle": a.bundle,
        "rate": rep.rate,
        "reference": reference,
        "excess": rep.rate - reference,
        "lengths": rep.lengths,
        "backward": backward,
    });
    Ok((result, Some(table)))
}

fn sampler(ctx: &Ctx, s: &BoxArgs) -> Result<Sampler, CliError> {
    Ok(match s.sampler {
        SamplerKind::Volume => Sampler::Volume,
        SamplerKind::Orbit => Sampler::Orbit { burn_in: s.burn_in },
        SamplerKind::Delta => {
            let p = s.point.ok_or_else(|| CliError::Config(format!("{}: the delta sampler needs --point", ctx.op)))?;
            point(p)?;
            Sampler::Delta { point: p }
        }
    })
}

fn check_box(s: &BoxArgs) -> Result<(), CliError> {
    point(s.center)?;
    positive("radius", s.radius)?;
    positive("half_length", s.half_length)?;
    require(s.radius < 0.5 && s.half_length < 0.5, || "radius and half_length must stay below 1/2".into())?;
    require(s.samples >= 1, || "samples must be at least 1".into())
}

fn setup(ctx: &Ctx, s: &BoxArgs, bins: (usize, usize), cfg: EntropyConfig) -> Result<EntropySetup, CliError> {
    check_box(s)?;
    require(bins.0 >= 1 && bins.1 >= 1, || format!("bins {}x{}", bins.0, bins.1))?;
    Ok(EntropySetup {
        center: s.center,
        radius: s.radius,
        half_length: s.half_length,
        transversal_bins: bins.0,
        leaf_bins: bins.1,
        sampler: sampler(ctx, s)?,
        samples: s.samples,
        floor: s.floor,
        config: cfg,
    })
}

fn disint(ctx: &mut Ctx, a: &DisintArgs) -> OpResult {
    let model = ctx.model.torus_map()?;
    let st = setup(ctx, &a.sampling, a.bins, EntropyConfig::default())?;
    match a.foliation.bundle() {
        Some(bundle) => {
            let bx = disintegration::line_box(&model, bundle, &st)?;
            let bins = Bins::new(st.transversal_bins, st.leaf_bins);
            let profile = disintegration::disintegrate(&bx, &st.sampler, st.samples, bins, ctx.seed, st.floor)?;
            let diag = disintegration::atomicity(&profile, &AtomicityThresholds::default());
            let thin = profile.marginal.iter().filter(|&&c| c < profile.floor).count();
            if thin > 0 {
                ctx.warn(
                    "samples",
                    None,
                    format!("{thin} of {} plaque bins below the floor of {}", profile.marginal.len(), profile.floor),
                );
            }
            let mut table = Table::new(&["plaque", "leaf_bin", "count"]);
            for (k, c) in profile.joint.iter().enumerate() {
                table.push(vec![(k / bins.leaf).to_string(), (k % bins.leaf).to_string(), c.to_string()]);
            }
            let result = json!({
                "foliation": a.foliation,
                "profile": to_value(&profile),
                "rokhlin_identity": profile.rokhlin_identity(),
                "uniformity_fraction": profile.uniformity_fraction(),
                "atomicity": to_value(&diag),
            });
            Ok((result, Some(table)))
        }
        None => {
            let c = st.center;
            let slab = disintegration::PlaneSlab::new(&model, TorusPoint::new(c[0], c[1], c[2]), st.radius, st.half_length)?;
            let profile =
                disintegration::disintegrate_plane(&slab, &st.sampler, st.samples, st.transversal_bins, ctx.seed, st.floor)?;
            let mut table = Table::new(&["bin", "count"]);
            for (k, c) in profile.counts.iter().enumerate() {
                table.push(vec![k.to_string(), c.to_string()]);
            }
            Ok((json!({ "foliation": a.foliation, "profile": to_value(&profile) }), Some(table)))
        }
    }
}

fn entropy_config(ctx: &Ctx, eps: &[f64], nmax: usize, base_points: usize) -> Result<EntropyConfig, CliError> {
    require(!eps.is_empty() && eps.iter().all(|e| *e > 0.0 && *e < 0.5), || format!("eps {eps:?} must lie in (0, 1/2)"))?;
    require(nmax >= 1, || "nmax must be at least 1".into())?;
    require(base_points >= 2, || "base_points must be at least 2".into())?;
    Ok(EntropyConfig { eps: eps.to_vec(), n_max: nmax, base_points, seed: ctx.seed, ..EntropyConfig::default() })
}

fn warn_scales(ctx: &mut Ctx, est: &EntropyEstimate) {
    for s in est.scales.iter().filter(|s| !s.valid) {
        ctx.warn(
            "eps",
            Some([s.eps, s.eps]),
            format!("{:?} scale rejected: {} base points, fit residual {}", est.foliation, s.base_points, s.residual),
        );
    }
    if !est.valid {
        ctx.warn("eps", None, format!("{:?} estimate has fewer than two valid scales", est.foliation));
    }
}

fn scale_table(est: &[&EntropyEstimate]) -> Table {
    let mut table = Table::new(&["foliation", "eps", "slope", "half_width", "base_points", "mean_points", "residual", "valid"]);
    for e in est {
        let name = serde_json::to_value(e.foliation).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        for s in &e.scales {
            table.push(vec![
                name.clone(),
                s.eps.to_string(),
                s.slope.to_string(),
                s.half_width.to_string(),
                s.base_points.to_string(),
                s.mean_points.to_string(),
                s.residual.to_string(),
                s.valid.to_string(),
            ]);
        }
    }
    table
}

fn entropy(ctx: &mut Ctx, a: &EntropyArgs) -> OpResult {
    let model = ctx.model.torus_map()?;
    let cfg = entropy_config(ctx, &a.eps, a.nmax, a.base_points)?;
    let st = setup(ctx, &a.sampling, a.bins, cfg)?;
    let est = disintegration::partial_entropy(&model, a.bundle, &st)?;
    warn_scales(ctx, &est);
    let reference = match a.bundle {
        Foliation::Center => model.base().splitting().eigenvalues[1].ln(),
        Foliation::StrongUnstable => model.base().splitting().eigenvalues[2].ln(),
        Foliation::Unstable => model.base().splitting().eigenvalues[1..].iter().map(|l| l.ln()).sum(),
    };
    let table = scale_table(&[&est]);
    Ok((json!({ "estimate": to_value(&est), "linear_reference": reference }), Some(table)))
}

fn ineq_check(ctx: &mut Ctx, a: &IneqArgs) -> OpResult {
    require(a.iters >= 2, || "iters must be at least 2".into())?;
    let model = ctx.model.torus_map()?;
    let cfg = entropy_config(ctx, &a.eps, a.nmax, a.base_points)?;
    let st = setup(ctx, &a.sampling, (32, 64), cfg)?;
    let u = disintegration::partial_entropy(&model, Foliation::Unstable, &st)?;
    let wu = disintegration::partial_entropy(&model, Foliation::Center, &st)?;
    warn_scales(ctx, &u);
    warn_scales(ctx, &wu);
    let ex = ergodic::lyapunov_spectrum(&model, point(a.at)?, a.iters, ctx.seed)?;
    let check = disintegration::entropy_inequality_check(&u, &wu, &ex);
    if check.holds.is_none() {
        ctx.warn("samples", None, "estimates too weak for a verdict");
    }
    let table = scale_table(&[&u, &wu]);
    let result = json!({
        "check": to_value(&check),
        "unstable": to_value(&u),
        "center": to_value(&wu),
        "exponents": to_value(&ex),
    });
    Ok((result, Some(table)))
}

fn read_series(path: &PathBuf, column: Option<&str>) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Config(e.to_string()))?.clone();
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("no column {name:?} in {}", path.display())))?,
        None => headers.len().checked_sub(1).ok_or_else(|| CliError::Config("empty header".into()))?,
    };
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(e.to_string()))?;
        let field = rec.get(col).unwrap_or("");
        let x: f64 = field
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("row {}: {field:?} is not a number", line + 1)))?;
        out.push(x);
    }
    Ok(out)
}

fn pliss(ctx: &mut Ctx, a: &PlissArgs) -> OpResult {
    let (series, source) = match &a.input {
        Some(path) => (read_series(path, a.column.as_deref())?, "input"),
        None => {
            require(a.iters >= 2, || "iters must be at least 2".into())?;
            let model = ctx.model.torus_map()?;
            (ergodic::center_exponent(&model, point(a.at)?, a.iters)?.series, "center-derivative")
        }
    };
    require(!series.is_empty(), || "empty series".into())?;
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let tau = a.tau.unwrap_or(mean + a.eps);
    require(tau.is_finite(), || format!("threshold {tau}"))?;
    let rep = ergodic::pliss_blocks(&series, tau);
    if !rep.censored.is_empty() {
        ctx.warn(
            "tau",
            Some([tau, tau]),
            format!("{} Pliss times in the last {} positions are checked on few terms", rep.censored.len(), rep.censor_window),
        );
    }
    let mut flags = vec![(false, false); series.len()];
    for &i in &rep.indices {
        flags[i].0 = true;
    }
    for &i in &rep.censored {
        flags[i].1 = true;
    }
    let mut table = Table::new(&["index", "value", "pliss", "censored"]);
    for (k, (x, f)) in series.iter().zip(&flags).enumerate() {
        table.push(vec![k.to_string(), x.to_string(), u8::from(f.0).to_string(), u8::from(f.1).to_string()]);
    }
    let result = json!({
        "source": source,
        "mean": mean,
        "threshold": rep.threshold,
        "len": rep.len,
        "count": rep.indices.len(),
        "density": rep.density,
        "censor_window": rep.censor_window,
        "censored": rep.censored.len(),
    });
    Ok((result, Some(table)))
}

fn kan_of(k: &KanArgs) -> Result<centerlab::kan::KanMap, CliError> {
    let (a, s) = (k.a.unwrap_or(DEFAULT_KAN.0), k.s.unwrap_or(DEFAULT_KAN.1));
    validated_kan(a, s)
}

fn kan_validate(_ctx: &mut Ctx, k: &KanArgs) -> OpResult {
    let m = kan_of(k)?;
    let rep = kan::kan_check(&m);
    let mut table = Table::new(&["index", "name", "value", "margin", "passed"]);
    for c in &rep.checks {
        table.push(vec![c.index.to_string(), c.name.clone(), c.value.to_string(), c.margin.to_string(), c.passed.to_string()]);
    }
    let result = json!({
        "passed": rep.passed(),
        "report": to_value(&rep),
        "derivative_p0": m.derivative(0.0, 0.0),
        "derivative_p1": m.derivative(0.5, 1.0),
    });
    Ok((result, Some(table)))
}

fn kan_basins(ctx: &mut Ctx, a: &BasinArgs) -> OpResult {
    let m = kan_of(&a.kan)?;
    require(a.grid >= 1 && a.samples_per_cell >= 1, || "grid and samples_per_cell must be positive".into())?;
    let rep = kan::basin_classify(&m, a.grid, a.samples_per_cell, a.horizon, a.trap, ctx.seed)?;
    if rep.unresolved_fraction > 0.0 {
        ctx.warn(
            "horizon",
            Some([0.0, a.horizon as f64]),
            format!("{} of the samples unresolved", rep.unresolved_fraction),
        );
    }
    // Rows: fiber coordinate t; columns: base angle theta; entries: top-basin fraction.
    let mut header = vec!["row".to_string()];
    header.extend((0..a.grid).map(|c| format!("c{c}")));
    let mut table = Table { header, rows: Vec::new() };
    for row in 0..a.grid {
        let mut r = vec![row.to_string()];
        for col in 0..a.grid {
            let c = rep.counts[row * a.grid + col];
            let resolved = c[0] + c[1];
            r.push(if resolved == 0 { "NaN".into() } else { (c[1] as f64 / resolved as f64).to_string() });
        }
        table.push(r);
    }
    Ok((to_value(&rep), Some(table)))
}

fn kan_measure(ctx: &mut Ctx, a: &MeasureArgs) -> OpResult {
    let m = kan_of(&a.kan)?;
    require(a.boundary <= 1, || format!("boundary {} (expected 0 or 1)", a.boundary))?;
    require(a.cells >= 1, || "cells must be positive".into())?;
    let method = match a.method {
        MethodKind::Ulam => {
            require(a.per_cell >= 1, || "per_cell must be positive".into())?;
            MeasureMethod::Ulam { cells: a.cells, per_cell: a.per_cell }
        }
        MethodKind::Orbit => {
            require(a.samples >= 1, || "samples must be positive".into())?;
            MeasureMethod::Orbit { cells: a.cells, samples: a.samples, burn_in: a.burn_in, seed: ctx.seed }
        }
    };
    let bm = kan::boundary_measure(&m, a.boundary, &method)?;
    let mut table = Table::new(&["cell", "left", "mass", "density"]);
    for (k, (mass, d)) in bm.masses.iter().zip(bm.density()).enumerate() {
        table.push(vec![k.to_string(), (k as f64 / a.cells as f64).to_string(), mass.to_string(), d.to_string()]);
    }
    let result = json!({
        "boundary": bm.boundary,
        "method": to_value(&method),
        "transverse_exponent": bm.transverse_exponent,
        "iterations": bm.iterations,
        "closed_form": kan::boundary_integral_closed_form(m.a()),
    });
    Ok((result, Some(table)))
}

fn kan_holonomy(ctx: &mut Ctx, a: &HolonomyArgs) -> OpResult {
    let m = kan_of(&a.kan)?;
    require(a.nodes >= 2 && a.depth >= 1, || "nodes must be at least 2 and depth at least 1".into())?;
    let h = kan::center_holonomy(&m, &kan::uniform_grid(a.nodes), a.depth)?;
    if !h.strictly_increasing() {
        ctx.warn("depth", Some([a.depth as f64, a.depth as f64]), "holonomy is not strictly increasing on the grid");
    }
    let mut table = Table::new(&["theta", "image", "residual", "conjugacy_residual"]);
    for k in 0..h.theta.len() {
        table.push(vec![
            h.theta[k].to_string(),
            h.image[k].to_string(),
            h.residuals[k].to_string(),
            h.conjugacy_residuals[k].to_string(),
        ]);
    }
    let result = json!({
        "depth": h.depth,
        "nodes": h.theta.len(),
        "strictly_increasing": h.strictly_increasing(),
        "max_residual": h.max_residual(),
        "max_conjugacy_residual": h.max_conjugacy_residual(),
        "depth_residuals": h.depth_residuals,
        "rate": h.rate,
        "rate_bound": h.rate_bound,
    });
    Ok((result, Some(table)))
}

fn kan_singularity(ctx: &mut Ctx, a: &SingularityArgs) -> OpResult {
    let m = kan_of(&a.kan)?;
    let cfg = SingularityConfig { samples: a.samples, blocks: a.blocks, depth: a.depth, burn_in: a.burn_in, seed: ctx.seed };
    let rep = kan::singularity_test(&m, &cfg)?;
    let result = json!({
        "report": to_value(&rep),
        "hypothesis_closed_form": kan::hypothesis_closed_form(m.s()),
    });
    Ok((result, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_and_bins_parse() {
        assert_eq!(parse_point("0.1, 0.2,0.3").unwrap(), [0.1, 0.2, 0.3]);
        assert!(parse_point("1,2").is_err());
        assert_eq!(parse_bins("32x64").unwrap(), (32, 64));
        assert!(parse_bins("32").is_err());
    }

    #[test]
    fn defaults_match_flags() {
        let e: Experiment = serde_json::from_str(r#"{"op": "spectrum"}"#).unwrap();
        assert_eq!(e, Experiment::Spectrum(SpectrumArgs { starts: 8, iters: 100_000 }));
        let d: Experiment = serde_json::from_str(r#"{"op": "disint", "bins": [4, 8], "sampler": "orbit"}"#).unwrap();
        let Experiment::Disint(d) = d else { panic!() };
        assert_eq!(d.bins, (4, 8));
        assert_eq!(d.sampling.sampler, SamplerKind::Orbit);
        assert_eq!(d.sampling.samples, 1_000_000);
    }

    #[test]
    fn kan_flags_override_model_block() {
        let mut e = Experiment::KanValidate(KanArgs { a: None, s: Some(0.1) });
        let m = e.resolve(Some(ModelConfig::Kan { a: 0.125, s: 0.0 }));
        assert_eq!(m, ModelConfig::Kan { a: 0.125, s: 0.1 });
    }
}
