//! Acceptance suite: one PASS/FAIL line per criterion. Criterion 12 is a property
//! report and prints REPORT.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use centerlab::disintegration::{self, Bins, EntropySetup, Foliation, Sampler};
use centerlab::ergodic;
use centerlab::foliation;
use centerlab::kan::{self, KanMap, SingularityConfig};
use centerlab::models::{Bundle, DAMap};
use centerlab::semiconj::{self, Conjugator};
use centerlab::torus::{self, IntegerAutomorphism, TorusPoint};

const A_REF: [[i64; 3]; 3] = [[1, -1, 0], [-1, 2, -1], [0, -1, 2]];
const LOG_LAMBDA: [f64; 3] = [1.17777, 0.44147, -1.61924];

enum Outcome {
    Pass(String),
    Fail(String),
    Report(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn linear() -> DAMap {
    DAMap::linear(IntegerAutomorphism::reference())
}

fn cubic(l: f64) -> f64 {
    ((l - 5.0) * l + 6.0) * l - 1.0
}

fn bisect(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        if cubic(a) * cubic(c) <= 0.0 {
            b = c;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn c1_spectrum() -> Outcome {
    let oracle = [bisect(0.0, 0.5), bisect(1.0, 2.0), bisect(3.0, 4.0)];
    let t = Instant::now();
    let split = torus::spectral_split(&A_REF).expect("A_ref splits");
    let elapsed = t.elapsed();
    let err = (0..3).map(|i| (split.eigenvalues[i] - oracle[i]).abs()).fold(0.0, f64::max);
    verdict(
        err <= 1e-10 && elapsed < Duration::from_millis(1),
        format!("eigenvalues {:?}, max error {err:.1e}, {:.3} ms", split.eigenvalues, ms(elapsed)),
    )
}

fn c2_lyapunov() -> Outcome {
    let r = ergodic::lyapunov_spectrum(&linear(), TorusPoint::new(0.1234, 0.5678, 0.9012), 100_000, 0).unwrap();
    let err = (0..3).map(|i| (r.exponents[i] - LOG_LAMBDA[i]).abs()).fold(0.0, f64::max);
    verdict(
        err <= 1e-3 && r.sum().abs() <= 1e-3,
        format!("exponents {:?}, max error {err:.1e}, sum {:.1e}", r.exponents, r.sum()),
    )
}

fn c3_semiconjugacy() -> Outcome {
    let t = Instant::now();
    let c = Conjugator::new(DAMap::reference(), 1e-8).unwrap();
    let rep = semiconj::residual_sweep(&c, 10_000, 0).unwrap();
    let id = Conjugator::new(DAMap::reference_with_amplitude(0.0), 1e-8).unwrap();
    let mut r = centerlab::rng::stream(0, 1);
    let exact = (0..1000).all(|_| {
        use rand::Rng;
        let p = TorusPoint::new(r.gen(), r.gen(), r.gen());
        id.phi(p).unwrap() == p
    });
    let elapsed = t.elapsed();
    verdict(
        rep.max_residual <= 1e-6 && exact && elapsed < Duration::from_secs(30),
        format!(
            "depth {}, tail {:.2e}, max residual {:.2e}, s = 0 identity {exact}, {:.2} s",
            rep.depth,
            c.tail_bound(),
            rep.max_residual,
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_entropy_linear() -> Outcome {
    let t = Instant::now();
    let setup = EntropySetup::default();
    let c = disintegration::partial_entropy(&linear(), Foliation::Center, &setup).unwrap();
    let uu = disintegration::partial_entropy(&linear(), Foliation::StrongUnstable, &setup).unwrap();
    let elapsed = t.elapsed();
    let rel = |h: f64, l: f64| (h - l).abs() / l;
    let (ec, eu) = (rel(c.estimate, LOG_LAMBDA[1]), rel(uu.estimate, LOG_LAMBDA[0]));
    verdict(
        c.valid && uu.valid && ec <= 0.05 && eu <= 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "h(F^c) = {:.5} ± {:.5} ({:.2}%), h(F^uu) = {:.5} ± {:.5} ({:.2}%), {:.1} s",
            c.estimate,
            c.half_width,
            100.0 * ec,
            uu.estimate,
            uu.half_width,
            100.0 * eu,
            elapsed.as_secs_f64()
        ),
    )
}

fn inequality(model: &DAMap, setup_u: &EntropySetup, setup_c: &EntropySetup) -> disintegration::InequalityCheck {
    let u = disintegration::partial_entropy(model, Foliation::Unstable, setup_u).unwrap();
    let wu = disintegration::partial_entropy(model, Foliation::Center, setup_c).unwrap();
    let ex = ergodic::lyapunov_spectrum(model, TorusPoint::new(0.1234, 0.5678, 0.9012), 100_000, 0).unwrap();
    disintegration::entropy_inequality_check(&u, &wu, &ex)
}

fn c5_inequality() -> Outcome {
    let t = Instant::now();
    let lin = inequality(&linear(), &EntropySetup::default(), &EntropySetup::default());
    let orbit = |samples| EntropySetup { sampler: Sampler::orbit(), samples, ..EntropySetup::default() };
    let da = inequality(&DAMap::reference(), &orbit(4_000_000), &orbit(1_000_000));
    let lin_ok = lin.half_width.is_finite() && lin.margin.abs() <= lin.half_width;
    let da_ok = da.holds == Some(true);
    verdict(
        lin_ok && da_ok,
        format!(
            "linear margin {:.4} (hw {:.4}); DA margin {:.4} (hw {:.4}, h_u {:.4}, h_wu {:.4}); {:.1} s",
            lin.margin,
            lin.half_width,
            da.margin,
            da.half_width,
            da.h_u,
            da.h_wu,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c6_growth() -> Outcome {
    let lin = linear();
    let l = lin.base().splitting().eigenvalues;
    let mut lin_err: f64 = 0.0;
    for (bundle, k) in [(Bundle::Unstable, 2), (Bundle::Center, 1)] {
        let seg = foliation::trace_leaf(&lin, TorusPoint::new(0.3, 0.6, 0.2).lift(), bundle, 0.05, 0.005).unwrap();
        let g = foliation::growth_rate(&lin, &seg, 25).unwrap();
        lin_err = lin_err.max((g.rate - l[k].ln()).abs());
    }
    let da = DAMap::reference();
    let mut r = centerlab::rng::stream(0, 6);
    let (mut g_uu, mut g_c) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..8 {
        use rand::Rng;
        let p = TorusPoint::new(r.gen(), r.gen(), r.gen()).lift();
        let su = foliation::trace_leaf(&da, p, Bundle::Unstable, 0.05, 0.005).unwrap();
        g_uu = g_uu.max(foliation::growth_rate(&da, &su, 25).unwrap().rate);
        let sc = foliation::trace_leaf(&da, p, Bundle::Center, 0.05, 0.005).unwrap();
        g_c = g_c.max(foliation::growth_rate(&da, &sc, 25).unwrap().rate);
    }
    verdict(
        lin_err <= 1e-6 && g_uu <= l[2].ln() + 0.02 && g_c <= l[1].ln() + 0.02,
        format!(
            "linear error {lin_err:.1e}; DA max G(uu) {g_uu:.5} vs {:.5}, max G(c) {g_c:.5} vs {:.5}",
            l[2].ln() + 0.02,
            l[1].ln() + 0.02
        ),
    )
}

fn c7_pliss() -> Outcome {
    let t = Instant::now();
    let mut seq = [0.0f64; 12];
    let mut mismatches = 0usize;
    for code in 0..3usize.pow(12) {
        let mut c = code;
        for x in seq.iter_mut() {
            *x = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let brute: Vec<usize> = (0..12)
            .filter(|&n0| {
                let mut s = 0.0;
                (n0..12).all(|j| {
                    s += seq[j];
                    s / ((j - n0 + 1) as f64) < 0.5
                })
            })
            .collect();
        if ergodic::pliss_blocks(&seq, 0.5).indices != brute {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("531441 sequences, {mismatches} mismatches, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn c8_disintegration() -> Outcome {
    let setup = EntropySetup::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for bundle in [Bundle::Center, Bundle::Unstable] {
        let bx = disintegration::line_box(&linear(), bundle, &setup).unwrap();
        let p = disintegration::disintegrate(&bx, &Sampler::Volume, 1_000_000, Bins::new(32, 64), 0, 100).unwrap();
        let u = p.uniformity_fraction();
        ok &= p.rokhlin_identity() && u >= 0.99;
        parts.push(format!("{bundle:?}: identity {}, uniform fraction {u:.4}", p.rokhlin_identity()));
    }
    let bx = disintegration::line_box(&DAMap::reference(), Bundle::Center, &setup).unwrap();
    let p = disintegration::disintegrate(&bx, &Sampler::orbit(), 200_000, Bins::new(32, 64), 0, 100).unwrap();
    ok &= p.rokhlin_identity();
    parts.push(format!("DA orbit identity {}", p.rokhlin_identity()));
    verdict(ok, parts.join("; "))
}

fn c9_kan_validation() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, s) in [(1.0 / 32.0, 0.0), (0.25, 0.0), (0.25, 0.1)] {
        match kan::kan_validate(&KanMap::new(a, s).unwrap()) {
            Ok(r) => {
                ok &= r.quadrature_error <= 1e-10;
                parts.push(format!("({a}, {s}): q = {:.6e}, err {:.1e}", r.quadrature[1], r.quadrature_error));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("({a}, {s}): {e}"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn c10_holonomy() -> Outcome {
    let grid = kan::uniform_grid(512);
    let id = kan::center_holonomy(&KanMap::new(0.25, 0.0).unwrap(), &grid, 25).unwrap();
    let id_err = id.theta.iter().zip(&id.image).map(|(t, p)| (t - p).abs()).fold(0.0, f64::max);
    let h = kan::center_holonomy(&KanMap::new(0.25, 0.1).unwrap(), &grid, 25).unwrap();
    verdict(
        id_err <= 1e-12 && h.max_conjugacy_residual() <= 1e-6 && h.strictly_increasing(),
        format!(
            "s = 0 max |pi - id| {id_err:.1e}; s = 0.1 conjugacy residual {:.1e}, monotone {}",
            h.max_conjugacy_residual(),
            h.strictly_increasing()
        ),
    )
}

fn c11_singularity() -> Outcome {
    let t = Instant::now();
    let cfg = SingularityConfig::default();
    let r0 = kan::singularity_test(&KanMap::new(0.25, 0.0).unwrap(), &cfg).unwrap();
    let r1 = kan::singularity_test(&KanMap::new(0.25, 0.1).unwrap(), &cfg).unwrap();
    let elapsed = t.elapsed();
    let null_ok = r0.delta.abs() <= 3.0 * r0.standard_error;
    let sig_ok = r1.delta.abs() > 3.0 * r1.standard_error;
    let hyp_ok = (r1.hypothesis - TAU * 0.1).abs() <= 1e-12;
    verdict(
        null_ok && sig_ok && hyp_ok && elapsed < Duration::from_secs(300),
        format!(
            "s = 0: delta {:.2e} (se {:.1e}); s = 0.1: delta {:.4} (se {:.1e}, z {:.0}); hypothesis {:.16}; {:.1} s",
            r0.delta,
            r0.standard_error,
            r1.delta,
            r1.standard_error,
            r1.z,
            r1.hypothesis,
            elapsed.as_secs_f64()
        ),
    )
}

fn c12_basins() -> Outcome {
    let r = kan::basin_classify(&KanMap::new(0.25, 0.0).unwrap(), 32, 4, 100_000, 0.02, 0).unwrap();
    let sym = r.symmetry.as_ref().expect("s = 0 has the involution");
    Outcome::Report(format!(
        "both-basins cell fraction {:.3}, unresolved {:.4}, symmetry sign_z {:.2}, cell_z {:.2}, within noise {}",
        r.both_fraction, r.unresolved_fraction, sym.sign_z, sym.cell_z, sym.passed
    ))
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap().install(f)
}

fn c13_determinism() -> Outcome {
    let run = || {
        let da = DAMap::reference();
        let setup = EntropySetup { sampler: Sampler::orbit(), samples: 300_000, ..EntropySetup::default() };
        let e = disintegration::partial_entropy(&da, Foliation::Center, &setup).unwrap();
        let bx = disintegration::line_box(&da, Bundle::Unstable, &setup).unwrap();
        let p = disintegration::disintegrate(&bx, &Sampler::Volume, 20_000, Bins::new(8, 16), 3, 10).unwrap();
        let s = ergodic::spectrum_batch(&da, 4, 5_000, 9).unwrap();
        let b = kan::basin_classify(&KanMap::new(0.25, 0.1).unwrap(), 8, 2, 2_000, 0.02, 5).unwrap();
        serde_json::to_string(&(e, p, s, b)).unwrap()
    };
    let outputs: Vec<String> = [1, 2, 1, 3].into_iter().map(|w| in_pool(w, run)).collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(same, format!("4 runs at 1, 2, 1, 3 workers, {} bytes each, identical {same}", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("spectrum", c1_spectrum),
        ("lyapunov", c2_lyapunov),
        ("semiconjugacy", c3_semiconjugacy),
        ("partial entropy (linear)", c4_entropy_linear),
        ("entropy inequality", c5_inequality),
        ("growth-rate bounds", c6_growth),
        ("pliss", c7_pliss),
        ("disintegration identity", c8_disintegration),
        ("kan validation", c9_kan_validation),
        ("kan holonomy", c10_holonomy),
        ("singularity signature", c11_singularity),
        ("basin intermingling", c12_basins),
        ("determinism", c13_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|q| name.contains(q.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Report(d) => ("REPORT", d),
        };
        println!("criterion {:>2} [{tag}] {name}: {detail} [{secs:.1} s]", k + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
