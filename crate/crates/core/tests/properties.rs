use centerlab::disintegration::{self, Bins, EntropySetup, Sampler};
use centerlab::ergodic;
use centerlab::kan::{self, KanMap};
use centerlab::models::{Bundle, DAMap};
use centerlab::rng;
use centerlab::semiconj::Conjugator;
use centerlab::torus::{self, IntegerAutomorphism, LiftPoint, TorusPoint};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..1.0f64
}

fn pliss_brute(a: &[f64], tau: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&n0| {
            let mut s = 0.0;
            (n0..a.len()).all(|j| {
                s += a[j];
                s / ((j - n0 + 1) as f64) < tau
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrap_lands_in_unit_cube(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
        let p = torus::wrap(LiftPoint::new(x, y, z));
        prop_assert!(p.coords().iter().all(|c| (0.0..1.0).contains(c)));
    }

    #[test]
    fn da_inverse_round_trip(s in -0.12..0.12f64, x in unit(), y in unit(), z in unit()) {
        let f = DAMap::reference_with_amplitude(s);
        let p = TorusPoint::new(x, y, z);
        let back = f.inverse(f.evaluate(p)).unwrap();
        prop_assert!(torus::torus_distance(back, p) < 1e-12);
    }

    #[test]
    fn jacobian_is_positive(s in -0.12..0.12f64, x in unit(), y in unit(), z in unit()) {
        let f = DAMap::reference_with_amplitude(s);
        prop_assert!(f.jacobian([x, y, z]) > 0.0);
    }

    #[test]
    fn semiconjugacy_residual_within_tail(s in -0.1..0.1f64, x in unit(), y in unit(), z in unit()) {
        let c = Conjugator::new(DAMap::reference_with_amplitude(s), 1e-9).unwrap();
        let r = c.residual(TorusPoint::new(x, y, z)).unwrap();
        prop_assert!(r <= 2.0 * c.tail_bound() + 1e-12, "residual {} tail {}", r, c.tail_bound());
        prop_assert!(c.u(TorusPoint::new(x, y, z)).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt() <= c.sup_bound());
    }

    #[test]
    fn pliss_matches_definition(a in prop::collection::vec(-3.0..3.0f64, 0..40), tau in -1.0..1.0f64) {
        let r = ergodic::pliss_blocks(&a, tau);
        prop_assert_eq!(&r.indices, &pliss_brute(&a, tau));
        prop_assert!(r.censored.iter().all(|i| r.indices.contains(i)));
    }

    #[test]
    fn bins_factor_exactly(t in 1usize..200, l in 1usize..10) {
        let b = Bins::new(t, l);
        prop_assert_eq!(b.plaques(), t);
        prop_assert!(b.transversal[0] <= b.transversal[1]);
    }

    #[test]
    fn rng_streams_reproducible(seed in any::<u64>(), task in any::<u64>()) {
        use rand::Rng;
        let a: [u64; 4] = rng::stream(seed, task).gen();
        let b: [u64; 4] = rng::stream(seed, task).gen();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rokhlin_identity_on_every_profile(seed in any::<u64>(), t in 1usize..20, l in 1usize..40, orbit in any::<bool>()) {
        let model = DAMap::reference();
        let setup = EntropySetup::default();
        let bx = disintegration::line_box(&model, Bundle::Center, &setup).unwrap();
        let sampler = if orbit { Sampler::Orbit { burn_in: 10 } } else { Sampler::Volume };
        let p = disintegration::disintegrate(&bx, &sampler, 20_000, Bins::new(t, l), seed, 1).unwrap();
        prop_assert!(p.rokhlin_identity());
        prop_assert_eq!(p.marginal.iter().sum::<u64>(), p.accepted);
        prop_assert_eq!(p.joint.iter().sum::<u64>(), p.accepted);
    }

    #[test]
    fn holonomy_monotone_and_conjugating(a in 0.05..0.5f64, s in -0.3..0.3f64) {
        let m = KanMap::new(a, s).unwrap();
        let h = kan::center_holonomy(&m, &kan::uniform_grid(64), 20).unwrap();
        prop_assert!(h.strictly_increasing());
        prop_assert!(h.max_conjugacy_residual() < 1e-8);
    }

    #[test]
    fn linear_leaves_are_invariant(x in unit(), y in unit(), z in unit()) {
        let f = DAMap::linear(IntegerAutomorphism::reference());
        let d = centerlab::foliation::leaf_invariance_defect(&f, TorusPoint::new(x, y, z), Bundle::Center, 0.2, 0.02).unwrap();
        prop_assert!(d < 1e-12);
    }
}
