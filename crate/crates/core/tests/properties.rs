use proptest::prelude::*;

use nlwave::linalg::{dot, norm2};
use nlwave::monitors::energy_decay_line;
use nlwave::monitors::Verdict;
use nlwave::stepper::{InitialGuess, SchemeConfig, SchemeState};
use nlwave::{build_space, run, Field, NFunctionSpec, SourceSampler, SpaceHandle, SpaceKind, Stepper};

fn space_strategy() -> impl Strategy<Value = SpaceKind> {
    prop_oneof![
        (2usize..24).prop_map(|cells| SpaceKind::FemP1_1D { cells }),
        (2usize..7, 2usize..7).prop_map(|(nx, ny)| SpaceKind::FemP1_2D { nx, ny }),
        (1usize..10).prop_map(|modes| SpaceKind::Spectral1D { modes }),
    ]
}

fn spec_for(idx: usize, dim: usize) -> NFunctionSpec {
    match (idx, dim) {
        (0, _) => NFunctionSpec::power(2.0, dim).unwrap(),
        (1, _) => NFunctionSpec::power(3.0, dim).unwrap(),
        (2, _) => NFunctionSpec::power(4.0, dim).unwrap(),
        (3, 1) => NFunctionSpec::quad_form(1, &[0.7]).unwrap(),
        (3, _) => NFunctionSpec::quad_form(2, &[2.0, -1.0, -1.0, 2.0]).unwrap(),
        _ => NFunctionSpec::exp(dim).unwrap(),
    }
}

fn coeffs(space: &SpaceHandle, raw: &[f64], scale: f64) -> Vec<f64> {
    (0..space.ndofs()).map(|i| scale * raw[i % raw.len()] * (1.0 + 0.1 * i as f64).recip()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_and_stiffness_symmetric_positive(kind in space_strategy(), raw in prop::collection::vec(-1.0f64..1.0, 8)) {
        let space = build_space(kind).unwrap();
        let x = coeffs(&space, &raw, 1.0);
        prop_assume!(norm2(&x) > 1e-6);
        for m in [space.assemble_mass(), space.assemble_stiffness()] {
            let d = m.to_dense();
            for (i, row) in d.iter().enumerate() {
                for (j, &a) in row.iter().enumerate() {
                    prop_assert!((a - d[j][i]).abs() <= 1e-14 * (1.0 + a.abs()));
                }
            }
            prop_assert!(m.quad_form(&x) > 0.0);
        }
    }

    #[test]
    fn residual_is_gradient_of_discrete_potential(
        kind in space_strategy(),
        idx in 0usize..5,
        ru in prop::collection::vec(-1.0f64..1.0, 8),
        rw in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let space = build_space(kind).unwrap();
        let spec = spec_for(idx, space.dim());
        let u = coeffs(&space, &ru, 0.4);
        let w = coeffs(&space, &rw, 0.4);
        let exact = dot(&w, &space.nonlinear_residual(&spec, &u).unwrap());
        let fd = |e: f64| {
            let up: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + e * b).collect();
            let um: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - e * b).collect();
            (space.potential(&spec, &up).unwrap() - space.potential(&spec, &um).unwrap()) / (2.0 * e)
        };
        let (e1, e2) = ((fd(1e-2) - exact).abs(), (fd(5e-3) - exact).abs());
        let scale = 1.0 + exact.abs();
        // Second order: halving ε divides the error by ~4, unless it is already at roundoff.
        prop_assert!(e2 <= 1e-9 * scale || e2 <= 0.3 * e1, "{e1:e} {e2:e}");
    }

    #[test]
    fn discrete_monotonicity(
        kind in space_strategy(),
        idx in 0usize..5,
        ru in prop::collection::vec(-1.0f64..1.0, 8),
        rw in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let space = build_space(kind).unwrap();
        let spec = spec_for(idx, space.dim());
        let u = coeffs(&space, &ru, 0.5);
        let w = coeffs(&space, &rw, 0.5);
        let bu = space.nonlinear_residual(&spec, &u).unwrap();
        let bw = space.nonlinear_residual(&spec, &w).unwrap();
        let diff: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
        let db: Vec<f64> = bu.iter().zip(&bw).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&db, &diff) >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn newton_limit_independent_of_initial_guess(
        kind in space_strategy(),
        idx in 0usize..4,
        ru in prop::collection::vec(-1.0f64..1.0, 8),
        rv in prop::collection::vec(-1.0f64..1.0, 8),
        tau in prop::sample::select(vec![0.1, 0.05, 0.01]),
    ) {
        let space = build_space(kind).unwrap();
        let spec = spec_for(idx, space.dim());
        let prev = SchemeState::initial(
            Field::new(space.clone(), coeffs(&space, &ru, 0.5)).unwrap(),
            Field::new(space.clone(), coeffs(&space, &rv, 1.0)).unwrap(),
        ).unwrap();
        let load = space.load_vector(|x| x.iter().map(|s| s * (1.0 - s)).product::<f64>());
        let mass = space.assemble_mass();
        let mut results = Vec::new();
        for guess in [InitialGuess::Warm, InitialGuess::Zero] {
            let mut cfg = SchemeConfig::with_tau(tau, 1, tau).unwrap();
            cfg.initial_guess = guess;
            let stepper = Stepper::new(space.clone(), spec.clone(), cfg).unwrap();
            let out = stepper.step(&prev, &load).unwrap();
            prop_assert!(out.iterations <= 12, "{} iterations", out.iterations);
            results.push((out.state.v.coeffs().to_vec(), out.tolerance));
        }
        let d: Vec<f64> = results[0].0.iter().zip(&results[1].0).map(|(a, b)| a - b).collect();
        let tol = results[0].1.max(results[1].1);
        prop_assert!(mass.quad_form(&d).max(0.0).sqrt() <= 10.0 * tol);
    }

    #[test]
    fn unforced_energy_never_increases(
        kind in space_strategy(),
        idx in 0usize..5,
        ru in prop::collection::vec(-1.0f64..1.0, 8),
        rv in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let space = build_space(kind).unwrap();
        let spec = spec_for(idx, space.dim());
        let u0 = Field::new(space.clone(), coeffs(&space, &ru, 0.5)).unwrap();
        let v0 = Field::new(space.clone(), coeffs(&space, &rv, 1.0)).unwrap();
        let cfg = SchemeConfig::new(0.5, 25).unwrap();
        let rep = run(&spec, &space, &u0, &v0, &SourceSampler::zero(), &cfg, &mut []).unwrap();
        prop_assert_eq!(energy_decay_line(&rep).verdict, Verdict::Pass);
        for r in &rep.records[1..] {
            prop_assert!(r.dissipation_slack <= 10.0 * r.tolerance * (1.0 + r.l2_v));
        }
    }
}
