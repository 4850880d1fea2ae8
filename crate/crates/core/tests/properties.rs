mod support;

use std::sync::Arc;

use ersc_core::discretize::{build_grid, ControlledChain, DriftScheme};
use ersc_core::eigensolve::{policy_value_on, EigenOptions};
use ersc_core::game::inner_max_w;
use ersc_core::hjb::{solve_hjb_on, HjbOptions};
use ersc_core::model::{builtin_ou_lq, RegionSpec};
use ersc_core::perturb::{kappa_sweep, PerturbationFamily};
use ersc_core::simulate::{estimate_rsc_cost, simulate, Feedback, SimulationConfig};
use ersc_core::variational::{gibbs_identity_check, variational_value, FiniteNoiseSpace};
use ersc_core::MarkovPolicy;
use proptest::prelude::*;
use support::random_model;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generators_are_conservative_and_monotone(m in random_model()) {
        support::check_generator_structure(&m)?;
    }

    #[test]
    fn eigenpair_shift_and_monotonicity(m in random_model(), shift in -3.0f64..3.0, bump in 0.0f64..2.0) {
        support::check_eigen_properties(&m, shift, bump)?;
    }

    #[test]
    fn policy_iteration_history_is_monotone(m in random_model()) {
        support::check_policy_iteration(&m)?;
    }

    #[test]
    fn aux_policy_support_is_confined(m in random_model(), l in 0.5f64..2.5) {
        support::check_aux_support(&m, l)?;
    }

    #[test]
    fn ensembles_reproduce_from_seed(m in random_model(), seed in 0u64..1_000_000) {
        support::check_seed_reproducibility(&m, seed)?;
    }

    #[test]
    fn optimal_value_bounds_every_policy(m in random_model(), picks in prop::collection::vec(0usize..3, 200)) {
        let chain = m.chain();
        let sol = solve_hjb_on(&chain, &HjbOptions::default()).unwrap();
        let n = chain.n_nodes();
        for trial in 0..5 {
            let assign: Vec<usize> = (0..n).map(|i| picks[(i + 37 * trial) % picks.len()] % chain.n_controls()).collect();
            let v = policy_value_on(&chain, &MarkovPolicy::precise(assign, "random"), &EigenOptions::default())
                .unwrap()
                .value;
            prop_assert!(sol.value <= v + 1e-9, "{} > {}", sol.value, v);
        }
    }

    #[test]
    fn hjb_value_is_independent_of_the_start(m in random_model(), picks in prop::collection::vec(0usize..3, 64)) {
        let chain = m.chain();
        let base = solve_hjb_on(&chain, &HjbOptions::default()).unwrap().value;
        let n = chain.n_nodes();
        let assign: Vec<usize> = (0..n).map(|i| picks[i % picks.len()] % chain.n_controls()).collect();
        let opts = HjbOptions {
            initial_policy: Some(MarkovPolicy::precise(assign, "start")),
            ..HjbOptions::default()
        };
        let other = solve_hjb_on(&chain, &opts).unwrap().value;
        prop_assert!((other - base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn inner_max_beats_sampled_candidates(
        g in prop::collection::vec(-5.0f64..5.0, 1..4),
        l in 0.1f64..4.0,
        dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 64),
        radii in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let (w, best) = inner_max_w(&g, l);
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= l * (1.0 + 1e-12));
        let direct: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 0.5 * norm * norm;
        prop_assert!((direct - best).abs() <= 1e-12 * (1.0 + best.abs()));
        for (d, r) in dirs.iter().zip(&radii) {
            let d = &d[..g.len()];
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn == 0.0 {
                continue;
            }
            let c: Vec<f64> = d.iter().map(|v| v / dn * r * l).collect();
            let val: f64 = g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
                - 0.5 * c.iter().map(|v| v * v).sum::<f64>();
            prop_assert!(val <= best + 1e-12 * (1.0 + best.abs()));
        }
    }

    #[test]
    fn gibbs_identity_and_direction(
        w in prop::collection::vec(0.01f64..1.0, 2..16),
        f in prop::collection::vec(-8.0f64..8.0, 16),
        qw in prop::collection::vec(0.0f64..1.0, 16),
    ) {
        let space = FiniteNoiseSpace::from_weights(&w).unwrap();
        let f = &f[..w.len()];
        let check = gibbs_identity_check(&space, f).unwrap();
        prop_assert!(check.gap <= 1e-12, "gap {}", check.gap);
        let total: f64 = qw[..w.len()].iter().sum();
        prop_assume!(total > 0.0);
        let q: Vec<f64> = qw[..w.len()].iter().map(|v| v / total).collect();
        prop_assert!(variational_value(&space, f, &q).unwrap() <= check.lhs + 1e-12);
    }

    #[test]
    fn estimator_ignores_path_order(seed in 0u64..10_000, rot in 1usize..63) {
        let model = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let cfg = SimulationConfig::new(0.05, 2.0, 64, seed, vec![0.5]);
        let ens = simulate(&model, &Feedback::Constant(vec![0.0]), None, &cfg).unwrap();
        let mut rotated = ens.clone();
        rotated.paths.rotate_left(rot);
        let a = estimate_rsc_cost(&ens, None).unwrap().estimate;
        let b = estimate_rsc_cost(&rotated, None).unwrap().estimate;
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn perturbed_cost_is_sandwiched(x in -5.0f64..5.0, u in -1.0f64..1.0, frac in 0.0f64..0.999) {
        let model = builtin_ou_lq(-1.0, 1.0, 1.0, 2.0, 1.0, 3).unwrap();
        let grid = build_grid(&[5.0], &[41]).unwrap();
        let (fam, _) = PerturbationFamily::build_h(
            &model,
            &grid,
            0.5,
            Arc::new(|x: &[f64], _u: &[f64]| 0.5 * x[0] * x[0]),
            RegionSpec::nowhere(),
            0.5,
        )
        .unwrap();
        let eps = frac * fam.eps0();
        let re = fam.perturbed_cost(eps).unwrap();
        let (xv, uv) = ([x], [u]);
        let r = model.cost(&xv, &uv);
        let h = fam.h()(&xv, &uv);
        let v = re(&xv, &uv);
        prop_assert!(h >= r - 1e-12);
        prop_assert!(v >= r * (1.0 - frac) - 1e-12);
        prop_assert!(v <= r + eps * h + 1e-12);
    }
}

#[test]
fn kappa_limit_is_monotone_on_the_benchmark() {
    let model = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
    let grid = build_grid(&[6.0], &[121]).unwrap();
    let chain = ControlledChain::new(&model, &grid, DriftScheme::Hybrid).unwrap();
    let sweep = kappa_sweep(&chain, &[1.0, 0.5, 0.25, 0.1, 0.05, 0.01], &HjbOptions::default()).unwrap();
    for w in sweep.points.windows(2) {
        assert!(w[1].lambda_kappa <= w[0].lambda_kappa + 1e-12);
    }
    assert!(sweep.points.iter().all(|p| p.lambda_kappa >= sweep.lambda_zero - 1e-9));
}
