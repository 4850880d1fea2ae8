use ersc_core::discretize::{build_grid, ControlledChain, DriftScheme, Grid};
use ersc_core::eigensolve::{policy_value_on, EigenOptions, Eigenpair};
use ersc_core::model::{builtin_ou_lq, DiffusionModel};
use ersc_core::simulate::{
    estimate_rsc_cost, importance_sampled_cost, mem_tightness_report, simulate, AuxDrift, Feedback, MemConfig,
    SimulationConfig,
};
use ersc_core::variational::{drift_class_gap, inner_values, DriftFamily};
use ersc_core::MarkovPolicy;

fn benchmark() -> (DiffusionModel, Grid, Eigenpair) {
    let model = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
    let grid = build_grid(&[6.0], &[241]).unwrap();
    let chain = ControlledChain::new(&model, &grid, DriftScheme::Hybrid).unwrap();
    let pair = policy_value_on(&chain, &MarkovPolicy::constant(241, 0), &EigenOptions::with_tol(1e-12)).unwrap();
    (model, grid, pair)
}

fn zero() -> Feedback {
    Feedback::Constant(vec![0.0])
}

#[test]
fn plain_and_reweighted_finite_horizon_costs_agree() {
    let (model, grid, pair) = benchmark();
    let cfg = SimulationConfig::new(0.01, 2.0, 4000, 21, vec![0.0]);
    let is = importance_sampled_cost(&model, &zero(), &grid, &pair, &cfg).unwrap();
    let mut plain_cfg = cfg.clone();
    plain_cfg.seed = 22;
    let plain = estimate_rsc_cost(&simulate(&model, &zero(), None, &plain_cfg).unwrap(), None).unwrap();
    let tol = 3.0 * is.finite_horizon_stderr.hypot(plain.stderr);
    assert!(
        (is.finite_horizon - plain.estimate).abs() <= tol,
        "{} vs {} (tol {tol})",
        is.finite_horizon,
        plain.estimate
    );
}

#[test]
fn ground_diffusion_estimate_is_nearly_path_independent() {
    let (model, grid, pair) = benchmark();
    let cfg = SimulationConfig::new(0.002, 4.0, 1000, 5, vec![0.0]);
    let is = importance_sampled_cost(&model, &zero(), &grid, &pair, &cfg).unwrap();
    assert!(is.stderr <= 1e-3, "stderr {}", is.stderr);
    assert!((is.estimate - 0.25).abs() <= 1e-2);
}

#[test]
fn zero_cost_gives_zero_estimate() {
    let model = builtin_ou_lq(-1.0, 1.0, 0.0, 0.0, 0.0, 1).unwrap();
    let grid = build_grid(&[6.0], &[121]).unwrap();
    let chain = ControlledChain::new(&model, &grid, DriftScheme::Hybrid).unwrap();
    let pair = policy_value_on(&chain, &MarkovPolicy::constant(121, 0), &EigenOptions::default()).unwrap();
    let cfg = SimulationConfig::new(0.01, 1.0, 200, 3, vec![0.3]);
    let is = importance_sampled_cost(&model, &zero(), &grid, &pair, &cfg).unwrap();
    assert!(is.estimate.abs() <= 1e-12 && is.stderr <= 1e-12);
}

#[test]
fn linear_drift_family_recovers_the_optimal_tilt() {
    let (model, grid, pair) = benchmark();
    let thetas: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
    let cfg = SimulationConfig::new(0.01, 40.0, 200, 8, vec![0.0]);
    let report = drift_class_gap(&model, &zero(), &grid, &pair, &DriftFamily::linear_1d(&thetas), &cfg).unwrap();
    let best = &report.candidates[report.best];
    // The ground drift is w(x) = x/2, so the tilt θ = 1/2 is optimal.
    assert!((best.params.linear[0] - 0.5).abs() <= 0.1 + 1e-12, "best θ = {}", best.params.linear[0]);
    assert!((best.value - 0.25).abs() <= 0.02, "best inner value {}", best.value);
    assert!(report.consistent);
}

#[test]
fn constant_drift_family_stays_below_the_eigenvalue() {
    let (model, _, _) = benchmark();
    let values: Vec<f64> = (-4..=4).map(|k| 0.1 * k as f64).collect();
    let cfg = SimulationConfig::new(0.01, 40.0, 200, 9, vec![0.0]);
    let vals = inner_values(&model, &zero(), &DriftFamily::constant_1d(&values), &cfg).unwrap();
    let best = vals.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
    // With w ≡ c the inner value is 0.375(1/2 + c²) − c²/2, maximized at c = 0 with value 0.1875.
    assert!((best - 0.1875).abs() <= 0.02, "best {best}");
    assert!(best < 0.25);
}

#[test]
fn stationary_mem_has_gaussian_tails() {
    let model = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
    let mut cfg = SimulationConfig::new(0.01, 20.0, 400, 13, vec![0.0]);
    cfg.mem = Some(MemConfig::default());
    let ens = simulate(&model, &zero(), None, &cfg).unwrap();
    let sd = 0.5f64.sqrt();
    let report = mem_tightness_report(&ens, &[sd, 2.0 * sd, 3.0 * sd, 4.0 * sd]).unwrap();
    assert!(report.beyond[3].1 <= 1e-3, "{:?}", report.beyond);
}

#[test]
fn ground_diffusion_mem_is_tight() {
    let (model, grid, pair) = benchmark();
    let aux = AuxDrift::ground(&model, &grid, &pair.vector).unwrap();
    let mut cfg = SimulationConfig::new(0.01, 20.0, 400, 14, vec![0.0]);
    cfg.mem = Some(MemConfig::default());
    let ens = simulate(&model, &zero(), Some(&aux), &cfg).unwrap();
    let report = mem_tightness_report(&ens, &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
    assert!(report.tight, "{:?}", report.shells);
}
