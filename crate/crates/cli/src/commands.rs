//! One function per subcommand; each returns JSON results and the tables to write.

use std::time::Instant;

use ersc_core::discretize::{ControlledChain, Grid};
use ersc_core::eigensolve::{policy_value_on, Eigenpair};
use ersc_core::game::{game_value_sweep, solve_ergodic_game_on, sup_w_fixed_policy, AuxiliaryPolicy};
use ersc_core::hjb::{solve_hjb_on, HjbSolution};
use ersc_core::model::{check_assumptions, AssumptionConstants, DiffusionModel, Inequality};
use ersc_core::perturb::{epsilon_sweep, kappa_sweep, PerturbationFamily};
use ersc_core::simulate::{
    check_stochastic_representation, estimate_rsc_cost, importance_sampled_cost, mem_tightness_report, simulate,
    Feedback,
};
use ersc_core::variational::{drift_class_gap, gibbs_identity_check, variational_value, DriftFamily, FiniteNoiseSpace};
use ersc_core::MarkovPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{polynomial_cost, PolicySpec, RunConfig, SimulationBlock};
use crate::{fmt_num, CliError, Command, CommandOutput, Series};

type Out = Result<CommandOutput, CliError>;

pub fn dispatch(command: Command, cfg: &RunConfig) -> Out {
    match command {
        Command::Eigen => eigen(cfg),
        Command::Hjb => hjb(cfg),
        Command::Game => game(cfg),
        Command::SweepEps => sweep_eps(cfg),
        Command::SweepKappa => sweep_kappa(cfg),
        Command::Simulate => simulate_cmd(cfg),
        Command::VerifyVar => verify_var(cfg),
        Command::CheckAssumptions => check_assumptions_cmd(cfg),
        Command::RepCheck => rep_check(cfg),
    }
}

/// Wall-clock timer keyed by phase name.
struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(Vec::new(), Instant::now())
    }

    fn lap(&mut self, name: &str) {
        self.0.push((format!("{name}_s"), self.1.elapsed().as_secs_f64()));
        self.1 = Instant::now();
    }
}

struct Setup {
    model: DiffusionModel,
    grid: Grid,
    chain: ControlledChain,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let model = cfg.model.build()?;
    let grid = cfg.grid.build()?;
    let chain = ControlledChain::new(&model, &grid, cfg.grid.scheme)?;
    Ok(Setup { model, grid, chain })
}

fn missing(block: &str, command: Command) -> CliError {
    CliError::Config(format!("command {} needs a [{block}] block", command.name()))
}

/// The configured stationary policy, plus the HJB solution when it had to be computed.
fn configured_policy(cfg: &RunConfig, chain: &ControlledChain) -> Result<(MarkovPolicy, Option<HjbSolution>), CliError> {
    match cfg.policy {
        PolicySpec::Optimal => {
            let sol = solve_hjb_on(chain, &cfg.solver.hjb())?;
            Ok((sol.policy.clone(), Some(sol)))
        }
        PolicySpec::Constant { control } => {
            if control >= chain.n_controls() {
                return Err(CliError::Config(format!(
                    "policy control {control} is out of range ({} controls)",
                    chain.n_controls()
                )));
            }
            Ok((MarkovPolicy::constant(chain.n_nodes(), control), None))
        }
    }
}

fn feedback_for(cfg: &RunConfig, s: &Setup, policy: &MarkovPolicy) -> Feedback {
    match cfg.policy {
        PolicySpec::Constant { control } => Feedback::Constant(s.model.controls().point(control).to_vec()),
        PolicySpec::Optimal => Feedback::Policy {
            grid: s.grid.clone(),
            policy: policy.clone(),
        },
    }
}

fn perturbation_family(cfg: &RunConfig, s: &Setup, command: Command) -> Result<PerturbationFamily, CliError> {
    let p = cfg.perturbation.as_ref().ok_or_else(|| missing("perturbation", command))?;
    let hbar = polynomial_cost(&p.hbar);
    let region = p.region.build();
    let (fam, cert) = match &p.h {
        Some(h) => PerturbationFamily::custom(&s.model, &s.grid, p.c3, polynomial_cost(h), hbar, region, p.collar)?,
        None => PerturbationFamily::build_h(&s.model, &s.grid, p.c3, hbar, region, p.collar)?,
    };
    log::info!("perturbation family certified: {cert:?}");
    Ok(fam)
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

fn node_series(file: &str, grid: &Grid, columns: &[&str], values: &[Vec<f64>]) -> Series {
    let mut header = coord_header(grid.dim());
    header.extend(columns.iter().map(|c| c.to_string()));
    let mut s = Series {
        file: file.into(),
        header,
        rows: Vec::new(),
    };
    for i in 0..grid.n_nodes() {
        s.push(grid.coords(i).into_iter().chain(values.iter().map(|col| col[i])));
    }
    s
}

fn eigen_json(pair: &Eigenpair) -> Value {
    json!({
        "value": pair.value,
        "cw_lower": pair.cw_lower,
        "cw_upper": pair.cw_upper,
        "bracket_width": pair.bracket_width(),
    })
}

fn eigen(cfg: &RunConfig) -> Out {
    let mut t = Timer::new();
    let s = setup(cfg)?;
    t.lap("assemble");
    let (policy, _) = configured_policy(cfg, &s.chain)?;
    let pair = policy_value_on(&s.chain, &policy, &cfg.solver.eigen())?;
    t.lap("eigen");
    let q = s.chain.policy_generator(&policy)?;
    let r = s.chain.policy_cost(&policy)?;
    let mut results = eigen_json(&pair);
    results["relative_residual"] = json!(pair.relative_residual(&q, &r));
    results["policy"] = json!(policy.tag());
    results["nodes"] = json!(s.grid.n_nodes());
    let series = vec![node_series(
        "eigenvector.csv",
        &s.grid,
        &["psi", "log_psi"],
        &[pair.vector.clone(), pair.log_vector()],
    )];
    Ok(CommandOutput {
        results,
        series,
        wall_times: t.0,
    })
}

fn policy_columns(s: &Setup, policy: &MarkovPolicy) -> Vec<Vec<f64>> {
    let controls = s.model.controls();
    let mut cols = vec![vec![0.0; s.grid.n_nodes()]; controls.control_dim()];
    for i in 0..s.grid.n_nodes() {
        for (k, w) in policy.weights_at(i) {
            for (c, u) in cols.iter_mut().zip(controls.point(k)) {
                c[i] += w * u;
            }
        }
    }
    cols
}

fn hjb(cfg: &RunConfig) -> Out {
    let mut t = Timer::new();
    let s = setup(cfg)?;
    t.lap("assemble");
    let sol = solve_hjb_on(&s.chain, &cfg.solver.hjb())?;
    t.lap("solve");
    let results = json!({
        "value": sol.value,
        "residual": sol.residual,
        "iterations": sol.history.len(),
        "history": sol.history,
        "cycled": sol.cycled,
        "nodes": s.grid.n_nodes(),
        "controls": s.chain.n_controls(),
    });
    let mut cols = vec![sol.v.clone(), sol.log_v()];
    let ucols = policy_columns(&s, &sol.policy);
    let names: Vec<String> = (0..ucols.len()).map(|k| format!("u{k}")).collect();
    cols.extend(ucols);
    let mut headers = vec!["v", "log_v"];
    headers.extend(names.iter().map(String::as_str));
    let series = vec![node_series("value_function.csv", &s.grid, &headers, &cols)];
    Ok(CommandOutput {
        results,
        series,
        wall_times: t.0,
    })
}

fn aux_series(grid: &Grid, aux: &AuxiliaryPolicy) -> Series {
    let d = grid.dim();
    let cols: Vec<Vec<f64>> = (0..d).map(|k| aux.field().iter().map(|w| w[k]).collect()).collect();
    let names: Vec<String> = (0..d).map(|k| format!("w{k}")).collect();
    let mut headers: Vec<&str> = names.iter().map(String::as_str).collect();
    headers.push("chi");
    let mut all = cols;
    all.push(aux.chi().to_vec());
    node_series("aux_policy.csv", grid, &headers, &all)
}

fn game(cfg: &RunConfig) -> Out {
    let g = cfg.game.as_ref().ok_or_else(|| missing("game", Command::Game))?;
    let mut t = Timer::new();
    let s = setup(cfg)?;
    let chain = if g.epsilon > 0.0 {
        perturbation_family(cfg, &s, Command::Game)?.perturbed_chain(&s.chain, g.epsilon)?
    } else {
        s.chain.clone()
    };
    t.lap("assemble");
    let opts = cfg.solver.game();
    let l_rule = |l: f64| g.l_star_slope * l + g.l_star_offset;
    let l_star = g.l_star.unwrap_or_else(|| l_rule(g.l));
    let mut series = Vec::new();
    let mut results = if g.fixed_policy {
        let (policy, _) = configured_policy(cfg, &chain)?;
        let (value, aux) = sup_w_fixed_policy(&chain, &policy, g.l, l_star, &opts)?;
        series.push(aux_series(&s.grid, &aux));
        json!({ "value": value, "l": g.l, "l_star": l_star, "fixed_policy": true, "max_w_norm": aux.max_norm() })
    } else {
        let sol = solve_ergodic_game_on(&chain, g.l, l_star, &opts)?;
        series.push(aux_series(&s.grid, &sol.aux));
        json!({
            "value": sol.value,
            "l": g.l,
            "l_star": l_star,
            "fixed_policy": false,
            "residual": sol.residual,
            "hjb_residual": sol.hjb_residual,
            "outer_iterations": sol.history.len(),
            "inner_iterations": sol.inner_iterations,
            "max_w_norm": sol.aux.max_norm(),
        })
    };
    results["epsilon"] = json!(g.epsilon);
    t.lap("solve");
    if !cfg.sweep.l.is_empty() {
        let sweep = game_value_sweep(&chain, &cfg.sweep.l, &l_rule, &opts)?;
        t.lap("sweep");
        let mut table = Series::new("game_sweep.csv", &["l", "l_star", "rho", "increment", "residual"]);
        for p in &sweep {
            table.push([p.l, p.l_star, p.rho, p.increment, p.residual]);
        }
        series.push(table);
        results["sweep"] = serde_json::to_value(&sweep).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(CommandOutput {
        results,
        series,
        wall_times: t.0,
    })
}

fn sweep_eps(cfg: &RunConfig) -> Out {
    let eps = cfg.sweep_epsilons()?;
    if eps.is_empty() {
        return Err(CliError::Config("sweep-eps needs a nonempty sweep.eps".into()));
    }
    let mut t = Timer::new();
    let s = setup(cfg)?;
    let fam = perturbation_family(cfg, &s, Command::SweepEps)?;
    t.lap("assemble");
    let sweep = epsilon_sweep(&s.chain, &fam, &eps, &cfg.solver.hjb())?;
    t.lap("sweep");
    let mut table = Series::new("eps_sweep.csv", &["epsilon", "lambda_sm", "gap"]);
    for p in &sweep.points {
        table.push([p.epsilon, p.lambda, p.gap]);
    }
    let points: Vec<Value> = sweep
        .points
        .iter()
        .map(|p| json!({ "epsilon": p.epsilon, "lambda": p.lambda, "gap": p.gap }))
        .collect();
    for p in &sweep.points {
        t.0.push((format!("eps_{}_s", fmt_num(p.epsilon)), p.wall_time_s));
    }
    Ok(CommandOutput {
        results: json!({
            "eps0": fam.eps0(),
            "base_value": sweep.base_value,
            "slope": sweep.slope,
            "points": points,
        }),
        series: vec![table],
        wall_times: t.0,
    })
}

fn sweep_kappa(cfg: &RunConfig) -> Out {
    if cfg.sweep.kappa.is_empty() {
        return Err(CliError::Config("sweep-kappa needs a nonempty sweep.kappa".into()));
    }
    let mut t = Timer::new();
    let s = setup(cfg)?;
    t.lap("assemble");
    let sweep = kappa_sweep(&s.chain, &cfg.sweep.kappa, &cfg.solver.hjb())?;
    t.lap("sweep");
    let mut table = Series::new("kappa_sweep.csv", &["kappa", "lambda_kappa", "lambda_zero_gap"]);
    for p in &sweep.points {
        table.push([p.kappa, p.lambda_kappa, p.gap]);
        t.0.push((format!("kappa_{}_s", fmt_num(p.kappa)), p.wall_time_s));
    }
    let points: Vec<Value> = sweep
        .points
        .iter()
        .map(|p| json!({ "kappa": p.kappa, "lambda_kappa": p.lambda_kappa, "gap": p.gap }))
        .collect();
    Ok(CommandOutput {
        results: json!({ "lambda_zero": sweep.lambda_zero, "points": points }),
        series: vec![table],
        wall_times: t.0,
    })
}

fn simulation_block(cfg: &RunConfig, command: Command) -> Result<&SimulationBlock, CliError> {
    cfg.simulation.as_ref().ok_or_else(|| missing("simulation", command))
}

fn simulate_cmd(cfg: &RunConfig) -> Out {
    let sim = simulation_block(cfg, Command::Simulate)?;
    let mut t = Timer::new();
    let s = setup(cfg)?;
    let (policy, _) = configured_policy(cfg, &s.chain)?;
    let fb = feedback_for(cfg, &s, &policy);
    t.lap("setup");
    let ens = simulate(&s.model, &fb, None, &sim.config)?;
    t.lap("simulate");
    let est = estimate_rsc_cost(&ens, sim.truncation)?;
    let mut results = json!({
        "estimate": est.estimate,
        "stderr": est.stderr,
        "n_used": est.n_used,
        "excluded": est.excluded,
        "truncated_estimate": est.truncated_estimate,
        "tail_mass": est.tail_mass,
        "horizon": ens.horizon,
        "digest": ens.digest,
    });
    let mut series = Vec::new();
    if sim.importance_sampling {
        let pair = policy_value_on(&s.chain, &policy, &cfg.solver.eigen())?;
        let is = importance_sampled_cost(&s.model, &fb, &s.grid, &pair, &sim.config)?;
        t.lap("importance_sampling");
        results["eigenvalue"] = json!(pair.value);
        results["importance_sampling"] = serde_json::to_value(&is).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if ens.mem.is_some() && !sim.shell_radii.is_empty() {
        let mem = mem_tightness_report(&ens, &sim.shell_radii)?;
        let mut table = Series::new("mem_shells.csv", &["radius", "mass_beyond", "shell_mass"]);
        for ((r, b), m) in mem.beyond.iter().zip(&mem.shells) {
            table.push([*r, *b, *m]);
        }
        series.push(table);
        results["mem_tight"] = json!(mem.tight);
    }
    if let Some(mem) = &ens.mem {
        let mut table = Series::new("mem_radial.csv", &["radius_lo", "mass"]);
        for (k, m) in mem.radial_mass.iter().enumerate() {
            table.push([k as f64 * mem.radial_bin, *m]);
        }
        series.push(table);
    }
    Ok(CommandOutput {
        results,
        series,
        wall_times: t.0,
    })
}

fn verify_var(cfg: &RunConfig) -> Out {
    let v = &cfg.variational;
    let mut t = Timer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let mut table = Series::new("variational.csv", &["space", "atoms", "lhs", "rhs", "gap", "sampled_q_value"]);
    let (mut worst, mut violations) = (0.0f64, 0usize);
    for k in 0..v.n_spaces {
        let m = rng.random_range(2..=v.max_atoms);
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let space = FiniteNoiseSpace::from_weights(&w)?;
        let f: Vec<f64> = (0..m).map(|_| rng.random_range(-v.f_range..=v.f_range)).collect();
        let check = gibbs_identity_check(&space, &f)?;
        let qw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = qw.iter().sum();
        let q: Vec<f64> = qw.iter().map(|x| x / total).collect();
        let other = variational_value(&space, &f, &q)?;
        if other > check.lhs + 1e-12 {
            violations += 1;
        }
        worst = worst.max(check.gap);
        table.push([k as f64, m as f64, check.lhs, check.rhs, check.gap, other]);
    }
    t.lap("finite_spaces");
    let mut results = json!({
        "n_spaces": v.n_spaces,
        "max_gap": worst,
        "inequality_violations": violations,
        "passed": worst <= 1e-12 && violations == 0,
    });
    let mut series = vec![table];
    if !v.thetas.is_empty() {
        let sim = simulation_block(cfg, Command::VerifyVar)?;
        let s = setup(cfg)?;
        if s.model.dim() != 1 {
            return Err(CliError::Config("variational.thetas needs a one-dimensional model".into()));
        }
        let (policy, _) = configured_policy(cfg, &s.chain)?;
        let fb = feedback_for(cfg, &s, &policy);
        let pair = policy_value_on(&s.chain, &policy, &cfg.solver.eigen())?;
        let report = drift_class_gap(&s.model, &fb, &s.grid, &pair, &DriftFamily::linear_1d(&v.thetas), &sim.config)?;
        t.lap("drift_family");
        let mut drift = Series::new("drift_family.csv", &["theta", "value", "stderr"]);
        for c in &report.candidates {
            drift.push([c.params.linear[0], c.value, c.stderr]);
        }
        series.push(drift);
        results["drift_family"] = json!({
            "log_mgf": report.log_mgf.estimate,
            "log_mgf_stderr": report.log_mgf.stderr,
            "best_theta": report.candidates[report.best].params.linear[0],
            "best_value": report.candidates[report.best].value,
            "gap": report.gap,
            "gap_stderr": report.gap_stderr,
            "consistent": report.consistent,
        });
        if !report.consistent {
            results["passed"] = json!(false);
        }
    }
    Ok(CommandOutput {
        results,
        series,
        wall_times: t.0,
    })
}

fn check_assumptions_cmd(cfg: &RunConfig) -> Out {
    let a = cfg.assumptions.as_ref().ok_or_else(|| missing("assumptions", Command::CheckAssumptions))?;
    let mut t = Timer::new();
    let model = cfg.model.build()?;
    let grid = cfg.grid.build()?;
    let points: Vec<Vec<f64>> = (0..grid.n_nodes()).map(|i| grid.coords(i)).chain(a.extra_points.iter().cloned()).collect();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = points
        .iter()
        .flat_map(|x| model.controls().points().iter().map(move |u| (x.clone(), u.clone())))
        .collect();
    let hbar = polynomial_cost(&a.hbar);
    let constants = AssumptionConstants {
        c1: a.c1,
        c2: a.c2,
        c3: a.c3,
    };
    let report = check_assumptions(&model, &a.lyapunov(), &*hbar, constants, &samples)?;
    t.lap("check");
    let d = model.dim();
    let mut header = coord_header(d);
    header.extend((0..model.controls().control_dim()).map(|k| format!("u{k}")));
    header.push("inequality".into());
    header.push("slack".into());
    let mut table = Series {
        file: "violations.csv".into(),
        header,
        rows: Vec::new(),
    };
    for v in &report.violations {
        let mut row: Vec<String> = v.x.iter().chain(&v.u).map(|x| fmt_num(*x)).collect();
        row.push(
            match v.inequality {
                Inequality::Stability => "stability",
                Inequality::CostBound => "cost_bound",
            }
            .into(),
        );
        row.push(fmt_num(v.slack));
        table.push_raw(row);
    }
    Ok(CommandOutput {
        results: json!({
            "checked_points": report.checked_points,
            "violations": report.violations.len(),
            "worst_slack": report.worst_slack,
            "eps0": (1.0 - a.c3) / 8.0,
            "passed": report.passed(),
        }),
        series: vec![table],
        wall_times: t.0,
    })
}

fn rep_check(cfg: &RunConfig) -> Out {
    let rep = cfg.representation.as_ref().ok_or_else(|| missing("representation", Command::RepCheck))?;
    let sim = simulation_block(cfg, Command::RepCheck)?;
    let mut t = Timer::new();
    let s = setup(cfg)?;
    let (policy, sol) = configured_policy(cfg, &s.chain)?;
    let (v, value) = match sol {
        Some(sol) => (sol.v, sol.value),
        None => {
            let pair = policy_value_on(&s.chain, &policy, &cfg.solver.eigen())?;
            (pair.vector, pair.value)
        }
    };
    t.lap("solve");
    let fb = feedback_for(cfg, &s, &policy);
    let points = check_stochastic_representation(
        &s.model,
        &fb,
        &s.grid,
        &v,
        value,
        rep.radius,
        &rep.test_points,
        &sim.config,
    )?;
    t.lap("simulate");
    let mut header = coord_header(s.model.dim());
    header.extend(["ratio", "stderr", "hit_fraction", "inconclusive"].map(String::from));
    let mut table = Series {
        file: "representation.csv".into(),
        header,
        rows: Vec::new(),
    };
    for p in &points {
        let mut row: Vec<String> = p.x.iter().chain([&p.ratio, &p.stderr, &p.hit_fraction]).map(|v| fmt_num(*v)).collect();
        row.push(p.inconclusive.to_string());
        table.push_raw(row);
    }
    let passed = points.iter().all(|p| !p.inconclusive && (p.ratio - 1.0).abs() <= rep.tolerance);
    let max_dev = points.iter().map(|p| (p.ratio - 1.0).abs()).fold(0.0, f64::max);
    Ok(CommandOutput {
        results: json!({
            "value": value,
            "radius": rep.radius,
            "tolerance": rep.tolerance,
            "max_deviation": max_dev,
            "inconclusive": points.iter().filter(|p| p.inconclusive).count(),
            "passed": passed,
        }),
        series: vec![table],
        wall_times: t.0,
    })
}
