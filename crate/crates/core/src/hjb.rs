//! Multiplicative HJB `min_u [𝓛ᵘV + rV] = ΛV` on the discretized chain, solved by
//! policy iteration on the Perron value.
//!
//! Each improvement step replaces the control at every node by a row-wise minimizer of
//! `(QᵘV)_i + r(x_i,u)V_i` for the current eigenvector `V`; by the Collatz–Wielandt
//! inequality this cannot raise the principal eigenvalue.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::policy::{MarkovPolicy, PolicyAssignment};

use crate::discretize::{ControlledChain, DriftScheme, Grid};
use crate::eigensolve::{principal_eigenpair, EigenOptions};
use crate::error::{Error, Result};
use crate::model::DiffusionModel;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HjbOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub eigen: EigenOptions,
    #[serde(skip)]
    pub initial_policy: Option<MarkovPolicy>,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            eigen: EigenOptions::with_tol(1e-11),
            initial_policy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbSolution {
    pub value: f64,
    /// Positive value function with `V(origin_node) = 1`.
    pub v: Vec<f64>,
    pub policy: MarkovPolicy,
    /// `max_i |min_u[(QᵘV)_i + r_i^u V_i] / V_i − Λ|`.
    pub residual: f64,
    /// Principal eigenvalue of each evaluated policy.
    pub history: Vec<f64>,
    /// Set when the iteration stopped on a repeated policy rather than a fixed point.
    pub cycled: bool,
}

impl HjbSolution {
    pub fn log_v(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.ln()).collect()
    }
}

/// Row-wise Hamiltonian values `(QᵏV)_i + c_k(i)V_i` for every control.
fn hamiltonians(chain: &ControlledChain, v: &[f64], node: usize) -> Vec<f64> {
    (0..chain.n_controls()).map(|k| chain.twisted_row(k, node, v)).collect()
}

fn tie_tolerance(vals: &[f64]) -> f64 {
    1e-12 * vals.iter().map(|x| x.abs()).fold(0.0, f64::max) + f64::MIN_POSITIVE
}

/// One improvement sweep; returns the new policy and the relative HJB residual of `(λ, V)`.
fn improve(chain: &ControlledChain, current: &[usize], v: &[f64], lambda: f64) -> (Vec<usize>, f64) {
    let out: Vec<(usize, f64)> = (0..chain.n_nodes())
        .into_par_iter()
        .map(|i| {
            let vals = hamiltonians(chain, v, i);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let tie = tie_tolerance(&vals);
            let cur = current[i];
            let choice = if vals[cur] <= min + tie {
                cur
            } else {
                vals.iter().position(|&x| x <= min + tie).unwrap_or(cur)
            };
            (choice, (min / v[i] - lambda).abs())
        })
        .collect();
    let residual = out.iter().map(|e| e.1).fold(0.0, f64::max);
    (out.into_iter().map(|e| e.0).collect(), residual)
}

/// Control minimizing the running cost at each node (lowest index on ties).
pub fn greedy_policy(chain: &ControlledChain) -> MarkovPolicy {
    let assign = (0..chain.n_nodes())
        .map(|i| {
            let mut best = 0;
            for k in 1..chain.n_controls() {
                if chain.cost(k, i) < chain.cost(best, i) {
                    best = k;
                }
            }
            best
        })
        .collect();
    MarkovPolicy::precise(assign, "greedy")
}

pub fn solve_hjb_on(chain: &ControlledChain, opts: &HjbOptions) -> Result<HjbSolution> {
    let n = chain.n_nodes();
    let mut assign: Vec<usize> = match &opts.initial_policy {
        Some(p) => {
            p.validate(n, chain.n_controls())?;
            p.precise_controls()
                .ok_or_else(|| Error::invalid("initial policy must be precise"))?
                .to_vec()
        }
        None => greedy_policy(chain).precise_controls().unwrap().to_vec(),
    };
    let mut eig_opts = EigenOptions {
        normalize_at: chain.grid().origin_node(),
        ..opts.eigen.clone()
    };
    let mut history = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for _ in 0..opts.max_iter {
        let policy = MarkovPolicy::precise(assign.clone(), "policy iteration");
        let q = chain.policy_generator(&policy)?;
        let r = chain.policy_cost(&policy)?;
        let pair = principal_eigenpair(&q, &r, &eig_opts)?;
        let lambda = pair.value;
        let decrease = history.last().map(|&prev: &f64| prev - lambda);
        history.push(lambda);
        seen.insert(assign.clone());

        let (next, residual) = improve(chain, &assign, &pair.vector, lambda);
        let unchanged = next == assign;
        let stalled = decrease.is_some_and(|d| d < opts.tol) && residual < opts.tol;
        let cycled = !unchanged && seen.contains(&next);
        if unchanged || stalled || cycled {
            if cycled && !stalled {
                log::warn!("policy iteration revisited a policy; accepting value {lambda}");
            }
            return Ok(HjbSolution {
                value: lambda,
                v: pair.vector,
                policy: MarkovPolicy::precise(assign, "hjb optimal"),
                residual,
                history,
                cycled: cycled && !unchanged,
            });
        }
        eig_opts.initial = Some(pair.vector);
        assign = next;
    }
    Err(Error::NonConvergence {
        solver: "solve_hjb",
        iterations: opts.max_iter,
        last_change: history
            .windows(2)
            .last()
            .map(|w| w[0] - w[1])
            .unwrap_or(f64::INFINITY),
    })
}

pub fn solve_hjb(model: &DiffusionModel, grid: &Grid, scheme: DriftScheme, opts: &HjbOptions) -> Result<HjbSolution> {
    let chain = ControlledChain::new(model, grid, scheme)?;
    solve_hjb_on(&chain, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// Per-node gap between the candidate's row value and the row-wise minimum, divided by `V_i`.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

impl OptimalityReport {
    pub fn is_minimizer(&self, tol: f64) -> bool {
        self.max_gap <= tol
    }
}

/// Compares a candidate policy's Hamiltonian rows with the row-wise minimum at the solution.
pub fn check_optimality_condition(
    chain: &ControlledChain,
    solution: &HjbSolution,
    candidate: &MarkovPolicy,
) -> Result<OptimalityReport> {
    candidate.validate(chain.n_nodes(), chain.n_controls())?;
    let v = &solution.v;
    let gaps: Vec<f64> = (0..chain.n_nodes())
        .map(|i| {
            let vals = hamiltonians(chain, v, i);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let row: f64 = candidate.weights_at(i).into_iter().map(|(k, w)| w * vals[k]).sum();
            ((row - min) / v[i]).max(0.0)
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(OptimalityReport { gaps, max_gap })
}

/// `ω = Σᵀ∇(log V)` at every node (central differences, one-sided on the boundary).
pub fn value_gradient_field(model: &DiffusionModel, grid: &Grid, v: &[f64]) -> Result<Vec<Vec<f64>>> {
    if v.len() != grid.n_nodes() {
        return Err(Error::invalid("value vector length does not match the grid"));
    }
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::invalid("value function must be strictly positive"));
    }
    let logv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let d = grid.dim();
    Ok((0..grid.n_nodes())
        .map(|node| {
            let grad = grid.gradient_at(&logv, node);
            let s = model.sigma(&grid.coords(node));
            (0..d).map(|k| (0..d).map(|i| s[i * d + k] * grad[i]).sum()).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::eigensolve::policy_value_on;
    use crate::model::builtin_ou_lq;

    #[test]
    fn single_control_equals_policy_value() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[5.0], &[101]).unwrap();
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let sol = solve_hjb_on(&chain, &HjbOptions::default()).unwrap();
        let pv = policy_value_on(&chain, &MarkovPolicy::constant(g.n_nodes(), 0), &EigenOptions::with_tol(1e-11)).unwrap();
        assert!((sol.value - pv.value).abs() < 1e-10);
        assert_eq!(sol.history.len(), 1);
        assert!(sol.residual < 1e-9);
    }

    #[test]
    fn optimality_condition_cases() {
        let m = builtin_ou_lq(-1.0, 1.0, 1.0, 2.0, 2.0, 9).unwrap();
        let g = build_grid(&[4.0], &[41]).unwrap();
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let sol = solve_hjb_on(&chain, &HjbOptions::default()).unwrap();
        let rep = check_optimality_condition(&chain, &sol, &sol.policy).unwrap();
        assert!(rep.is_minimizer(1e-8), "{}", rep.max_gap);

        let mut corrupted = sol.policy.precise_controls().unwrap().to_vec();
        let node = g.n_nodes() - 5;
        corrupted[node] = if corrupted[node] == 0 { 8 } else { 0 };
        let rep = check_optimality_condition(&chain, &sol, &MarkovPolicy::precise(corrupted, "bad")).unwrap();
        assert!(rep.gaps[node] > 1e-6);
        assert!(rep.gaps.iter().enumerate().all(|(i, &g)| i == node || g < 1e-8));
    }

    #[test]
    fn relaxed_mixture_at_tied_node_has_zero_gap() {
        // Two identical controls are tied everywhere.
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 1.0, 2).unwrap();
        let m = m.with_cost("no control cost", m.cost_fn().clone());
        let same = crate::model::DiffusionModel::new(
            "tied",
            1,
            std::sync::Arc::new(|x: &[f64], _u: &[f64], out: &mut [f64]| out[0] = -x[0]),
            std::sync::Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 1.0),
            std::sync::Arc::new(|x: &[f64], _u: &[f64]| 0.375 * x[0] * x[0]),
            m.controls().clone(),
            crate::model::RegionSpec::everywhere(),
            1.0,
        )
        .unwrap();
        let g = build_grid(&[4.0], &[41]).unwrap();
        let chain = ControlledChain::new(&same, &g, DriftScheme::Hybrid).unwrap();
        let sol = solve_hjb_on(&chain, &HjbOptions::default()).unwrap();
        let mix = MarkovPolicy::relaxed(vec![vec![0.5, 0.5]; g.n_nodes()], "mix").unwrap();
        let rep = check_optimality_condition(&chain, &sol, &mix).unwrap();
        assert!(rep.max_gap < 1e-12);
    }

    #[test]
    fn gradient_field_of_constant_is_zero() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[2.0], &[21]).unwrap();
        let w = value_gradient_field(&m, &g, &vec![1.0; g.n_nodes()]).unwrap();
        assert!(w.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn gradient_field_of_gaussian_ansatz() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        for (count, bound) in [(61usize, 0.0), (121, 0.0)] {
            let _ = bound;
            let g = build_grid(&[3.0], &[count]).unwrap();
            let gamma = 0.5;
            let v: Vec<f64> = (0..g.n_nodes()).map(|i| (0.5 * gamma * g.coords(i)[0].powi(2)).exp()).collect();
            let w = value_gradient_field(&m, &g, &v).unwrap();
            // log V is quadratic, so the central difference is exact in the interior
            for i in 1..g.n_nodes() - 1 {
                assert!((w[i][0] - gamma * g.coords(i)[0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_field_is_odd_for_symmetric_models() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[4.0], &[81]).unwrap();
        let sol = solve_hjb(&m, &g, DriftScheme::Hybrid, &HjbOptions::default()).unwrap();
        let w = value_gradient_field(&m, &g, &sol.v).unwrap();
        let n = g.n_nodes();
        for i in 0..n {
            assert!((w[i][0] + w[n - 1 - i][0]).abs() < 1e-7);
        }
    }

    #[test]
    fn nonpositive_value_rejected() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[1.0], &[3]).unwrap();
        assert!(value_gradient_field(&m, &g, &[1.0, 0.0, 1.0]).is_err());
    }
}
