//! Ergodic zero-sum game between the control `u` (minimizer) and an auxiliary drift `w`
//! (maximizer) with running payoff `r∧L* − ½‖χ_l w‖²` and drift perturbation `χ_l Σ w`.
//!
//! The maximizer is parametrized by `w̃ = χ_l w`, which enters the drift as `Σ w̃` and the
//! payoff as `−½‖w̃‖²` subject to `‖w̃‖ ≤ χ_l l`. Both players are updated by policy
//! iteration: the minimizer in an outer loop, the maximizer to optimality in an inner loop
//! for each fixed minimizer policy. Each evaluation is an average-cost Poisson solve.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_with_drift, stencil_row, ControlTag, ControlledChain, DriftScheme, GeneratorMatrix, Grid};
use crate::error::{Error, Result};
use crate::linalg::LinearSolver;
use crate::model::{norm, DiffusionModel};
use crate::perturb::PerturbationFamily;
use crate::policy::MarkovPolicy;

/// Maximizes `g·w − ½‖w‖²` over `‖w‖ ≤ l`; returns the maximizer and the maximum.
pub fn inner_max_w(g: &[f64], l: f64) -> (Vec<f64>, f64) {
    let n = norm(g);
    if n <= l {
        (g.to_vec(), 0.5 * n * n)
    } else if n == 0.0 {
        (vec![0.0; g.len()], 0.0)
    } else {
        (g.iter().map(|v| l * v / n).collect(), l * n - 0.5 * l * l)
    }
}

/// Radial cutoff: 1 on the ball of radius `l/2`, cosine taper to 0 at radius `l`.
pub fn chi_l(radius: f64, l: f64) -> f64 {
    if radius <= 0.5 * l {
        1.0
    } else if radius >= l {
        0.0
    } else {
        let s = (radius - 0.5 * l) / (0.5 * l);
        0.5 * (1.0 + (PI * s).cos())
    }
}

/// Default truncation level paired with the drift bound `l`.
pub fn default_l_star(l: f64) -> f64 {
    2.0 * l + 10.0
}

/// Grid field `w` with `‖w‖ ≤ l` and `w = 0` wherever `χ_l = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryPolicy {
    field: Vec<Vec<f64>>,
    l: f64,
    chi: Vec<f64>,
    #[serde(skip)]
    grid: Option<Grid>,
}

impl AuxiliaryPolicy {
    pub fn new(grid: &Grid, field: Vec<Vec<f64>>, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::invalid("auxiliary bound l must be positive"));
        }
        if field.len() != grid.n_nodes() || field.iter().any(|w| w.len() != grid.dim()) {
            return Err(Error::invalid("auxiliary field shape does not match the grid"));
        }
        let chi: Vec<f64> = (0..grid.n_nodes()).map(|i| chi_l(grid.norm_of(i), l)).collect();
        for (i, w) in field.iter().enumerate() {
            let n = norm(w);
            if !n.is_finite() || n > l * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("auxiliary field norm {n} exceeds l = {l} at node {i}")));
            }
            if chi[i] == 0.0 && n != 0.0 {
                return Err(Error::invalid(format!("auxiliary field nonzero outside the cutoff support at node {i}")));
            }
        }
        Ok(Self {
            field,
            l,
            chi,
            grid: Some(grid.clone()),
        })
    }

    pub fn zero(grid: &Grid, l: f64) -> Result<Self> {
        Self::new(grid, vec![vec![0.0; grid.dim()]; grid.n_nodes()], l)
    }

    /// Builds the field from the effective perturbation `w̃ = χ_l w`.
    fn from_effective(grid: &Grid, effective: &[Vec<f64>], l: f64) -> Result<Self> {
        let field = effective
            .iter()
            .enumerate()
            .map(|(i, wt)| {
                let c = chi_l(grid.norm_of(i), l);
                if c == 0.0 {
                    return vec![0.0; wt.len()];
                }
                let mut w: Vec<f64> = wt.iter().map(|v| v / c).collect();
                let n = norm(&w);
                if n > l {
                    w.iter_mut().for_each(|v| *v *= l / n);
                }
                w
            })
            .collect();
        Self::new(grid, field, l)
    }

    pub fn field(&self) -> &[Vec<f64>] {
        &self.field
    }

    pub fn bound(&self) -> f64 {
        self.l
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn max_norm(&self) -> f64 {
        self.field.iter().map(|w| norm(w)).fold(0.0, f64::max)
    }

    /// `χ_l(x) w(x)` with `w` interpolated multilinearly between nodes.
    pub fn effective_at(&self, x: &[f64]) -> Vec<f64> {
        let grid = self.grid.as_ref().expect("auxiliary policy without grid");
        let d = grid.dim();
        let c = chi_l(norm(x), self.l);
        if c == 0.0 {
            return vec![0.0; d];
        }
        (0..d)
            .map(|k| {
                let comp: Vec<f64> = self.field.iter().map(|w| w[k]).collect();
                c * grid.interpolate(&comp, x).0
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameOptions {
    /// Stopping tolerance on value changes.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for GameOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_outer: 100,
            max_inner: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub value: f64,
    /// Bias with `Ψ(origin_node) = 0`.
    pub bias: Vec<f64>,
    pub policy: MarkovPolicy,
    pub aux: AuxiliaryPolicy,
    /// Max over nodes of the min-max minus max-min row values at the solution.
    pub residual: f64,
    /// Max over nodes of `|min_u max_w H_i − ρ|`.
    pub hjb_residual: f64,
    /// Game value after each outer (minimizer) iteration.
    pub history: Vec<f64>,
    pub inner_iterations: usize,
}

/// Solves `QΨ + f = ρ1` with `Ψ(origin) = 0`: column `origin` carries `−ρ` instead.
pub fn solve_poisson(q: &GeneratorMatrix, f: &[f64], origin: usize) -> Result<(f64, Vec<f64>)> {
    let n = q.n();
    let mut trip = Vec::with_capacity(q.nnz() + n);
    for i in 0..n {
        for (j, v) in q.row(i) {
            if j != origin {
                trip.push((i, j, v));
            }
        }
        trip.push((i, origin, -1.0));
    }
    let mut solver = LinearSolver::new(n);
    let mut z: Vec<f64> = f.iter().map(|v| -v).collect();
    solver
        .factor(&trip)
        .and_then(|_| solver.solve(&mut z))
        .map_err(|e| Error::Reducible(format!("average-cost Poisson system is singular ({e})")))?;
    let rho = z[origin];
    z[origin] = 0.0;
    Ok((rho, z))
}

/// Node-level data reused across iterations.
struct GameData<'a> {
    chain: &'a ControlledChain,
    diff: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    /// `drift[k][i]`.
    drift: Vec<Vec<Vec<f64>>>,
    /// `min(r, L*)` per control and node.
    cost: Vec<Vec<f64>>,
    /// `χ_l l` per node (zero when the maximizer is disabled).
    radius: Vec<f64>,
}

impl<'a> GameData<'a> {
    fn new(chain: &'a ControlledChain, l: Option<f64>, l_star: f64) -> Self {
        let grid = chain.grid();
        let model = chain.model();
        let n = grid.n_nodes();
        let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.coords(i)).collect();
        let diff = coords.iter().map(|x| model.diffusion_matrix(x)).collect();
        let sigma = coords.iter().map(|x| model.sigma(x)).collect();
        let controls = model.controls();
        let drift = (0..controls.len())
            .map(|k| coords.iter().map(|x| model.drift(x, controls.point(k))).collect())
            .collect();
        let cost = chain
            .costs()
            .iter()
            .map(|row| row.iter().map(|&c| c.min(l_star)).collect())
            .collect();
        let radius = match l {
            Some(l) => (0..n).map(|i| chi_l(grid.norm_of(i), l) * l).collect(),
            None => vec![0.0; n],
        };
        Self {
            chain,
            diff,
            sigma,
            drift,
            cost,
            radius,
        }
    }

    fn dim(&self) -> usize {
        self.chain.grid().dim()
    }

    fn total_drift(&self, k: usize, node: usize, wt: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let s = &self.sigma[node];
        (0..d)
            .map(|i| self.drift[k][node][i] + (0..d).map(|j| s[i * d + j] * wt[j]).sum::<f64>())
            .collect()
    }

    fn generator(&self, v: &[usize], wt: &[Vec<f64>]) -> Result<GeneratorMatrix> {
        let chain = self.chain;
        assemble_with_drift(chain.model(), chain.grid(), chain.scheme(), ControlTag::Custom("game".into()), |node, _x, out| {
            out.copy_from_slice(&self.total_drift(v[node], node, &wt[node]))
        })
    }

    /// Row value `Σ_j q_ij(Ψ_j − Ψ_i) + r∧L* − ½‖w̃‖²` under control `k` and perturbation `wt`.
    fn row_value(&self, k: usize, node: usize, wt: &[f64], psi: &[f64]) -> Result<f64> {
        let b = self.total_drift(k, node, wt);
        let rates = stencil_row(self.chain.grid(), node, &self.diff[node], &b, self.chain.scheme())?;
        let gen: f64 = rates.iter().map(|&(j, q)| q * (psi[j] - psi[node])).sum();
        Ok(gen + self.cost[k][node] - 0.5 * wt.iter().map(|v| v * v).sum::<f64>())
    }

    /// Maximizer's best response `w̃ = argmax_{‖w̃‖ ≤ χ_l l} w̃·Σᵀ∇Ψ − ½‖w̃‖²`, using the
    /// gradient seen by the centered stencil.
    fn best_response(&self, psi: &[f64]) -> Vec<Vec<f64>> {
        let grid = self.chain.grid();
        let d = self.dim();
        (0..grid.n_nodes())
            .into_par_iter()
            .map(|node| {
                if self.radius[node] == 0.0 {
                    return vec![0.0; d];
                }
                let grad = stencil_gradient(grid, psi, node);
                let s = &self.sigma[node];
                let g: Vec<f64> = (0..d).map(|k| (0..d).map(|i| s[i * d + k] * grad[i]).sum()).collect();
                inner_max_w(&g, self.radius[node]).0
            })
            .collect()
    }

    /// Howard improvement for the maximizer: a node switches to the closed-form response only
    /// when that strictly raises its row value. Where the stencil is upwinded the closed form
    /// need not be the exact row maximizer, and unconditional switching can cycle.
    fn improve_aux(&self, v: &[usize], wt: &[Vec<f64>], psi: &[f64]) -> Result<Vec<Vec<f64>>> {
        let proposal = self.best_response(psi);
        proposal
            .into_par_iter()
            .enumerate()
            .map(|(node, cand)| {
                if cand == wt[node] {
                    return Ok(cand);
                }
                let new = self.row_value(v[node], node, &cand, psi)?;
                let old = self.row_value(v[node], node, &wt[node], psi)?;
                Ok(if new > old + 1e-12 * new.abs().max(old.abs()).max(1.0) {
                    cand
                } else {
                    wt[node].clone()
                })
            })
            .collect()
    }

    fn improve_controls(&self, v: &[usize], wt: &[Vec<f64>], psi: &[f64]) -> Result<Vec<usize>> {
        (0..v.len())
            .into_par_iter()
            .map(|node| {
                let vals = (0..self.chain.n_controls())
                    .map(|k| self.row_value(k, node, &wt[node], psi))
                    .collect::<Result<Vec<f64>>>()?;
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let tie = 1e-12 * vals.iter().map(|x| x.abs()).fold(1.0, f64::max);
                let cur = v[node];
                Ok(if vals[cur] <= min + tie {
                    cur
                } else {
                    vals.iter().position(|&x| x <= min + tie).unwrap_or(cur)
                })
            })
            .collect()
    }
}

/// Central-difference gradient with reflected neighbors, matching the generator stencil.
fn stencil_gradient(grid: &Grid, f: &[f64], node: usize) -> Vec<f64> {
    let multi = grid.multi_index(node);
    let h = grid.spacing();
    (0..grid.dim())
        .map(|k| {
            let mut up = multi.clone();
            up[k] = grid.reflect(k, multi[k], 1);
            let mut dn = multi.clone();
            dn[k] = grid.reflect(k, multi[k], -1);
            (f[grid.node_of(&up)] - f[grid.node_of(&dn)]) / (2.0 * h[k])
        })
        .collect()
}

struct InnerResult {
    rho: f64,
    psi: Vec<f64>,
    wt: Vec<Vec<f64>>,
    iterations: usize,
}

/// Maximizer's policy iteration for a fixed minimizer policy.
fn inner_solve(data: &GameData, v: &[usize], mut wt: Vec<Vec<f64>>, opts: &GameOptions) -> Result<InnerResult> {
    let origin = data.chain.grid().origin_node();
    let mut prev: Option<f64> = None;
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_inner {
        let q = data.generator(v, &wt)?;
        let f: Vec<f64> = (0..v.len())
            .map(|i| data.cost[v[i]][i] - 0.5 * wt[i].iter().map(|x| x * x).sum::<f64>())
            .collect();
        let (rho, psi) = solve_poisson(&q, &f, origin)?;
        let next = data.improve_aux(v, &wt, &psi)?;
        let change = next
            .iter()
            .zip(&wt)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        let settled = prev.is_some_and(|p| (rho - p).abs() <= opts.tol * rho.abs().max(1.0));
        if change == 0.0 || settled {
            return Ok(InnerResult {
                rho,
                psi,
                wt,
                iterations: it,
            });
        }
        if let Some(p) = prev {
            last_change = (rho - p).abs();
        }
        prev = Some(rho);
        wt = next;
    }
    Err(Error::NonConvergence {
        solver: "game inner maximization",
        iterations: opts.max_inner,
        last_change,
    })
}

fn initial_policy(chain: &ControlledChain, given: Option<&MarkovPolicy>) -> Result<Vec<usize>> {
    match given {
        Some(p) => {
            p.validate(chain.n_nodes(), chain.n_controls())?;
            p.precise_controls()
                .map(|c| c.to_vec())
                .ok_or_else(|| Error::invalid("game policies must be precise"))
        }
        None => Ok(crate::hjb::greedy_policy(chain).precise_controls().unwrap().to_vec()),
    }
}

fn run_game(
    chain: &ControlledChain,
    l: Option<f64>,
    l_star: f64,
    frozen: Option<&MarkovPolicy>,
    opts: &GameOptions,
) -> Result<GameSolution> {
    if let Some(l) = l {
        if !(l > 0.0) {
            return Err(Error::invalid("auxiliary bound l must be positive"));
        }
    }
    if !(l_star > 0.0) {
        return Err(Error::invalid("truncation level L* must be positive"));
    }
    let data = GameData::new(chain, l, l_star);
    let d = chain.grid().dim();
    let mut v = initial_policy(chain, frozen)?;
    let mut wt = vec![vec![0.0; d]; chain.n_nodes()];
    let mut history = Vec::new();
    let mut inner_total = 0;
    for _ in 0..opts.max_outer {
        let inner = if l.is_some() {
            inner_solve(&data, &v, wt, opts)?
        } else {
            let q = data.generator(&v, &wt)?;
            let f: Vec<f64> = (0..v.len()).map(|i| data.cost[v[i]][i]).collect();
            let (rho, psi) = solve_poisson(&q, &f, chain.grid().origin_node())?;
            InnerResult {
                rho,
                psi,
                wt: wt.clone(),
                iterations: 1,
            }
        };
        inner_total += inner.iterations;
        history.push(inner.rho);
        wt = inner.wt;
        let next = if frozen.is_some() {
            v.clone()
        } else {
            data.improve_controls(&v, &wt, &inner.psi)?
        };
        if next == v {
            let (residual, hjb_residual) = isaacs_residuals(&data, &inner.psi, inner.rho, frozen.map(|_| v.as_slice()))?;
            let aux = match l {
                Some(l) => AuxiliaryPolicy::from_effective(chain.grid(), &wt, l)?,
                None => AuxiliaryPolicy::zero(chain.grid(), 1.0)?,
            };
            return Ok(GameSolution {
                value: inner.rho,
                bias: inner.psi,
                policy: MarkovPolicy::precise(v, "game minimizer"),
                aux,
                residual,
                hjb_residual,
                history,
                inner_iterations: inner_total,
            });
        }
        v = next;
    }
    Err(Error::NonConvergence {
        solver: "game outer minimization",
        iterations: opts.max_outer,
        last_change: history.windows(2).last().map(|w| w[0] - w[1]).unwrap_or(f64::NAN),
    })
}

/// Per-node min-max and max-min row values at `Ψ`. The max over `w̃` uses the closed-form best
/// response; the max-min side additionally tries `w̃ = 0` and two radial rescalings.
fn isaacs_residuals(data: &GameData, psi: &[f64], rho: f64, frozen: Option<&[usize]>) -> Result<(f64, f64)> {
    let best = data.best_response(psi);
    let controls: Vec<usize> = (0..data.chain.n_controls()).collect();
    let out: Vec<(f64, f64)> = (0..psi.len())
        .into_par_iter()
        .map(|node| {
            let ks: &[usize] = match frozen {
                Some(v) => std::slice::from_ref(&v[node]),
                None => &controls,
            };
            let min_over = |wt: &[f64]| -> Result<f64> {
                ks.iter()
                    .map(|&k| data.row_value(k, node, wt, psi))
                    .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
            };
            let minmax = min_over(&best[node])?;
            let mut maxmin = f64::NEG_INFINITY;
            let w = &best[node];
            let n = norm(w);
            for s in [1.0, 0.0, 0.99, 1.01] {
                let mut c: Vec<f64> = w.iter().map(|v| s * v).collect();
                if s * n > data.radius[node] && n > 0.0 {
                    c.iter_mut().for_each(|v| *v *= data.radius[node] / (s * n));
                }
                maxmin = maxmin.max(min_over(&c)?);
            }
            Ok(((minmax - maxmin).abs(), (minmax - rho).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1))))
}

/// Game with both players optimizing; the chain's costs play the role of `r^ε`.
pub fn solve_ergodic_game_on(chain: &ControlledChain, l: f64, l_star: f64, opts: &GameOptions) -> Result<GameSolution> {
    run_game(chain, Some(l), l_star, None, opts)
}

/// Builds the chain (with `r^ε` when a perturbation family is given) and solves the game.
#[allow(clippy::too_many_arguments)]
pub fn solve_ergodic_game(
    model: &DiffusionModel,
    grid: &Grid,
    scheme: DriftScheme,
    perturbation: Option<(&PerturbationFamily, f64)>,
    l: f64,
    l_star: f64,
    opts: &GameOptions,
) -> Result<GameSolution> {
    let chain = ControlledChain::new(model, grid, scheme)?;
    let chain = match perturbation {
        Some((fam, eps)) => fam.perturbed_chain(&chain, eps)?,
        None => chain,
    };
    solve_ergodic_game_on(&chain, l, l_star, opts)
}

/// Maximizer's problem with the minimizer frozen at `policy`; returns the value and `w*`.
pub fn sup_w_fixed_policy(
    chain: &ControlledChain,
    policy: &MarkovPolicy,
    l: f64,
    l_star: f64,
    opts: &GameOptions,
) -> Result<(f64, AuxiliaryPolicy)> {
    let sol = run_game(chain, Some(l), l_star, Some(policy), opts)?;
    Ok((sol.value, sol.aux))
}

/// Average-cost (risk-neutral) optimal value by policy iteration with `w ≡ 0`.
pub fn solve_average_cost(chain: &ControlledChain, opts: &GameOptions) -> Result<GameSolution> {
    run_game(chain, None, f64::INFINITY, None, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameSweepPoint {
    pub l: f64,
    pub l_star: f64,
    pub rho: f64,
    /// `ρ_l − ρ_{previous l}`; zero for the first entry.
    pub increment: f64,
    pub residual: f64,
}

/// Solves the game for each `l` (concurrently) with `L* = l_rule(l)`.
pub fn game_value_sweep(
    chain: &ControlledChain,
    l_list: &[f64],
    l_rule: &(dyn Fn(f64) -> f64 + Sync),
    opts: &GameOptions,
) -> Result<Vec<GameSweepPoint>> {
    if l_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("l_list must be strictly increasing"));
    }
    let sols = l_list
        .par_iter()
        .map(|&l| solve_ergodic_game_on(chain, l, l_rule(l), opts).map(|s| (l, s)))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<GameSweepPoint> = Vec::with_capacity(sols.len());
    for (l, s) in sols {
        let increment = out.last().map(|p| s.value - p.rho).unwrap_or(0.0);
        out.push(GameSweepPoint {
            l,
            l_star: l_rule(l),
            rho: s.value,
            increment,
            residual: s.residual.max(s.hjb_residual),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::eigensolve::{policy_value_on, EigenOptions};
    use crate::hjb::{solve_hjb_on, value_gradient_field, HjbOptions};
    use crate::model::builtin_ou_lq;

    #[test]
    fn inner_max_examples() {
        let (w, p) = inner_max_w(&[0.0, 0.0], 1.0);
        assert_eq!((w, p), (vec![0.0, 0.0], 0.0));
        let (w, p) = inner_max_w(&[3.0, 4.0], 10.0);
        assert_eq!(w, vec![3.0, 4.0]);
        assert!((p - 12.5).abs() < 1e-15);
        let (w, p) = inner_max_w(&[3.0, 4.0], 1.0);
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        assert!((p - 4.5).abs() < 1e-15);
    }

    #[test]
    fn cutoff_plateaus() {
        assert_eq!(chi_l(0.0, 4.0), 1.0);
        assert_eq!(chi_l(2.0, 4.0), 1.0);
        assert!((chi_l(3.0, 4.0) - 0.5).abs() < 1e-15);
        assert_eq!(chi_l(4.0, 4.0), 0.0);
        assert_eq!(chi_l(9.0, 4.0), 0.0);
    }

    #[test]
    fn auxiliary_policy_validation() {
        let g = build_grid(&[4.0], &[9]).unwrap();
        let mut f = vec![vec![0.0]; 9];
        f[0] = vec![1.0];
        assert!(AuxiliaryPolicy::new(&g, f.clone(), 2.0).is_err());
        f[0] = vec![0.0];
        f[4] = vec![3.0];
        assert!(AuxiliaryPolicy::new(&g, f.clone(), 2.0).is_err());
        f[4] = vec![2.0];
        assert!(AuxiliaryPolicy::new(&g, f, 2.0).is_ok());
    }

    fn ou(q: f64) -> (ControlledChain, Grid) {
        let m = builtin_ou_lq(-1.0, 1.0, q, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[6.0], &[241]).unwrap();
        (ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap(), g)
    }

    #[test]
    fn poisson_recovers_stationary_average() {
        let (chain, g) = ou(0.75);
        let q = chain.generator(0);
        let f: Vec<f64> = (0..g.n_nodes()).map(|i| g.coords(i)[0].powi(2)).collect();
        let (rho, psi) = solve_poisson(q, &f, g.origin_node()).unwrap();
        // stationary variance ½ for dX = −X dt + dW
        assert!((rho - 0.5).abs() < 1e-3, "{rho}");
        assert_eq!(psi[g.origin_node()], 0.0);
    }

    #[test]
    fn zero_cost_game_is_trivial() {
        let (chain, g) = ou(0.0);
        let sol = solve_ergodic_game_on(&chain, 2.0, 14.0, &GameOptions::default()).unwrap();
        assert!(sol.value.abs() < 1e-12);
        assert!(sol.aux.max_norm() < 1e-9);
        assert!(sol.bias.iter().all(|v| v.abs() < 1e-9));
        assert_eq!(sol.bias.len(), g.n_nodes());
    }

    #[test]
    fn ou_game_matches_eigenvalue() {
        let (chain, g) = ou(0.75);
        let policy = MarkovPolicy::constant(g.n_nodes(), 0);
        let (value, w) = sup_w_fixed_policy(&chain, &policy, 8.0, 26.0, &GameOptions::default()).unwrap();
        assert!((value - 0.25).abs() < 1e-2, "{value}");
        let pair = policy_value_on(&chain, &policy, &EigenOptions::default()).unwrap();
        // quadratic and exponential discretizations of the log transform differ at O(h²)
        assert!(value <= pair.value + 1e-3);
        let omega = value_gradient_field(chain.model(), &g, &pair.vector).unwrap();
        for i in 0..g.n_nodes() {
            if g.norm_of(i) <= 3.0 {
                assert!((w.field()[i][0] - omega[i][0]).abs() <= 5e-2);
            }
        }
        for (i, f) in w.field().iter().enumerate() {
            assert!(norm(f) <= 8.0);
            if g.norm_of(i) >= 8.0 {
                assert_eq!(f[0], 0.0);
            }
        }
    }

    #[test]
    fn tiny_l_reduces_to_average_cost() {
        let m = builtin_ou_lq(-1.0, 1.0, 1.0, 2.0, 2.0, 9).unwrap();
        let g = build_grid(&[4.0], &[81]).unwrap();
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let game = solve_ergodic_game_on(&chain, 1e-6, 1e6, &GameOptions::default()).unwrap();
        let avg = solve_average_cost(&chain, &GameOptions::default()).unwrap();
        assert!(game.aux.max_norm() <= 1e-6);
        assert!((game.value - avg.value).abs() < 1e-6);
        assert!(game.residual < 1e-8);
    }

    #[test]
    fn lq_game_sweep_is_monotone_and_converges() {
        let m = builtin_ou_lq(-1.0, 1.0, 1.0, 2.0, 2.0, 41).unwrap();
        let g = build_grid(&[5.0], &[101]).unwrap();
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let sweep = game_value_sweep(&chain, &[1.0, 2.0, 4.0, 8.0], &default_l_star, &GameOptions::default()).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].rho >= w[0].rho - 1e-6);
        }
        let hjb = solve_hjb_on(&chain, &HjbOptions::default()).unwrap();
        let last = sweep.last().unwrap().rho;
        assert!((last - hjb.value).abs() < 1e-2, "{last} vs {}", hjb.value);
        assert!(sweep.iter().all(|p| p.residual < 1e-6));
    }
}
