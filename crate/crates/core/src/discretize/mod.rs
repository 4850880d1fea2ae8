//! Markov-chain approximation of the controlled generator `𝓛ᵘ` on a truncated grid.
//!
//! Second-order terms use central differences with a sign-aware splitting of the
//! cross derivatives; first-order terms are upwinded (or centered where the centered
//! stencil keeps every off-diagonal rate nonnegative). The box boundary reflects by
//! mirroring the ghost neighbor back inside, so every row sums to zero.

mod grid;

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use grid::{build_grid, build_grid_with_cap, capped_counts, Grid, DEFAULT_NODE_CAP};

use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::policy::MarkovPolicy;

/// First-order difference rule for the drift term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    /// One-sided differences following the sign of each drift component.
    Upwind,
    /// Central differences where they are monotone, upwind elsewhere.
    #[default]
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlTag {
    Control(usize),
    Policy(String),
    Custom(String),
}

/// Sparse conservative rate matrix in CSR layout (columns sorted, diagonal stored).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag_pos: Vec<usize>,
    tag: ControlTag,
}

impl GeneratorMatrix {
    /// Builds a generator from per-row off-diagonal rates; the diagonal is set to minus
    /// the row total. Duplicate columns are merged.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>, tag: ControlTag) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::invalid("row count mismatch"));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(j, _)| j != i);
            row.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            for (j, v) in row {
                if j >= n {
                    return Err(Error::invalid(format!("column {j} out of range in row {i}")));
                }
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            let total: f64 = merged.iter().map(|e| e.1).sum();
            let pos = merged.partition_point(|&(j, _)| j < i);
            merged.insert(pos, (i, -total));
            diag_pos.push(cols.len() + pos);
            for (j, v) in merged {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
            diag_pos,
            tag,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn tag(&self) -> &ControlTag {
        &self.tag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.vals[self.diag_pos[i]]
    }

    /// `(Q f)_i`.
    pub fn row_dot(&self, i: usize, f: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&j, &v)| v * f[j])
            .sum()
    }

    pub fn mul_vec(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row_dot(i, f)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.row_sums().into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry (`+inf` when there is none).
    pub fn min_off_diagonal(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j != i).map(|(_, v)| v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Strong connectivity of the graph of positive off-diagonal rates.
    pub fn is_irreducible(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j != i && v > 0.0 {
                    reverse[j].push(i);
                }
            }
        }
        let forward_all = self.reach(0, |i, out| {
            out.extend(self.row(i).filter(|&(j, v)| j != i && v > 0.0).map(|(j, _)| j))
        });
        forward_all && self.reach(0, |i, out| out.extend(reverse[i].iter().copied()))
    }

    fn reach(&self, start: usize, neighbors: impl Fn(usize, &mut Vec<usize>)) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        let mut buf = Vec::new();
        while let Some(i) = stack.pop() {
            buf.clear();
            neighbors(i, &mut buf);
            for &j in &buf {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }

    /// Triplets of `Q + diag(extra)`.
    pub(crate) fn triplets_with_diagonal(&self, scale: f64, extra: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let d = if i == j { extra[i] } else { 0.0 };
                out.push((i, j, scale * v + d));
            }
        }
        out
    }

    /// Coordinate text dump, one `row col value` line per stored entry.
    pub fn write_coordinate(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "% {} x {} generator, {} entries", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Convex combination of rows: row `i` is `Σ_k w_ik · row_i(mats[k])`.
    pub fn mix_rows(mats: &[GeneratorMatrix], weights: impl Fn(usize) -> Vec<(usize, f64)>, tag: ControlTag) -> Result<Self> {
        let n = mats[0].n;
        let rows = (0..n)
            .map(|i| {
                weights(i)
                    .into_iter()
                    .flat_map(|(k, w)| mats[k].row(i).filter(move |&(j, _)| j != i).map(move |(j, v)| (j, w * v)))
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows, tag)
    }
}

/// Off-diagonal rates of one row of the discretized `½ tr(A ∇²) + b·∇`.
pub(crate) fn stencil_row(
    grid: &Grid,
    node: usize,
    a: &[f64],
    b: &[f64],
    scheme: DriftScheme,
) -> Result<Vec<(usize, f64)>> {
    let d = grid.dim();
    let h = grid.spacing();
    let multi = grid.multi_index(node);
    let mut out = Vec::with_capacity(2 * d + 2 * d * d);
    let shifted = |axis: usize, delta: isize, base: &[usize]| -> Vec<usize> {
        let mut m = base.to_vec();
        m[axis] = grid.reflect(axis, base[axis], delta);
        m
    };
    for k in 0..d {
        let cross: f64 = (0..d)
            .filter(|&j| j != k)
            .map(|j| a[k * d + j].abs() / (2.0 * h[k] * h[j]))
            .sum();
        let diff = a[k * d + k] / (2.0 * h[k] * h[k]) - cross;
        if diff < -1e-12 * a[k * d + k].abs().max(1.0) / (h[k] * h[k]) {
            return Err(Error::Monotonicity {
                node,
                coords: grid.coords(node),
                detail: format!("axis {k}: diagonal diffusion {:.4e} below cross-term mass {:.4e}", a[k * d + k] / (2.0 * h[k] * h[k]), cross),
            });
        }
        let diff = diff.max(0.0);
        let bk = b[k];
        let (up, down) = match scheme {
            DriftScheme::Hybrid if bk.abs() / (2.0 * h[k]) <= diff => {
                (diff + bk / (2.0 * h[k]), diff - bk / (2.0 * h[k]))
            }
            _ => (diff + bk.max(0.0) / h[k], diff + (-bk).max(0.0) / h[k]),
        };
        if up > 0.0 {
            out.push((grid.node_of(&shifted(k, 1, &multi)), up));
        }
        if down > 0.0 {
            out.push((grid.node_of(&shifted(k, -1, &multi)), down));
        }
        for j in (k + 1)..d {
            let akj = a[k * d + j];
            if akj == 0.0 {
                continue;
            }
            let rate = akj.abs() / (2.0 * h[k] * h[j]);
            let sj: isize = if akj > 0.0 { 1 } else { -1 };
            for sk in [1isize, -1] {
                let m1 = shifted(k, sk, &multi);
                let m2 = shifted(j, sk * sj, &m1);
                out.push((grid.node_of(&m2), rate));
            }
        }
    }
    Ok(out)
}

/// Assembles a generator whose drift at each node is produced by `drift_at(node, x, out)`.
pub fn assemble_with_drift(
    model: &DiffusionModel,
    grid: &Grid,
    scheme: DriftScheme,
    tag: ControlTag,
    drift_at: impl Fn(usize, &[f64], &mut [f64]) + Sync,
) -> Result<GeneratorMatrix> {
    if model.dim() != grid.dim() {
        return Err(Error::invalid(format!(
            "model dimension {} does not match grid dimension {}",
            model.dim(),
            grid.dim()
        )));
    }
    let d = grid.dim();
    let rows: Result<Vec<_>> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|node| {
            let x = grid.coords(node);
            let a = model.diffusion_matrix(&x);
            let mut b = vec![0.0; d];
            drift_at(node, &x, &mut b);
            if b.iter().chain(&a).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite coefficients at node {node} (x = {x:?})")));
            }
            stencil_row(grid, node, &a, &b, scheme)
        })
        .collect();
    GeneratorMatrix::from_rows(grid.n_nodes(), rows?, tag)
}

/// Generator of the chain under the fixed control point `u`.
pub fn assemble_generator(model: &DiffusionModel, grid: &Grid, u: &[f64], scheme: DriftScheme) -> Result<GeneratorMatrix> {
    assemble_with_drift(model, grid, scheme, ControlTag::Custom(format!("{u:?}")), |_, x, out| {
        model.drift_into(x, u, out)
    })
}

/// Generator under a stationary Markov policy; relaxed policies mix the precise rows.
pub fn assemble_policy_generator(
    model: &DiffusionModel,
    grid: &Grid,
    policy: &MarkovPolicy,
    scheme: DriftScheme,
) -> Result<GeneratorMatrix> {
    policy.validate(grid.n_nodes(), model.controls().len())?;
    let controls = model.controls();
    let tag = ControlTag::Policy(policy.tag().to_string());
    if let Some(assign) = policy.precise_controls() {
        return assemble_with_drift(model, grid, scheme, tag, |node, x, out| {
            model.drift_into(x, controls.point(assign[node]), out)
        });
    }
    let mats = (0..controls.len())
        .map(|k| assemble_generator(model, grid, controls.point(k), scheme))
        .collect::<Result<Vec<_>>>()?;
    GeneratorMatrix::mix_rows(&mats, |i| policy.weights_at(i), tag)
}

/// All per-control generators and running costs of a model on a grid.
#[derive(Clone, Debug)]
pub struct ControlledChain {
    model: DiffusionModel,
    grid: Grid,
    scheme: DriftScheme,
    generators: Vec<GeneratorMatrix>,
    /// `costs[k][i] = r(x_i, u_k)`.
    costs: Vec<Vec<f64>>,
}

impl ControlledChain {
    pub fn new(model: &DiffusionModel, grid: &Grid, scheme: DriftScheme) -> Result<Self> {
        let controls = model.controls();
        let generators = (0..controls.len())
            .map(|k| {
                let mut q = assemble_generator(model, grid, controls.point(k), scheme)?;
                q.tag = ControlTag::Control(k);
                Ok(q)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut chain = Self {
            model: model.clone(),
            grid: grid.clone(),
            scheme,
            generators,
            costs: Vec::new(),
        };
        chain.costs = chain.evaluate_costs(|x, u| model.cost(x, u))?;
        Ok(chain)
    }

    fn evaluate_costs(&self, cost: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Result<Vec<Vec<f64>>> {
        let controls = self.model.controls();
        let costs: Vec<Vec<f64>> = (0..controls.len())
            .map(|k| {
                (0..self.grid.n_nodes())
                    .into_par_iter()
                    .map(|i| cost(&self.grid.coords(i), controls.point(k)))
                    .collect()
            })
            .collect();
        if let Some((k, i)) = costs
            .iter()
            .enumerate()
            .find_map(|(k, row)| row.iter().position(|v| !v.is_finite()).map(|i| (k, i)))
        {
            return Err(Error::invalid(format!("non-finite running cost at node {i}, control {k}")));
        }
        Ok(costs)
    }

    /// Same generators with the running cost replaced.
    pub fn with_cost(&self, cost: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Result<Self> {
        let mut out = self.clone();
        out.costs = self.evaluate_costs(cost)?;
        Ok(out)
    }

    /// Same generators with every cost multiplied by `factor`.
    pub fn scale_costs(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.costs {
            for v in row {
                *v *= factor;
            }
        }
        out
    }

    /// Adds `shift` to the running cost of every (node, control) pair.
    pub fn shift_costs(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.costs {
            for v in row {
                *v += shift;
            }
        }
        out
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scheme(&self) -> DriftScheme {
        self.scheme
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn n_controls(&self) -> usize {
        self.generators.len()
    }

    pub fn generator(&self, k: usize) -> &GeneratorMatrix {
        &self.generators[k]
    }

    pub fn generators(&self) -> &[GeneratorMatrix] {
        &self.generators
    }

    pub fn cost(&self, k: usize, node: usize) -> f64 {
        self.costs[k][node]
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn policy_generator(&self, policy: &MarkovPolicy) -> Result<GeneratorMatrix> {
        policy.validate(self.n_nodes(), self.n_controls())?;
        GeneratorMatrix::mix_rows(&self.generators, |i| policy.weights_at(i), ControlTag::Policy(policy.tag().to_string()))
    }

    pub fn policy_cost(&self, policy: &MarkovPolicy) -> Result<Vec<f64>> {
        policy.validate(self.n_nodes(), self.n_controls())?;
        Ok((0..self.n_nodes())
            .map(|i| policy.weights_at(i).into_iter().map(|(k, w)| w * self.costs[k][i]).sum())
            .collect())
    }

    /// `(Qᵏ f)_i + c_k(i) f_i`.
    pub fn twisted_row(&self, k: usize, node: usize, f: &[f64]) -> f64 {
        self.generators[k].row_dot(node, f) + self.costs[k][node] * f[node]
    }
}
