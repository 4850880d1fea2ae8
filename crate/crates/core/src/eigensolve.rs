//! Principal (Perron) eigenpairs of `Q + diag(r)` for conservative generators `Q`.
//!
//! The solver is shifted inverse power iteration with shift above the current upper
//! Collatz–Wielandt bound, which keeps `sI − A` a nonsingular M-matrix so every
//! iterate stays strictly positive. On exit the bracket
//! `min_i (Aψ)_i/ψ_i ≤ λ ≤ max_i (Aψ)_i/ψ_i` certifies the eigenvalue.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::discretize::{ControlledChain, DriftScheme, GeneratorMatrix, Grid};
use crate::error::{Error, Result};
use crate::linalg::LinearSolver;
use crate::model::DiffusionModel;
use crate::policy::MarkovPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Target width of the Collatz–Wielandt bracket.
    pub tol: f64,
    pub max_iter: usize,
    /// Node at which the eigenvector is normalized to 1.
    pub normalize_at: usize,
    /// Warm start; must be strictly positive.
    #[serde(skip)]
    pub initial: Option<Vec<f64>>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
            normalize_at: 0,
            initial: None,
        }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub normalization_node: usize,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub iterations: usize,
}

impl Eigenpair {
    pub fn bracket_width(&self) -> f64 {
        self.cw_upper - self.cw_lower
    }

    /// `max_i |(Aψ)_i/ψ_i − λ|`, the residual of the multiplicative Poisson equation.
    pub fn relative_residual(&self, q: &GeneratorMatrix, r: &[f64]) -> f64 {
        (0..q.n())
            .map(|i| ((q.row_dot(i, &self.vector) + r[i] * self.vector[i]) / self.vector[i] - self.value).abs())
            .fold(0.0, f64::max)
    }

    pub fn log_vector(&self) -> Vec<f64> {
        self.vector.iter().map(|v| v.ln()).collect()
    }

    /// CSV with one row per node: coordinates then `psi`.
    pub fn write_csv(&self, grid: &Grid, mut w: impl Write) -> io::Result<()> {
        let header: Vec<String> = (0..grid.dim()).map(|k| format!("x{k}")).chain(["psi".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (node, v) in self.vector.iter().enumerate() {
            let coords: Vec<String> = grid.coords(node).iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{},{v:e}", coords.join(","))?;
        }
        Ok(())
    }
}

/// Iterations without a 1% bracket improvement after which the solve is abandoned.
const STALL_LIMIT: usize = 50;

/// Collatz–Wielandt bounds and the rounding floor of the ratios they are built from.
fn cw_bounds(q: &GeneratorMatrix, r: &[f64], psi: &[f64]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut magnitude: f64 = 0.0;
    for i in 0..q.n() {
        let ratio = (q.row_dot(i, psi) + r[i] * psi[i]) / psi[i];
        let m = q.row(i).map(|(j, v)| v.abs() * psi[j]).sum::<f64>() / psi[i] + r[i].abs();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        magnitude = magnitude.max(m);
    }
    (lo, hi, 16.0 * f64::EPSILON * magnitude)
}

fn normalize_max(psi: &mut [f64]) {
    let m = psi.iter().copied().fold(0.0, f64::max);
    for v in psi.iter_mut() {
        *v /= m;
    }
}

/// Perron eigenpair of `Q + diag(r)`.
pub fn principal_eigenpair(q: &GeneratorMatrix, r: &[f64], opts: &EigenOptions) -> Result<Eigenpair> {
    let n = q.n();
    if r.len() != n {
        return Err(Error::invalid(format!("cost vector has {} entries, generator has {n} rows", r.len())));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cost vector must be finite"));
    }
    if opts.normalize_at >= n {
        return Err(Error::invalid("normalization node out of range"));
    }
    if !q.is_irreducible() {
        return Err(Error::Reducible(format!("{:?}", q.tag())));
    }
    let mut psi = match &opts.initial {
        Some(v) if v.len() == n && v.iter().all(|x| *x > 0.0 && x.is_finite()) => v.clone(),
        _ => vec![1.0; n],
    };
    normalize_max(&mut psi);
    let (mut lo, mut hi, mut floor) = cw_bounds(q, r, &psi);
    let r_inf = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let margin = f64::max(1.0, 1e-2 * r_inf);
    let mut shift = f64::INFINITY;
    let mut solver = LinearSolver::new(n);
    let mut iterations = 0;
    let mut best_width = f64::INFINITY;
    let mut stalled = 0;

    while hi - lo > opts.tol.max(floor) {
        if hi - lo < 0.99 * best_width {
            best_width = hi - lo;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if iterations >= opts.max_iter || stalled >= STALL_LIMIT {
            return Err(Error::NonConvergence {
                solver: "principal_eigenpair",
                iterations,
                last_change: hi - lo,
            });
        }
        // The shift tracks the upper bracket end; it stays strictly above λ, so the
        // shifted matrix remains a nonsingular M-matrix and iterates stay positive.
        // While the bracket stalls the offset shrinks, which separates λ from a close
        // second eigenvalue of a nearly decoupled chain.
        let delta = ((hi - lo) * 0.5f64.powi(stalled as i32)).clamp(1e-7 * (1.0 + hi.abs()), margin);
        let target = hi + delta;
        // Small systems are cheap to refactor, so their shift follows the bracket every step.
        let refactor = if n <= 96 { target < shift } else { target < hi + 0.5 * (shift - hi) };
        if refactor {
            shift = target;
            let neg_r: Vec<f64> = r.iter().map(|v| shift - v).collect();
            solver.factor(&q.triplets_with_diagonal(-1.0, &neg_r))?;
        }
        let rhs = psi.clone();
        solver.solve(&mut psi)?;
        // One refinement step makes the solve accurate relative to each entry, which the
        // ratios at nodes where ψ is tiny need.
        let mut res: Vec<f64> = (0..n)
            .map(|i| rhs[i] + q.row_dot(i, &psi) - (shift - r[i]) * psi[i])
            .collect();
        solver.solve(&mut res)?;
        for (p, d) in psi.iter_mut().zip(&res) {
            *p += d;
        }
        if psi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Linalg("inverse iteration lost positivity".into()));
        }
        normalize_max(&mut psi);
        (lo, hi, floor) = cw_bounds(q, r, &psi);
        iterations += 1;
    }

    let anchor = psi[opts.normalize_at];
    for v in psi.iter_mut() {
        *v /= anchor;
    }
    Ok(Eigenpair {
        value: 0.5 * (lo + hi),
        vector: psi,
        normalization_node: opts.normalize_at,
        cw_lower: lo,
        cw_upper: hi,
        iterations,
    })
}

/// Risk-sensitive value of a stationary Markov policy on a prepared chain.
pub fn policy_value_on(chain: &ControlledChain, policy: &MarkovPolicy, opts: &EigenOptions) -> Result<Eigenpair> {
    let q = chain.policy_generator(policy)?;
    let r = chain.policy_cost(policy)?;
    let opts = EigenOptions {
        normalize_at: chain.grid().origin_node(),
        ..opts.clone()
    };
    principal_eigenpair(&q, &r, &opts)
}

/// Risk-sensitive value of a stationary Markov policy: the Perron eigenpair of `Q^v + diag(r^v)`.
pub fn policy_value(
    model: &DiffusionModel,
    grid: &Grid,
    policy: &MarkovPolicy,
    scheme: DriftScheme,
    opts: &EigenOptions,
) -> Result<Eigenpair> {
    let chain = ControlledChain::new(model, grid, scheme)?;
    policy_value_on(&chain, policy, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub eigenpair: Eigenpair,
    /// `min (scale·h^v − λ)` over nodes outside the core ball.
    pub drift_margin: f64,
    pub core_radius: f64,
}

/// Eigenpair of `Q^v + scale·diag(h^v)`; its eigenvector is a discrete Foster–Lyapunov function.
pub fn foster_lyapunov_certificate(
    chain: &ControlledChain,
    policy: &MarkovPolicy,
    h_values: &[f64],
    scale: f64,
    core_radius: f64,
    opts: &EigenOptions,
) -> Result<LyapunovCertificate> {
    if !(scale >= 0.0) {
        return Err(Error::invalid("scale must be nonnegative"));
    }
    let q = chain.policy_generator(policy)?;
    if h_values.len() != q.n() {
        return Err(Error::invalid("h must have one value per node"));
    }
    let weighted: Vec<f64> = h_values.iter().map(|h| scale * h).collect();
    let opts = EigenOptions {
        normalize_at: chain.grid().origin_node(),
        ..opts.clone()
    };
    let eigenpair = principal_eigenpair(&q, &weighted, &opts)?;
    let grid = chain.grid();
    let drift_margin = (0..q.n())
        .filter(|&i| grid.norm_of(i) > core_radius)
        .map(|i| weighted[i] - eigenpair.value)
        .fold(f64::INFINITY, f64::min);
    Ok(LyapunovCertificate {
        eigenpair,
        drift_margin,
        core_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_grid, ControlTag};
    use crate::model::builtin_ou_lq;

    fn two_state() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(2, vec![vec![(1, 1.0)], vec![(0, 1.0)]], ControlTag::Custom("2".into())).unwrap()
    }

    #[test]
    fn two_state_zero_cost() {
        let p = principal_eigenpair(&two_state(), &[0.0, 0.0], &EigenOptions::default()).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.vector, vec![1.0, 1.0]);
    }

    #[test]
    fn two_state_golden_ratio() {
        let p = principal_eigenpair(&two_state(), &[0.0, 1.0], &EigenOptions::with_tol(1e-12)).unwrap();
        let exact = (-1.0 + 5f64.sqrt()) / 2.0;
        assert!((p.value - exact).abs() < 1e-10);
        assert!(p.bracket_width() <= 1e-10);
        assert!(p.cw_lower <= exact + 1e-15 && exact <= p.cw_upper + 1e-15);
        assert_eq!(p.vector[0], 1.0);
    }

    #[test]
    fn reducible_generator_rejected() {
        let q = GeneratorMatrix::from_rows(2, vec![vec![(1, 1.0)], vec![]], ControlTag::Custom("r".into())).unwrap();
        assert!(matches!(
            principal_eigenpair(&q, &[0.0, 0.0], &EigenOptions::default()),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let opts = EigenOptions {
            tol: 1e-14,
            max_iter: 1,
            ..EigenOptions::default()
        };
        assert!(matches!(
            principal_eigenpair(&two_state(), &[0.0, 3.0], &opts),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn ou_policy_value_and_eigenfunction() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[6.0], &[241]).unwrap();
        let p = MarkovPolicy::constant(g.n_nodes(), 0);
        let pair = policy_value(&m, &g, &p, DriftScheme::Hybrid, &EigenOptions::default()).unwrap();
        assert!((pair.value - 0.25).abs() < 2e-3, "{}", pair.value);
        assert_eq!(pair.vector[g.origin_node()], 1.0);
        for node in (0..g.n_nodes()).filter(|&i| g.coords(i)[0].abs() <= 2.0) {
            let x = g.coords(node)[0];
            let rel = pair.vector[node] / (0.25 * x * x).exp() - 1.0;
            assert!(rel.abs() < 2e-2, "x={x} rel={rel}");
        }
    }

    #[test]
    fn zero_cost_policy_value() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.0, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[4.0], &[81]).unwrap();
        let p = MarkovPolicy::constant(g.n_nodes(), 0);
        let pair = policy_value(&m, &g, &p, DriftScheme::Hybrid, &EigenOptions::default()).unwrap();
        assert!(pair.value.abs() < 1e-12);
    }

    #[test]
    fn kappa_scaled_cost_matches_direct_eigenpair() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[6.0], &[121]).unwrap();
        let p = MarkovPolicy::constant(g.n_nodes(), 0);
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let scaled = policy_value_on(&chain.scale_costs(0.5), &p, &EigenOptions::default()).unwrap();
        let q = chain.policy_generator(&p).unwrap();
        let r: Vec<f64> = chain.policy_cost(&p).unwrap().iter().map(|v| 0.5 * v).collect();
        let direct = principal_eigenpair(
            &q,
            &r,
            &EigenOptions {
                normalize_at: g.origin_node(),
                ..EigenOptions::default()
            },
        )
        .unwrap();
        assert!((scaled.value - direct.value).abs() < 1e-10);
        let unit = policy_value_on(&chain.scale_costs(1.0), &p, &EigenOptions::default()).unwrap();
        let base = policy_value_on(&chain, &p, &EigenOptions::default()).unwrap();
        assert_eq!(unit.value, base.value);
    }

    #[test]
    fn foster_lyapunov_certificate_cases() {
        let m = builtin_ou_lq(-1.0, 1.0, 0.75, 0.0, 0.0, 1).unwrap();
        let g = build_grid(&[5.0], &[101]).unwrap();
        let chain = ControlledChain::new(&m, &g, DriftScheme::Hybrid).unwrap();
        let p = MarkovPolicy::constant(g.n_nodes(), 0);
        let h: Vec<f64> = (0..g.n_nodes()).map(|i| 1.0 + g.coords(i)[0].powi(2)).collect();

        let zero = foster_lyapunov_certificate(&chain, &p, &h, 0.0, 1.0, &EigenOptions::default()).unwrap();
        assert!(zero.eigenpair.value.abs() < 1e-12);
        assert!(zero.eigenpair.vector.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let eps0 = 0.0625;
        let cert = foster_lyapunov_certificate(&chain, &p, &h, eps0, 2.0, &EigenOptions::default()).unwrap();
        assert!(cert.eigenpair.value.is_finite());
        assert!(cert.eigenpair.vector.iter().all(|v| *v > 0.0));
        assert!(cert.drift_margin > 0.0, "{}", cert.drift_margin);

        let q = two_state();
        let one = principal_eigenpair(&q, &[eps0, eps0], &EigenOptions::default()).unwrap();
        assert!((one.value - eps0).abs() < 1e-12);
        assert_eq!(one.vector, vec![1.0, 1.0]);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = build_grid(&[1.0], &[3]).unwrap();
        let pair = Eigenpair {
            value: 0.0,
            vector: vec![1.0, 1.0, 1.0],
            normalization_node: 1,
            cw_lower: 0.0,
            cw_upper: 0.0,
            iterations: 0,
        };
        let mut buf = Vec::new();
        pair.write_csv(&g, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x0,psi\n-1,1e0\n"));
    }
}
