//! Random instances and property checks shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;

use ersc_core::discretize::{build_grid, ControlledChain, DriftScheme, Grid};
use ersc_core::eigensolve::{principal_eigenpair, EigenOptions};
use ersc_core::game::{sup_w_fixed_policy, GameOptions};
use ersc_core::hjb::{solve_hjb_on, HjbOptions};
use ersc_core::model::{ControlSet, DiffusionModel, RegionSpec};
use ersc_core::simulate::{simulate, Feedback, SimulationConfig};
use ersc_core::MarkovPolicy;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

/// Randomized nondegenerate model on a small box.
#[derive(Clone, Debug)]
pub struct RandomModel {
    pub dim: usize,
    /// Linear drift part, row-major `dim × dim`.
    pub a: Vec<f64>,
    pub sin_amp: f64,
    pub sig_diag: Vec<f64>,
    /// Off-diagonal entry of Σ in two dimensions.
    pub sig_off: f64,
    pub q: Vec<f64>,
    pub cu: f64,
    pub u_shift: f64,
    pub n_controls: usize,
    pub radius: f64,
    pub count: usize,
}

pub fn random_model() -> impl Strategy<Value = RandomModel> {
    (1usize..=2, 1usize..=3, 0usize..3).prop_flat_map(|(dim, k, c)| {
        (
            prop::collection::vec(-1.5f64..0.5, dim * dim),
            -0.5f64..0.5,
            prop::collection::vec(0.7f64..1.3, dim),
            -0.15f64..0.15,
            prop::collection::vec(0.0f64..1.0, dim),
            0.0f64..1.0,
            -0.1f64..0.1,
            1.0f64..3.0,
        )
            .prop_map(move |(a, sin_amp, sig_diag, sig_off, q, cu, u_shift, radius)| RandomModel {
                dim,
                a,
                sin_amp,
                sig_diag,
                sig_off: if dim == 2 { sig_off } else { 0.0 },
                q,
                cu,
                u_shift,
                n_controls: k,
                radius,
                count: [5, 9, 13][c] + if dim == 1 { 8 } else { 0 },
            })
    })
}

impl RandomModel {
    pub fn model(&self) -> DiffusionModel {
        let d = self.dim;
        let (a, amp) = (self.a.clone(), self.sin_amp);
        let drift = move |x: &[f64], u: &[f64], out: &mut [f64]| {
            for i in 0..d {
                out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum::<f64>() + u[0] + amp * x[0].sin();
            }
        };
        let (sd, so) = (self.sig_diag.clone(), self.sig_off);
        let sigma = move |_x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = sd[i];
            }
            if d == 2 {
                out[1] = so;
            }
        };
        let (q, cu) = (self.q.clone(), self.cu);
        let cost = move |x: &[f64], u: &[f64]| {
            (0..d).map(|i| q[i] * x[i] * x[i]).sum::<f64>() + cu * u[0] * u[0] + 0.2 * (1.0 + (x[0] + u[0]).sin())
        };
        let points: Vec<Vec<f64>> = [-0.8, 0.1, 0.9][..self.n_controls]
            .iter()
            .map(|u| vec![u + self.u_shift])
            .collect();
        let floor = self.sig_diag.iter().map(|s| s * s).fold(f64::INFINITY, f64::min) * 0.5;
        DiffusionModel::new(
            "random",
            d,
            Arc::new(drift),
            Arc::new(sigma),
            Arc::new(cost),
            ControlSet::new(points, "random").unwrap(),
            RegionSpec::everywhere(),
            floor,
        )
        .unwrap()
    }

    pub fn grid(&self) -> Grid {
        build_grid(&vec![self.radius; self.dim], &vec![self.count; self.dim]).unwrap()
    }

    pub fn chain(&self) -> ControlledChain {
        ControlledChain::new(&self.model(), &self.grid(), DriftScheme::Hybrid).unwrap()
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn check_generator_structure(m: &RandomModel) -> Result<(), TestCaseError> {
    let chain = m.chain();
    for q in chain.generators() {
        ensure(q.max_abs_row_sum() <= 1e-12, || format!("row sum {}", q.max_abs_row_sum()))?;
        ensure(q.min_off_diagonal() >= 0.0, || format!("negative rate {}", q.min_off_diagonal()))?;
        ensure(q.is_irreducible(), || "reducible generator".into())?;
    }
    Ok(())
}

pub fn check_eigen_properties(m: &RandomModel, shift: f64, bump: f64) -> Result<(), TestCaseError> {
    let chain = m.chain();
    let opts = EigenOptions::default();
    let policy = MarkovPolicy::constant(chain.n_nodes(), 0);
    let q = chain.policy_generator(&policy).unwrap();
    let r = chain.policy_cost(&policy).unwrap();
    let base = principal_eigenpair(&q, &r, &opts).unwrap();
    ensure(base.vector.iter().all(|v| *v > 0.0), || "non-positive eigenvector entry".into())?;
    ensure(base.cw_lower <= base.value && base.value <= base.cw_upper, || "bracket excludes value".into())?;

    let shifted: Vec<f64> = r.iter().map(|v| v + shift).collect();
    let s = principal_eigenpair(&q, &shifted, &opts).unwrap();
    ensure((s.value - base.value - shift).abs() <= 1e-9 * (1.0 + shift.abs()), || {
        format!("shift {shift}: {} vs {}", s.value, base.value + shift)
    })?;
    let dv = s.vector.iter().zip(&base.vector).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    ensure(dv <= 1e-7, || format!("eigenvector moved by {dv} under a constant shift"))?;

    let bigger: Vec<f64> = r.iter().enumerate().map(|(i, v)| v + bump * ((i % 3) as f64)).collect();
    let b = principal_eigenpair(&q, &bigger, &opts).unwrap();
    ensure(b.value >= base.value - 1e-10, || format!("monotonicity: {} < {}", b.value, base.value))
}

pub fn check_policy_iteration(m: &RandomModel) -> Result<(), TestCaseError> {
    let chain = m.chain();
    let opts = HjbOptions::default();
    let sol = solve_hjb_on(&chain, &opts).unwrap();
    // Each entry is a bracket midpoint, accurate to half the eigensolver tolerance.
    for w in sol.history.windows(2) {
        ensure(w[1] <= w[0] + opts.eigen.tol, || format!("history increased: {w:?}"))?;
    }
    ensure(sol.residual <= 1e-8, || format!("residual {}", sol.residual))
}

pub fn check_aux_support(m: &RandomModel, l: f64) -> Result<(), TestCaseError> {
    let chain = m.chain();
    let grid = chain.grid().clone();
    let policy = MarkovPolicy::constant(chain.n_nodes(), 0);
    let (_, w) = sup_w_fixed_policy(&chain, &policy, l, 2.0 * l + 10.0, &GameOptions::default()).unwrap();
    for (i, f) in w.field().iter().enumerate() {
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        ensure(n <= l * (1.0 + 1e-12), || format!("‖w‖ = {n} > l = {l}"))?;
        if grid.norm_of(i) >= l {
            ensure(n == 0.0, || format!("w nonzero at radius {}", grid.norm_of(i)))?;
        }
    }
    Ok(())
}

pub fn check_seed_reproducibility(m: &RandomModel, seed: u64) -> Result<(), TestCaseError> {
    let model = m.model();
    let cfg = SimulationConfig::new(0.01, 0.5, 70, seed, vec![0.1; m.dim]);
    let fb = Feedback::Constant(model.controls().point(0).to_vec());
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let a = one.install(|| simulate(&model, &fb, None, &cfg)).unwrap();
    let b = one.install(|| simulate(&model, &fb, None, &cfg)).unwrap();
    let c = two.install(|| simulate(&model, &fb, None, &cfg)).unwrap();
    ensure(a.digest == b.digest && a.digest == c.digest, || "ensemble digests differ".into())
}
