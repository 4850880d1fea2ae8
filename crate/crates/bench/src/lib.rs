//! Shared fixtures for the criterion benches.

use ersc_core::discretize::{build_grid, ControlledChain, DriftScheme};
use ersc_core::model::builtin_ou_lq;

/// Controlled scalar LQ chain with `n` nodes on `[-6, 6]` and `k` controls.
pub fn lq_chain(n: usize, k: usize) -> ControlledChain {
    let model = builtin_ou_lq(-1.0, 1.0, 1.0, 2.0, 5.0, k).expect("valid model");
    let grid = build_grid(&[6.0], &[n]).expect("valid grid");
    ControlledChain::new(&model, &grid, DriftScheme::Hybrid).expect("monotone chain")
}
