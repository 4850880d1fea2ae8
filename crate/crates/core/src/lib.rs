//! Numerical solver and verification harness for ergodic risk-sensitive control of
//! nondegenerate controlled diffusions.
//!
//! The pipeline discretizes a [`model::DiffusionModel`] into a conservative
//! Markov chain ([`discretize`]), computes Perron eigenpairs of cost-twisted generators
//! ([`eigensolve`]), minimizes them by policy iteration ([`hjb`]), realizes the
//! ergodic zero-sum game between the control and an auxiliary drift ([`game`]),
//! studies inf-compact cost perturbations and the risk-neutral limit ([`perturb`]), and
//! cross-checks values by Monte Carlo ([`simulate`]) and exact finite-space identities
//! ([`variational`]).

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod discretize;
pub mod eigensolve;
pub mod error;
pub mod game;
pub mod hjb;
mod linalg;
pub mod model;
pub mod perturb;
pub mod policy;
pub mod simulate;
pub mod variational;

pub use discretize::{
    assemble_generator, assemble_policy_generator, build_grid, ControlledChain, DriftScheme, GeneratorMatrix, Grid,
};
pub use eigensolve::{principal_eigenpair, EigenOptions, Eigenpair};
pub use error::{Error, Result};
pub use game::{AuxiliaryPolicy, GameOptions, GameSolution};
pub use hjb::{solve_hjb, HjbOptions, HjbSolution};
pub use model::{builtin_ou_lq, builtin_w_network, ControlSet, DiffusionModel, RegionSpec, WNetworkParams};
pub use perturb::PerturbationFamily;
pub use policy::MarkovPolicy;
pub use simulate::{PathEnsemble, SimulationConfig};
