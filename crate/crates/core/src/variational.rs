//! Finite-space Gibbs variational identity and a restricted drift-class check of the
//! control-level variational formula for exponential functionals.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::Grid;
use crate::eigensolve::Eigenpair;
use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::simulate::{importance_sampled_cost, simulate, AuxDrift, Feedback, IsEstimate, SimulationConfig};

/// Probability vector with strictly positive atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteNoiseSpace {
    probs: Vec<f64>,
}

impl FiniteNoiseSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("atom probabilities must be positive and finite"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 4.0 * f64::EPSILON * probs.len() as f64 {
            return Err(Error::invalid(format!("atom probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes positive weights into a probability vector.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `log Σ pᵢ e^{fᵢ}`.
    pub fn log_mgf(&self, f: &[f64]) -> f64 {
        let a: Vec<f64> = self.probs.iter().zip(f).map(|(p, v)| p.ln() + v).collect();
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// Gibbs measure `qᵢ ∝ pᵢ e^{fᵢ}`.
    pub fn tilted(&self, f: &[f64]) -> Vec<f64> {
        let lz = self.log_mgf(f);
        self.probs.iter().zip(f).map(|(p, v)| (p.ln() + v - lz).exp()).collect()
    }
}

/// `E_Q f − KL(Q‖P)`.
pub fn variational_value(space: &FiniteNoiseSpace, f: &[f64], q: &[f64]) -> Result<f64> {
    if q.len() != space.len() || f.len() != space.len() {
        return Err(Error::invalid("measure and function must match the number of atoms"));
    }
    if q.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("Q must be nonnegative"));
    }
    let mut val = 0.0;
    for ((qi, fi), pi) in q.iter().zip(f).zip(space.probs()) {
        if *qi > 0.0 {
            val += qi * fi - qi * (qi.ln() - pi.ln());
        }
    }
    Ok(val)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Both sides of `log E[e^f] = sup_Q {E_Q f − KL(Q‖P)}`, the right side at the Gibbs measure.
pub fn gibbs_identity_check(space: &FiniteNoiseSpace, f: &[f64]) -> Result<GibbsCheck> {
    if f.len() != space.len() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("f must be finite with one value per atom"));
    }
    let lhs = space.log_mgf(f);
    let q = space.tilted(f);
    let total: f64 = q.iter().sum();
    let q: Vec<f64> = q.iter().map(|v| v / total).collect();
    let rhs = variational_value(space, f, &q)?;
    Ok(GibbsCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Affine auxiliary drift `w(x) = c + Θx` (Θ row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub constant: Vec<f64>,
    pub linear: Vec<f64>,
}

impl DriftParams {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            out[i] = self.constant[i] + (0..d).map(|j| self.linear[i * d + j] * x[j]).sum::<f64>();
        }
    }

    pub fn n_params(&self) -> usize {
        self.constant.len() + self.linear.len()
    }
}

/// Finite candidate set searched exhaustively; every candidate is scaled by `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftFamily {
    pub candidates: Vec<DriftParams>,
    pub scale: f64,
}

impl DriftFamily {
    /// `w(x) = θx` in one dimension.
    pub fn linear_1d(thetas: &[f64]) -> Self {
        Self {
            candidates: thetas
                .iter()
                .map(|&t| DriftParams {
                    constant: vec![0.0],
                    linear: vec![t],
                })
                .collect(),
            scale: 1.0,
        }
    }

    /// `w(x) ≡ c` in one dimension.
    pub fn constant_1d(values: &[f64]) -> Self {
        Self {
            candidates: values
                .iter()
                .map(|&c| DriftParams {
                    constant: vec![c],
                    linear: vec![0.0],
                })
                .collect(),
            scale: 1.0,
        }
    }

    /// Drift `k·w` with penalty `½k²‖w‖²`.
    pub fn with_scale(mut self, k: f64) -> Self {
        self.scale = k;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub params: DriftParams,
    /// `E[(1/T)∫(r(Z) − ½‖kw(Z)‖²)dt]`.
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftGapReport {
    pub log_mgf: IsEstimate,
    pub candidates: Vec<CandidateValue>,
    pub best: usize,
    /// Log-MGF estimate minus the best inner value.
    pub gap: f64,
    pub gap_stderr: f64,
    /// `gap ≥ −3·gap_stderr`.
    pub consistent: bool,
}

/// Inner value `E[(1/T)∫(r − ½‖w‖²)]` of every candidate (common random numbers across candidates).
pub fn inner_values(
    model: &DiffusionModel,
    feedback: &Feedback,
    family: &DriftFamily,
    cfg: &SimulationConfig,
) -> Result<Vec<CandidateValue>> {
    let d = model.dim();
    if family.candidates.is_empty() {
        return Err(Error::invalid("drift family has no candidates"));
    }
    family
        .candidates
        .iter()
        .map(|p| {
            if p.constant.len() != d || p.linear.len() != d * d {
                return Err(Error::invalid("drift parameters do not match the model dimension"));
            }
            if p.n_params() > 6 && family.candidates.len() > 1 {
                log::warn!("drift family with {} parameters per candidate", p.n_params());
            }
            let (params, k) = (p.clone(), family.scale);
            let aux = AuxDrift::Field(Arc::new(move |x: &[f64], out: &mut [f64]| {
                params.eval(x, out);
                out.iter_mut().for_each(|v| *v *= k);
            }));
            let ens = simulate(model, feedback, Some(&aux), cfg)?;
            let vals: Vec<f64> = ens.used_paths().map(|r| (r.int_r - r.int_w) / ens.horizon).collect();
            if vals.is_empty() {
                return Err(Error::Simulation("no usable paths".into()));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok(CandidateValue {
                params: p.clone(),
                value: mean,
                stderr: (var / n).sqrt(),
            })
        })
        .collect()
}

/// Compares the importance-sampled log-MGF rate with the best inner value over the family.
pub fn drift_class_gap(
    model: &DiffusionModel,
    feedback: &Feedback,
    grid: &Grid,
    eigenpair: &Eigenpair,
    family: &DriftFamily,
    cfg: &SimulationConfig,
) -> Result<DriftGapReport> {
    let log_mgf = importance_sampled_cost(model, feedback, grid, eigenpair, cfg)?;
    let candidates = inner_values(model, feedback, family, cfg)?;
    let best = candidates
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.value > candidates[b].value { i } else { b });
    let gap = log_mgf.estimate - candidates[best].value;
    let gap_stderr = log_mgf.stderr.hypot(candidates[best].stderr);
    Ok(DriftGapReport {
        log_mgf,
        candidates,
        best,
        gap,
        gap_stderr,
        consistent: gap >= -3.0 * gap_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_function() {
        let s = FiniteNoiseSpace::from_weights(&[1.0, 2.0, 3.0]).unwrap();
        let g = gibbs_identity_check(&s, &[1.5, 1.5, 1.5]).unwrap();
        assert!((g.lhs - 1.5).abs() < 1e-15 && (g.rhs - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_atom_example() {
        let s = FiniteNoiseSpace::new(vec![0.5, 0.5]).unwrap();
        let g = gibbs_identity_check(&s, &[0.0, 1.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((g.lhs - ((1.0 + e) / 2.0).ln()).abs() < 1e-15);
        assert!((g.lhs - 0.62011).abs() < 1e-5);
        assert!(g.gap < 1e-15);
        let q = s.tilted(&[0.0, 1.0]);
        assert!((q[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn suboptimal_measures_fall_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = FiniteNoiseSpace::from_weights(&[0.2, 0.3, 0.1, 0.4]).unwrap();
        let f = [3.0, -1.0, 0.5, 2.0];
        let lhs = s.log_mgf(&f);
        for _ in 0..100 {
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let t: f64 = w.iter().sum();
            let q: Vec<f64> = w.iter().map(|v| v / t).collect();
            assert!(variational_value(&s, &f, &q).unwrap() <= lhs + 1e-14);
        }
    }

    #[test]
    fn invalid_spaces() {
        assert!(FiniteNoiseSpace::new(vec![0.5, 0.4]).is_err());
        assert!(FiniteNoiseSpace::new(vec![1.0, 0.0]).is_err());
        assert!(FiniteNoiseSpace::new(vec![]).is_err());
    }

    #[test]
    fn affine_drift_eval() {
        let p = DriftParams {
            constant: vec![1.0, 0.0],
            linear: vec![0.0, 2.0, 3.0, 0.0],
        };
        let mut out = [0.0; 2];
        p.eval(&[1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 3.0]);
    }
}
