//! Inf-compact perturbation `r^ε = (1 − ε/ε₀) r + ε h` with `ε₀ = (1 − C₃)/8`, the ε → 0
//! convergence study, and the κ → 0 risk-neutral limit.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{ControlledChain, Grid};
use crate::error::{Error, Result};
use crate::game::{solve_average_cost, GameOptions};
use crate::hjb::{solve_hjb_on, HjbOptions};
use crate::model::{smoothstep, CostFn, DiffusionModel, RegionSpec};

/// Number of radial shells used by the inf-compactness surrogate.
const SHELLS: usize = 8;

#[derive(Clone)]
pub struct PerturbationFamily {
    c3: f64,
    eps0: f64,
    r: CostFn,
    h: CostFn,
    hbar: CostFn,
    region: RegionSpec,
    collar: f64,
}

impl std::fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationFamily")
            .field("c3", &self.c3)
            .field("eps0", &self.eps0)
            .field("region", &self.region.label())
            .field("collar", &self.collar)
            .finish()
    }
}

/// Summary of the checks performed when a family is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCertificate {
    pub checked_points: usize,
    /// Smallest value of `upper bound − h` over the checked points.
    pub min_upper_slack: f64,
    /// `min_{‖x‖ ≥ ρ_s} min_u h` on increasing radii `ρ_s`.
    pub shell_minima: Vec<(f64, f64)>,
}

pub fn eps0_from_c3(c3: f64) -> Result<f64> {
    if !(c3 > 0.0 && c3 < 1.0) {
        return Err(Error::Config(format!("C3 must lie in (0,1), got {c3}")));
    }
    Ok((1.0 - c3) / 8.0)
}

impl PerturbationFamily {
    /// `h = max(r, 1 + ζr + (1−ζ)h̄)` where `ζ` is 1 on `ℋ = (region × 𝕌) ∪ {r > h̄}` and
    /// vanishes outside a collar of the given width. Verified on every grid node and control.
    pub fn build_h(
        model: &DiffusionModel,
        grid: &Grid,
        c3: f64,
        hbar: CostFn,
        region: RegionSpec,
        collar: f64,
    ) -> Result<(Self, FamilyCertificate)> {
        if !(collar > 0.0) {
            return Err(Error::Config("collar width must be positive".into()));
        }
        let r = model.cost_fn().clone();
        let (r2, hb2, reg2) = (r.clone(), hbar.clone(), region.clone());
        let h: CostFn = Arc::new(move |x: &[f64], u: &[f64]| {
            let rv = r2(x, u);
            let hv = hb2(x, u);
            let zeta = reg2.blend(x).max(smoothstep((rv - hv) / collar + 1.0));
            rv.max(1.0 + zeta * rv + (1.0 - zeta) * hv)
        });
        Self::custom(model, grid, c3, h, hbar, region, collar)
    }

    /// Family with a user-supplied `h`, subject to the same checks as [`Self::build_h`].
    pub fn custom(
        model: &DiffusionModel,
        grid: &Grid,
        c3: f64,
        h: CostFn,
        hbar: CostFn,
        region: RegionSpec,
        collar: f64,
    ) -> Result<(Self, FamilyCertificate)> {
        let fam = Self {
            c3,
            eps0: eps0_from_c3(c3)?,
            r: model.cost_fn().clone(),
            h,
            hbar,
            region,
            collar,
        };
        let cert = fam.certify(model, grid)?;
        Ok((fam, cert))
    }

    fn in_h(&self, x: &[f64], u: &[f64]) -> bool {
        self.region.contains(x) || (self.r)(x, u) > (self.hbar)(x, u)
    }

    fn certify(&self, model: &DiffusionModel, grid: &Grid) -> Result<FamilyCertificate> {
        let controls = model.controls();
        let per_node: Vec<(f64, f64, f64)> = (0..grid.n_nodes())
            .into_par_iter()
            .map(|i| {
                let x = grid.coords(i);
                let mut slack = f64::INFINITY;
                let mut hmin = f64::INFINITY;
                for u in controls.points() {
                    let (rv, hv) = ((self.r)(&x, u), (self.h)(&x, u));
                    if !(hv >= rv) {
                        return Err(Error::Config(format!("h < r at x = {x:?}, u = {u:?} ({hv} < {rv})")));
                    }
                    let upper = if self.in_h(&x, u) { 2.0 + 2.0 * rv } else { 2.0 + 2.0 * (self.hbar)(&x, u) };
                    if hv > upper {
                        return Err(Error::Config(format!(
                            "h exceeds its upper bound at x = {x:?}, u = {u:?} ({hv} > {upper})"
                        )));
                    }
                    slack = slack.min(upper - hv);
                    hmin = hmin.min(hv);
                }
                Ok((grid.norm_of(i), slack, hmin))
            })
            .collect::<Result<Vec<_>>>()?;
        let min_upper_slack = per_node.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let rmax = grid.radii().iter().copied().fold(f64::INFINITY, f64::min);
        let shell_minima: Vec<(f64, f64)> = (0..SHELLS)
            .map(|s| {
                let rho = rmax * s as f64 / SHELLS as f64;
                let m = per_node
                    .iter()
                    .filter(|p| p.0 >= rho)
                    .map(|p| p.2)
                    .fold(f64::INFINITY, f64::min);
                (rho, m)
            })
            .collect();
        // the sublevel set through the innermost shell must stay away from the outermost one
        let core_max = per_node
            .iter()
            .filter(|p| p.0 <= shell_minima[1].0)
            .map(|p| p.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let (outer, tail_min) = shell_minima[SHELLS - 1];
        if !(tail_min > core_max) {
            return Err(Error::Config(format!(
                "h fails the inf-compactness check: min h beyond radius {outer} is {tail_min}, \
                 not above its maximum {core_max} within radius {}",
                shell_minima[1].0
            )));
        }
        Ok(FamilyCertificate {
            checked_points: per_node.len() * controls.len(),
            min_upper_slack,
            shell_minima,
        })
    }

    pub fn c3(&self) -> f64 {
        self.c3
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn h(&self) -> &CostFn {
        &self.h
    }

    pub fn hbar(&self) -> &CostFn {
        &self.hbar
    }

    pub fn region(&self) -> &RegionSpec {
        &self.region
    }

    pub fn collar(&self) -> f64 {
        self.collar
    }

    /// Same family with `h` shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let h = self.h.clone();
        Self {
            h: Arc::new(move |x: &[f64], u: &[f64]| h(x, u) + c),
            ..self.clone()
        }
    }

    pub fn check_epsilon(&self, eps: f64) -> Result<()> {
        if !(eps >= 0.0 && eps < self.eps0) {
            return Err(Error::Config(format!(
                "epsilon = {eps} must satisfy 0 <= epsilon < eps0 = (1-C3)/8 = {}",
                self.eps0
            )));
        }
        Ok(())
    }

    /// `r^ε = (1 − ε/ε₀) r + ε h`.
    pub fn perturbed_cost(&self, eps: f64) -> Result<CostFn> {
        self.check_epsilon(eps)?;
        if eps == 0.0 {
            return Ok(self.r.clone());
        }
        let (r, h, a) = (self.r.clone(), self.h.clone(), 1.0 - eps / self.eps0);
        Ok(Arc::new(move |x: &[f64], u: &[f64]| a * r(x, u) + eps * h(x, u)))
    }

    pub fn perturbed_chain(&self, chain: &ControlledChain, eps: f64) -> Result<ControlledChain> {
        let cost = self.perturbed_cost(eps)?;
        chain.with_cost(move |x, u| cost(x, u))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    pub lambda: f64,
    /// `|Λ[r^ε] − Λ[r]|`.
    pub gap: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweep {
    pub base_value: f64,
    pub points: Vec<EpsilonPoint>,
    /// Least-squares `C` in `gap ≈ C ε`.
    pub slope: f64,
}

/// Optimal ERSC value of `r^ε` for each `ε`, with gaps to the unperturbed value.
pub fn epsilon_sweep(
    chain: &ControlledChain,
    family: &PerturbationFamily,
    eps_list: &[f64],
    opts: &HjbOptions,
) -> Result<EpsilonSweep> {
    for &e in eps_list {
        family.check_epsilon(e)?;
    }
    let base = solve_hjb_on(chain, opts)?.value;
    let raw = eps_list
        .par_iter()
        .map(|&eps| {
            let t = Instant::now();
            let value = if eps == 0.0 {
                base
            } else {
                solve_hjb_on(&family.perturbed_chain(chain, eps)?, opts)?.value
            };
            Ok(EpsilonPoint {
                epsilon: eps,
                lambda: value,
                gap: (value - base).abs(),
                wall_time_s: t.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let den: f64 = raw.iter().map(|p| p.epsilon * p.epsilon).sum();
    let slope = if den > 0.0 {
        raw.iter().map(|p| p.epsilon * p.gap).sum::<f64>() / den
    } else {
        0.0
    };
    Ok(EpsilonSweep {
        base_value: base,
        points: raw,
        slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaPoint {
    pub kappa: f64,
    /// `Λ[κr]/κ`.
    pub lambda_kappa: f64,
    /// `Λ^κ − Λ⁰`.
    pub gap: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaSweep {
    /// Optimal average cost.
    pub lambda_zero: f64,
    pub points: Vec<KappaPoint>,
}

pub fn kappa_sweep(chain: &ControlledChain, kappa_list: &[f64], opts: &HjbOptions) -> Result<KappaSweep> {
    if let Some(k) = kappa_list.iter().find(|k| !(**k > 0.0 && **k <= 1.0)) {
        return Err(Error::Config(format!("kappa = {k} must lie in (0, 1]")));
    }
    let lambda_zero = solve_average_cost(chain, &GameOptions::default())?.value;
    let points = kappa_list
        .par_iter()
        .map(|&kappa| {
            let t = Instant::now();
            let value = solve_hjb_on(&chain.scale_costs(kappa), opts)?.value / kappa;
            Ok(KappaPoint {
                kappa,
                lambda_kappa: value,
                gap: value - lambda_zero,
                wall_time_s: t.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KappaSweep { lambda_zero, points })
}
