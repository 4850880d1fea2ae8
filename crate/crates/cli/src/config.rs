//! Run configuration, loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ersc_core::discretize::{build_grid_with_cap, DriftScheme, Grid, DEFAULT_NODE_CAP};
use ersc_core::model::{
    builtin_ou_lq, builtin_w_network, CostFn, DiffusionModel, LyapunovLog, Monomial, PolynomialModelSpec,
    RegionKind, WNetworkParams,
};
use ersc_core::perturb::eps0_from_c3;
use ersc_core::simulate::SimulationConfig;
use ersc_core::{EigenOptions, GameOptions, HjbOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub sweep: SweepBlock,
    pub perturbation: Option<PerturbationBlock>,
    pub game: Option<GameBlock>,
    pub simulation: Option<SimulationBlock>,
    pub representation: Option<RepresentationBlock>,
    pub assumptions: Option<AssumptionBlock>,
    #[serde(default)]
    pub variational: VariationalBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelBlock {
    OuLq {
        a: f64,
        sigma: f64,
        q: f64,
        c: f64,
        #[serde(default)]
        u_max: f64,
        #[serde(default = "one")]
        n_controls: usize,
    },
    WNetwork(WNetworkParams),
    Polynomial(PolynomialModelSpec),
}

fn one() -> usize {
    1
}

impl ModelBlock {
    pub fn build(&self) -> ersc_core::Result<DiffusionModel> {
        match self {
            ModelBlock::OuLq {
                a,
                sigma,
                q,
                c,
                u_max,
                n_controls,
            } => builtin_ou_lq(*a, *sigma, *q, *c, *u_max, *n_controls),
            ModelBlock::WNetwork(p) => builtin_w_network(p),
            ModelBlock::Polynomial(spec) => spec.build(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
    #[serde(default = "default_cap")]
    pub node_cap: usize,
    #[serde(default)]
    pub scheme: DriftScheme,
}

fn default_cap() -> usize {
    DEFAULT_NODE_CAP
}

impl GridBlock {
    pub fn build(&self) -> ersc_core::Result<Grid> {
        build_grid_with_cap(&self.radii, &self.counts, self.node_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iter: usize,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    pub game_tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            eigen_tol: 1e-11,
            eigen_max_iter: 2000,
            game_tol: 1e-10,
        }
    }
}

impl SolverBlock {
    pub fn eigen(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen_tol,
            max_iter: self.eigen_max_iter,
            ..EigenOptions::default()
        }
    }

    pub fn hjb(&self) -> HjbOptions {
        HjbOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            eigen: self.eigen(),
            initial_policy: None,
        }
    }

    pub fn game(&self) -> GameOptions {
        GameOptions {
            tol: self.game_tol,
            ..GameOptions::default()
        }
    }
}

/// Stationary policy used by the commands that evaluate or simulate a fixed policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// The policy returned by the HJB solver.
    #[default]
    Optimal,
    /// The same control index at every node.
    Constant { control: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Read `eps` as multiples of ε₀.
    #[serde(default)]
    pub eps_relative: bool,
    #[serde(default)]
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub l: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBlock {
    pub c3: f64,
    /// `h̄` as a polynomial in `(x, u)`.
    pub hbar: Vec<Monomial>,
    /// Explicit `h`; when absent, `h` is built from `r`, `h̄` and the region.
    pub h: Option<Vec<Monomial>>,
    #[serde(default)]
    pub region: RegionKind,
    #[serde(default = "default_collar")]
    pub collar: f64,
}

fn default_collar() -> f64 {
    0.5
}

impl PerturbationBlock {
    pub fn eps0(&self) -> Result<f64, CliError> {
        eps0_from_c3(self.c3).map_err(CliError::from)
    }
}

pub fn polynomial_cost(terms: &[Monomial]) -> CostFn {
    let terms = terms.to_vec();
    Arc::new(move |x: &[f64], u: &[f64]| terms.iter().map(|t| t.eval(x, u)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameBlock {
    pub l: f64,
    /// Defaults to `2l + 10`.
    pub l_star: Option<f64>,
    /// Play against `r^ε` (needs a perturbation block).
    #[serde(default)]
    pub epsilon: f64,
    /// Freeze the minimizer at the configured policy and solve only the maximizer's problem.
    #[serde(default)]
    pub fixed_policy: bool,
    #[serde(default = "default_slope")]
    pub l_star_slope: f64,
    #[serde(default = "default_offset")]
    pub l_star_offset: f64,
}

fn default_slope() -> f64 {
    2.0
}

fn default_offset() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationBlock {
    #[serde(flatten)]
    pub config: SimulationConfig,
    /// Radii of the MEM shell report.
    #[serde(default)]
    pub shell_radii: Vec<f64>,
    /// Also run the ground-diffusion importance-sampling estimator.
    #[serde(default)]
    pub importance_sampling: bool,
    /// Truncation level `L` for the plain estimator's tail diagnostic.
    pub truncation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationBlock {
    pub radius: f64,
    pub test_points: Vec<Vec<f64>>,
    /// Allowed `|ratio − 1|` at each test point.
    #[serde(default = "default_rep_tol")]
    pub tolerance: f64,
}

fn default_rep_tol() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionBlock {
    /// Diagonal of `Q` in `𝔙 = xᵀQx`.
    pub lyapunov_q: Vec<f64>,
    pub hbar: Vec<Monomial>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Extra sample points; every grid node is always checked against every control.
    #[serde(default)]
    pub extra_points: Vec<Vec<f64>>,
}

impl AssumptionBlock {
    pub fn lyapunov(&self) -> LyapunovLog {
        LyapunovLog::quadratic(self.lyapunov_q.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationalBlock {
    pub n_spaces: usize,
    pub max_atoms: usize,
    pub f_range: f64,
    pub seed: u64,
    /// Linear drift family `w(x) = θx` for the diffusion-level check (1D models only).
    #[serde(default)]
    pub thetas: Vec<f64>,
}

impl Default for VariationalBlock {
    fn default() -> Self {
        Self {
            n_spaces: 1000,
            max_atoms: 64,
            f_range: 20.0,
            seed: 0,
            thetas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub workers: Option<usize>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ersc-out"),
            workers: None,
            formats: default_formats(),
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f.eq_ignore_ascii_case(format))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML rendering; parsing it back yields an equal config and digest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Config(m));
        let dim = match &self.model {
            ModelBlock::OuLq { .. } => 1,
            ModelBlock::WNetwork(_) => 3,
            ModelBlock::Polynomial(p) => p.dim,
        };
        if self.grid.radii.len() != dim || self.grid.counts.len() != dim {
            return invalid(format!("grid needs {dim} radii and counts for this model"));
        }
        if !(self.solver.tol > 0.0 && self.solver.eigen_tol > 0.0 && self.solver.game_tol > 0.0) {
            return invalid("solver tolerances must be positive".into());
        }
        if let Some(k) = self.sweep.kappa.iter().find(|k| !(**k > 0.0 && **k <= 1.0)) {
            return invalid(format!("kappa = {k} must lie in (0, 1]"));
        }
        if self.sweep.l.iter().any(|l| !(*l > 0.0)) || self.sweep.l.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("sweep.l must be positive and strictly increasing".into());
        }
        let eps_used = !self.sweep.eps.is_empty() || self.game.as_ref().is_some_and(|g| g.epsilon != 0.0);
        match &self.perturbation {
            Some(p) => {
                let eps0 = p.eps0()?;
                for e in self.epsilons()? {
                    if !(e >= 0.0 && e < eps0) {
                        return invalid(format!(
                            "epsilon = {e} must satisfy 0 <= epsilon < eps0 = (1-C3)/8 = {eps0}"
                        ));
                    }
                }
                if !(p.collar > 0.0) {
                    return invalid("perturbation.collar must be positive".into());
                }
            }
            None if eps_used => return invalid("epsilon values need a [perturbation] block".into()),
            None => {}
        }
        if let Some(g) = &self.game {
            if !(g.l > 0.0) {
                return invalid(format!("game.l = {} must be positive", g.l));
            }
        }
        if let Some(s) = &self.simulation {
            s.config.validate()?;
            if s.config.x0.len() != dim {
                return invalid(format!("simulation.x0 must have {dim} entries"));
            }
            if s.shell_radii.windows(2).any(|w| w[1] <= w[0]) {
                return invalid("simulation.shell_radii must be strictly increasing".into());
            }
        }
        if let Some(r) = &self.representation {
            if !(r.radius > 0.0) || r.test_points.iter().any(|x| x.len() != dim) {
                return invalid(format!("representation needs a positive radius and {dim}-dimensional points"));
            }
        }
        if let Some(a) = &self.assumptions {
            if a.lyapunov_q.len() != dim {
                return invalid(format!("assumptions.lyapunov_q must have {dim} entries"));
            }
            if !(a.c3 > 0.0 && a.c3 < 1.0) {
                return invalid(format!("assumptions.c3 = {} must lie in (0, 1)", a.c3));
            }
        }
        if self.variational.max_atoms < 2 || self.variational.n_spaces == 0 {
            return invalid("variational needs n_spaces >= 1 and max_atoms >= 2".into());
        }
        if self.output.workers == Some(0) {
            return invalid("output.workers must be at least 1".into());
        }
        Ok(())
    }

    /// Absolute ε values of the sweep, plus the game's ε.
    pub fn epsilons(&self) -> Result<Vec<f64>, CliError> {
        let mut out = self.sweep_epsilons()?;
        if let Some(g) = &self.game {
            out.push(g.epsilon);
        }
        Ok(out)
    }

    pub fn sweep_epsilons(&self) -> Result<Vec<f64>, CliError> {
        let scale = match (&self.perturbation, self.sweep.eps_relative) {
            (Some(p), true) => p.eps0()?,
            _ => 1.0,
        };
        Ok(self.sweep.eps.iter().map(|e| e * scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LQ: &str = r#"
[model]
name = "ou_lq"
a = -1.0
sigma = 1.0
q = 1.0
c = 2.0
u_max = 5.0
n_controls = 201

[grid]
radii = [6.0]
counts = [241]
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_toml(LQ).unwrap();
        assert_eq!(cfg.grid.counts, vec![241]);
        assert_eq!(cfg.policy, PolicySpec::Optimal);
        assert_eq!(cfg.solver, SolverBlock::default());
    }

    #[test]
    fn canonical_round_trip_keeps_digest() {
        let cfg = RunConfig::from_toml(LQ).unwrap();
        let again = RunConfig::from_toml(&cfg.canonical()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn epsilon_above_budget_names_the_bound() {
        let text = format!(
            "{LQ}\n[sweep]\neps = [0.1]\n\n[perturbation]\nc3 = 0.5\nhbar = [{{ coef = 1.0, x = [2] }}]\n"
        );
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("(1-C3)/8"), "{err}");
    }

    #[test]
    fn relative_epsilons_scale_by_budget() {
        let text = format!(
            "{LQ}\n[sweep]\neps = [0.5]\neps_relative = true\n\n[perturbation]\nc3 = 0.5\nhbar = [{{ coef = 1.0, x = [2] }}]\n"
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.sweep_epsilons().unwrap(), vec![0.03125]);
    }

    #[test]
    fn rejects_bad_kappa_and_dimension() {
        let text = format!("{LQ}\n[sweep]\nkappa = [0.0]\n");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = LQ.replace("radii = [6.0]", "radii = [6.0, 6.0]");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = LQ.replace("counts = [241]", "counts = [241]\nspacing = 0.1");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
