//! Euler–Maruyama simulation of the controlled diffusion and of its extension with an
//! auxiliary drift, plus Monte Carlo estimators of risk-sensitive costs.
//!
//! Path `p` draws its Gaussian increments from a ChaCha stream selected by `p` under the
//! configured seed, so results do not depend on how paths are scheduled across workers.
//! Paths are processed in fixed chunks whose partial results are combined in chunk order.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretize::{build_grid, Grid};
use crate::eigensolve::Eigenpair;
use crate::error::{Error, Result};
use crate::game::AuxiliaryPolicy;
use crate::hjb::value_gradient_field;
use crate::model::{norm, DiffusionModel};
use crate::policy::MarkovPolicy;

const CHUNK: usize = 64;
const BLOWUP_NORM: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemConfig {
    /// Width of the radial occupation bins.
    pub radial_bin: f64,
    /// Radius beyond which occupation is pooled into one overflow bin.
    pub radial_max: f64,
    /// Optional cell histogram on a grid given by half-widths and node counts.
    pub grid_radii: Option<Vec<f64>>,
    pub grid_counts: Option<Vec<usize>>,
}

impl Default for MemConfig {
    fn default() -> Self {
        Self {
            radial_bin: 0.05,
            radial_max: 20.0,
            grid_radii: None,
            grid_counts: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub antithetic: bool,
    /// Record the first entrance time into the closed ball of this radius.
    #[serde(default)]
    pub target_radius: Option<f64>,
    /// Stop each path at its first entrance into the target ball.
    #[serde(default)]
    pub stop_at_target: bool,
    #[serde(default)]
    pub mem: Option<MemConfig>,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64, x0: Vec<f64>) -> Self {
        Self {
            dt,
            horizon,
            n_paths,
            seed,
            x0,
            antithetic: false,
            target_radius: None,
            stop_at_target: false,
            mem: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt <= self.horizon) {
            return Err(Error::invalid(format!(
                "need 0 < dt <= horizon, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be at least 1"));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::invalid("antithetic sampling needs an even number of paths"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        if let Some(r) = self.target_radius {
            if !(r >= 0.0) {
                return Err(Error::invalid("target radius must be nonnegative"));
            }
        }
        if let Some(m) = &self.mem {
            if !(m.radial_bin > 0.0 && m.radial_max > m.radial_bin) {
                return Err(Error::invalid("MEM bins need 0 < radial_bin < radial_max"));
            }
            if m.grid_radii.is_some() != m.grid_counts.is_some() {
                return Err(Error::invalid("MEM grid needs both radii and counts"));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// Control applied along a path.
#[derive(Clone)]
pub enum Feedback {
    /// A fixed control point.
    Constant(Vec<f64>),
    /// Markov policy on a grid, evaluated at the nearest node; relaxed policies mix drift and cost.
    Policy { grid: Grid, policy: MarkovPolicy },
    Function(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl Feedback {
    /// Writes the drift into `b` and returns the running cost.
    fn drift_cost(&self, model: &DiffusionModel, x: &[f64], b: &mut [f64], tmp: &mut [f64]) -> f64 {
        match self {
            Feedback::Constant(u) => {
                model.drift_into(x, u, b);
                model.cost(x, u)
            }
            Feedback::Function(f) => {
                let u = f(x);
                model.drift_into(x, &u, b);
                model.cost(x, &u)
            }
            Feedback::Policy { grid, policy } => {
                let node = grid.nearest_node(x);
                let controls = model.controls();
                if let Some(k) = policy.control_at(node) {
                    let u = controls.point(k);
                    model.drift_into(x, u, b);
                    return model.cost(x, u);
                }
                b.iter_mut().for_each(|v| *v = 0.0);
                let mut r = 0.0;
                for (k, w) in policy.weights_at(node) {
                    let u = controls.point(k);
                    model.drift_into(x, u, tmp);
                    b.iter_mut().zip(tmp.iter()).for_each(|(bi, ti)| *bi += w * ti);
                    r += w * model.cost(x, u);
                }
                r
            }
        }
    }
}

/// Auxiliary drift `w`; the state drift gains `Σ(x) w(x)`.
#[derive(Clone)]
pub enum AuxDrift {
    /// Game maximizer, entering as `χ_l w`.
    Policy(AuxiliaryPolicy),
    Field(Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>),
}

impl AuxDrift {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            AuxDrift::Policy(p) => out.copy_from_slice(&p.effective_at(x)),
            AuxDrift::Field(f) => f(x, out),
        }
    }

    /// Multilinear interpolation of per-node vectors.
    pub fn interpolated(grid: &Grid, field: &[Vec<f64>]) -> Self {
        let d = grid.dim();
        let comps: Vec<Vec<f64>> = (0..d).map(|k| field.iter().map(|w| w[k]).collect()).collect();
        let grid = grid.clone();
        AuxDrift::Field(Arc::new(move |x: &[f64], out: &mut [f64]| {
            for k in 0..d {
                out[k] = grid.interpolate(&comps[k], x).0;
            }
        }))
    }

    /// `w = Σᵀ∇log ψ`, the drift of the ground diffusion for the eigenfunction `ψ`.
    pub fn ground(model: &DiffusionModel, grid: &Grid, psi: &[f64]) -> Result<Self> {
        Ok(Self::interpolated(grid, &value_gradient_field(model, grid, psi)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub time: f64,
    /// `∫₀^τ r dt`.
    pub int_r: f64,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub terminal: Vec<f64>,
    /// `∫ r dt`.
    pub int_r: f64,
    /// `∫ ½‖w‖² dt`.
    pub int_w: f64,
    /// `∫ w·dW`.
    pub stoch_w: f64,
    pub max_norm: f64,
    pub hit: Option<HitRecord>,
    /// Non-finite or exploding state; excluded from every estimator.
    pub blown_up: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemHistogram {
    pub radial_bin: f64,
    /// Occupation fraction per radial bin; the last entry pools everything beyond the range.
    pub radial_mass: Vec<f64>,
    /// Occupation fraction per grid cell (nearest node) when a grid was configured.
    pub cell_mass: Option<Vec<f64>>,
}

impl MemHistogram {
    /// Occupation mass at radii `≥ rho` (bin resolution).
    pub fn mass_beyond(&self, rho: f64) -> f64 {
        let first = (rho / self.radial_bin).ceil() as usize;
        self.radial_mass.iter().skip(first).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub paths: Vec<PathRecord>,
    pub dt: f64,
    /// Simulated horizon `n_steps · dt`.
    pub horizon: f64,
    pub antithetic: bool,
    pub blown_up: usize,
    pub mem: Option<MemHistogram>,
    /// SHA-256 over every path record, in path order.
    pub digest: String,
}

impl PathEnsemble {
    pub fn used_paths(&self) -> impl Iterator<Item = &PathRecord> {
        self.paths.iter().filter(|p| !p.blown_up)
    }

    fn compute_digest(paths: &[PathRecord]) -> String {
        let mut h = Sha256::new();
        for p in paths {
            for v in p.terminal.iter().chain([&p.int_r, &p.int_w, &p.stoch_w, &p.max_norm]) {
                h.update(v.to_le_bytes());
            }
            h.update([u8::from(p.blown_up)]);
            if let Some(hit) = &p.hit {
                h.update(hit.time.to_le_bytes());
                h.update(hit.int_r.to_le_bytes());
                hit.state.iter().for_each(|v| h.update(v.to_le_bytes()));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Standard normals drawn by path `path` (antithetic partners share a stream).
fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The first `count` normals consumed by path `path` of an ensemble without antithetics.
pub fn path_normals(seed: u64, path: u64, count: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, path);
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

struct ChunkOut {
    paths: Vec<PathRecord>,
    radial: Vec<f64>,
    cells: Option<Vec<f64>>,
}

struct MemState<'a> {
    bin: f64,
    radial: Vec<f64>,
    grid: Option<&'a Grid>,
    cells: Option<Vec<f64>>,
}

impl MemState<'_> {
    fn record(&mut self, x: &[f64]) {
        let b = ((norm(x) / self.bin) as usize).min(self.radial.len() - 1);
        self.radial[b] += 1.0;
        if let (Some(g), Some(c)) = (self.grid, self.cells.as_mut()) {
            c[g.nearest_node(x)] += 1.0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    model: &DiffusionModel,
    feedback: &Feedback,
    aux: Option<&AuxDrift>,
    cfg: &SimulationConfig,
    n_steps: usize,
    path: usize,
    mem: Option<&mut MemState>,
) -> PathRecord {
    let d = model.dim();
    let (stream, sign) = if cfg.antithetic {
        ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (path as u64, 1.0)
    };
    let mut rng = path_rng(cfg.seed, stream);
    let sq = cfg.dt.sqrt();
    let mut x = cfg.x0.clone();
    let mut b = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut w = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let (mut int_r, mut int_w, mut stoch_w) = (0.0, 0.0, 0.0);
    let mut max_norm = norm(&x);
    let mut hit = None;
    let mut blown_up = false;
    let mut mem = mem;
    let check_hit = |x: &[f64], step: usize, int_r: f64, hit: &mut Option<HitRecord>| {
        if let Some(r) = cfg.target_radius {
            if hit.is_none() && norm(x) <= r {
                *hit = Some(HitRecord {
                    time: step as f64 * cfg.dt,
                    int_r,
                    state: x.to_vec(),
                });
            }
        }
    };
    for step in 0..n_steps {
        check_hit(&x, step, int_r, &mut hit);
        if hit.is_some() && cfg.stop_at_target {
            break;
        }
        if let Some(m) = mem.as_deref_mut() {
            m.record(&x);
        }
        let r = feedback.drift_cost(model, &x, &mut b, &mut tmp);
        model.sigma_into(&x, &mut s);
        match aux {
            Some(a) => a.eval(&x, &mut w),
            None => w.iter_mut().for_each(|v| *v = 0.0),
        }
        for v in xi.iter_mut() {
            *v = sign * rng.sample::<f64, _>(StandardNormal);
        }
        int_r += r * cfg.dt;
        int_w += 0.5 * w.iter().map(|v| v * v).sum::<f64>() * cfg.dt;
        stoch_w += w.iter().zip(&xi).map(|(a, e)| a * e).sum::<f64>() * sq;
        for i in 0..d {
            let mut inc = b[i] * cfg.dt;
            for j in 0..d {
                inc += s[i * d + j] * (w[j] * cfg.dt + xi[j] * sq);
            }
            x[i] += inc;
        }
        let n = norm(&x);
        max_norm = max_norm.max(n);
        if !n.is_finite() || n > BLOWUP_NORM {
            blown_up = true;
            break;
        }
    }
    if !blown_up {
        check_hit(&x, n_steps, int_r, &mut hit);
    }
    PathRecord {
        terminal: x,
        int_r,
        int_w,
        stoch_w,
        max_norm,
        hit,
        blown_up,
    }
}

/// Simulates `cfg.n_paths` paths of `dX = (b(X,u) + Σ(X)w(X))dt + Σ(X)dW`.
pub fn simulate(
    model: &DiffusionModel,
    feedback: &Feedback,
    aux: Option<&AuxDrift>,
    cfg: &SimulationConfig,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    if cfg.x0.len() != model.dim() {
        return Err(Error::invalid("initial state dimension does not match the model"));
    }
    if let Feedback::Policy { grid, policy } = feedback {
        policy.validate(grid.n_nodes(), model.controls().len())?;
    }
    let n_steps = cfg.n_steps();
    let mem_grid = match &cfg.mem {
        Some(MemConfig {
            grid_radii: Some(r),
            grid_counts: Some(c),
            ..
        }) => Some(build_grid(r, c)?),
        _ => None,
    };
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let chunks: Vec<ChunkOut> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut state = cfg.mem.as_ref().map(|m| MemState {
                bin: m.radial_bin,
                radial: vec![0.0; (m.radial_max / m.radial_bin).ceil() as usize + 1],
                grid: mem_grid.as_ref(),
                cells: mem_grid.as_ref().map(|g| vec![0.0; g.n_nodes()]),
            });
            let paths = (c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths))
                .map(|p| simulate_path(model, feedback, aux, cfg, n_steps, p, state.as_mut()))
                .collect();
            let (radial, cells) = match state {
                Some(s) => (s.radial, s.cells),
                None => (Vec::new(), None),
            };
            ChunkOut { paths, radial, cells }
        })
        .collect();
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut radial: Vec<f64> = Vec::new();
    let mut cells: Option<Vec<f64>> = None;
    for ch in chunks {
        paths.extend(ch.paths);
        if radial.is_empty() {
            radial = ch.radial;
        } else {
            radial.iter_mut().zip(&ch.radial).for_each(|(a, b)| *a += b);
        }
        cells = match (cells, ch.cells) {
            (None, c) => c,
            (Some(mut a), Some(b)) => {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Some(a)
            }
            (a, None) => a,
        };
    }
    let mem = cfg.mem.as_ref().map(|m| {
        let total: f64 = radial.iter().sum();
        let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
        MemHistogram {
            radial_bin: m.radial_bin,
            radial_mass: radial.iter().map(|v| v * scale).collect(),
            cell_mass: cells.map(|c| c.iter().map(|v| v * scale).collect()),
        }
    });
    let blown_up = paths.iter().filter(|p| p.blown_up).count();
    if blown_up > 0 {
        log::warn!("{blown_up} of {} paths blew up and are excluded", cfg.n_paths);
    }
    let digest = PathEnsemble::compute_digest(&paths);
    Ok(PathEnsemble {
        paths,
        dt: cfg.dt,
        horizon: n_steps as f64 * cfg.dt,
        antithetic: cfg.antithetic,
        blown_up,
        mem,
        digest,
    })
}

/// `log mean exp(y)` and the delta-method standard error of that log-mean.
fn log_mean_exp(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, 0.0);
    }
    let s: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
    let mean = s.iter().sum::<f64>() / n;
    let se = if y.len() > 1 {
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() / mean
    } else {
        0.0
    };
    (m + mean.ln(), se)
}

/// Per-sample log-values; antithetic partners are merged into one sample.
fn samples(ens: &PathEnsemble, value: impl Fn(&PathRecord) -> f64) -> Vec<f64> {
    if ens.antithetic {
        ens.paths
            .chunks(2)
            .filter(|p| p.iter().all(|r| !r.blown_up))
            .map(|p| {
                let (a, b) = (value(&p[0]), value(&p[1]));
                let m = a.max(b);
                m + (0.5 * ((a - m).exp() + (b - m).exp())).ln()
            })
            .collect()
    } else {
        ens.used_paths().map(value).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RscEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_used: usize,
    pub excluded: usize,
    pub truncation: Option<f64>,
    /// Estimate restricted to paths with `∫r ≤ L·T`.
    pub truncated_estimate: Option<f64>,
    /// Share of `Σ exp(∫r)` carried by paths with `∫r > L·T`.
    pub tail_mass: Option<f64>,
}

/// `(1/T) log mean exp(∫r dt)` over the ensemble.
pub fn estimate_rsc_cost(ens: &PathEnsemble, truncation: Option<f64>) -> Result<RscEstimate> {
    let y = samples(ens, |p| p.int_r);
    if y.is_empty() {
        return Err(Error::Simulation("no usable paths in the ensemble".into()));
    }
    let t = ens.horizon;
    let (lme, se) = log_mean_exp(&y);
    let (truncated_estimate, tail_mass) = match truncation {
        Some(l) => {
            let cut = l * t;
            let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = y.iter().map(|v| (v - m).exp()).sum();
            let kept: f64 = y.iter().filter(|v| **v <= cut).map(|v| (v - m).exp()).sum();
            let trunc = if kept > 0.0 {
                (m + (kept / y.len() as f64).ln()) / t
            } else {
                f64::NEG_INFINITY
            };
            (Some(trunc), Some(1.0 - kept / total))
        }
        None => (None, None),
    };
    Ok(RscEstimate {
        estimate: lme / t,
        stderr: se / t,
        n_used: y.len(),
        excluded: ens.blown_up,
        truncation,
        truncated_estimate,
        tail_mass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    /// `λ + (1/T) log mean[exp(∫(r−λ) − ∫w·dW − ½∫‖w‖²) ψ(X_T)/ψ(x₀)]` under the ground diffusion.
    pub estimate: f64,
    pub stderr: f64,
    /// `(1/T) log mean[exp(∫r − ∫w·dW − ½∫‖w‖²)]`, the reweighted finite-horizon cost.
    pub finite_horizon: f64,
    pub finite_horizon_stderr: f64,
    /// Paths that left the grid box, where `ψ` and its gradient are clamped.
    pub clipped_paths: usize,
    pub n_used: usize,
    pub horizon: f64,
}

/// Importance-sampled risk-sensitive cost using the ground diffusion of `eigenpair`.
pub fn importance_sampled_cost(
    model: &DiffusionModel,
    feedback: &Feedback,
    grid: &Grid,
    eigenpair: &Eigenpair,
    cfg: &SimulationConfig,
) -> Result<IsEstimate> {
    let aux = AuxDrift::ground(model, grid, &eigenpair.vector)?;
    let ens = simulate(model, feedback, Some(&aux), cfg)?;
    let logpsi = eigenpair.log_vector();
    let (lp0, _) = grid.interpolate(&logpsi, &cfg.x0);
    let lambda = eigenpair.value;
    let t = ens.horizon;
    let rmin = grid.radii().iter().copied().fold(f64::INFINITY, f64::min);
    let clipped_paths = ens
        .used_paths()
        .filter(|p| p.max_norm > rmin || !grid.contains(&p.terminal))
        .count();
    if clipped_paths > 0 {
        log::warn!("{clipped_paths} paths left the grid; eigenfunction values were clamped");
    }
    let y = samples(&ens, |p| {
        p.int_r - lambda * t - p.stoch_w - p.int_w + grid.interpolate(&logpsi, &p.terminal).0 - lp0
    });
    let z = samples(&ens, |p| p.int_r - p.stoch_w - p.int_w);
    if y.is_empty() {
        return Err(Error::Simulation("no usable paths in the ensemble".into()));
    }
    let (ly, sy) = log_mean_exp(&y);
    let (lz, sz) = log_mean_exp(&z);
    Ok(IsEstimate {
        estimate: lambda + ly / t,
        stderr: sy / t,
        finite_horizon: lz / t,
        finite_horizon_stderr: sz / t,
        clipped_paths,
        n_used: y.len(),
        horizon: t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationPoint {
    pub x: Vec<f64>,
    /// `mean[exp(∫₀^τ (r − Λ)dt) V(X_τ)] / V(x)` over paths that hit the ball.
    pub ratio: f64,
    pub stderr: f64,
    pub hit_fraction: f64,
    /// More than 1% of paths did not reach the ball within the horizon.
    pub inconclusive: bool,
}

/// Monte Carlo check of `V(x) = E[exp(∫₀^τ (r − Λ)dt) V(X_τ)]` with `τ` the entrance time of
/// the closed ball of radius `radius`.
#[allow(clippy::too_many_arguments)]
pub fn check_stochastic_representation(
    model: &DiffusionModel,
    feedback: &Feedback,
    grid: &Grid,
    v: &[f64],
    lambda: f64,
    radius: f64,
    test_points: &[Vec<f64>],
    cfg: &SimulationConfig,
) -> Result<Vec<RepresentationPoint>> {
    if v.len() != grid.n_nodes() || v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::invalid("V must be positive on every grid node"));
    }
    let logv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    test_points
        .iter()
        .map(|x| {
            if norm(x) < radius - 1e-12 {
                return Err(Error::invalid(format!("test point {x:?} lies inside the target ball")));
            }
            let mut c = cfg.clone();
            c.x0 = x.clone();
            c.target_radius = Some(radius);
            c.stop_at_target = true;
            let ens = simulate(model, feedback, None, &c)?;
            let lv0 = grid.interpolate(&logv, x).0;
            let hits: Vec<f64> = ens
                .used_paths()
                .filter_map(|p| p.hit.as_ref())
                .map(|h| h.int_r - lambda * h.time + grid.interpolate(&logv, &h.state).0 - lv0)
                .collect();
            let hit_fraction = hits.len() as f64 / c.n_paths as f64;
            if hits.is_empty() {
                return Ok(RepresentationPoint {
                    x: x.clone(),
                    ratio: f64::NAN,
                    stderr: f64::NAN,
                    hit_fraction,
                    inconclusive: true,
                });
            }
            let (lme, se) = log_mean_exp(&hits);
            let ratio = lme.exp();
            Ok(RepresentationPoint {
                x: x.clone(),
                ratio,
                stderr: se * ratio,
                hit_fraction,
                inconclusive: hit_fraction < 0.99,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemReport {
    /// `(ρ, occupation mass at radius ≥ ρ)`.
    pub beyond: Vec<(f64, f64)>,
    /// Mass of each annulus between consecutive radii (the last one unbounded).
    pub shells: Vec<f64>,
    /// Annulus masses are non-increasing in the radius.
    pub tight: bool,
}

pub fn mem_tightness_report(ens: &PathEnsemble, shell_radii: &[f64]) -> Result<MemReport> {
    let mem = ens
        .mem
        .as_ref()
        .ok_or_else(|| Error::invalid("ensemble was simulated without a MEM histogram"))?;
    if shell_radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("shell radii must be strictly increasing"));
    }
    let beyond: Vec<(f64, f64)> = shell_radii.iter().map(|&r| (r, mem.mass_beyond(r))).collect();
    let shells: Vec<f64> = beyond
        .iter()
        .enumerate()
        .map(|(i, &(_, m))| m - beyond.get(i + 1).map(|b| b.1).unwrap_or(0.0))
        .collect();
    let tight = shells.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    Ok(MemReport { beyond, shells, tight })
}
