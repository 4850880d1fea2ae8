//! Controlled diffusion models `dX = b(X,U) dt + Σ(X) dW` with running cost `r(X,U)`.
//!
//! Coefficients are stored as thread-safe closures writing into caller buffers so that
//! assembly and path simulation evaluate them without allocating.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes `Σ(x)` in row-major order into a `dim * dim` buffer.
pub type SigmaFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type CostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Finite ordered discretization of the compact control space.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
    description: String,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>, description: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("control set must be non-empty"));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("control points must share one dimension"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("control point {i} is not finite")));
            }
            if points[..i].iter().any(|q| q == p) {
                return Err(Error::invalid(format!("control point {i} duplicates an earlier point")));
            }
        }
        Ok(Self {
            points,
            description: description.into(),
        })
    }

    /// `n` equispaced scalar controls on `[-u_max, u_max]`; `n = 1` gives the single point 0.
    pub fn equispaced(u_max: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n_controls must be at least 1"));
        }
        if !(u_max >= 0.0) {
            return Err(Error::invalid("u_max must be nonnegative"));
        }
        if n > 1 && u_max == 0.0 {
            return Err(Error::invalid("u_max = 0 admits a single control only"));
        }
        let points = if n == 1 {
            vec![vec![0.0]]
        } else {
            (0..n)
                .map(|k| vec![-u_max + 2.0 * u_max * k as f64 / (n - 1) as f64])
                .collect()
        };
        Self::new(points, format!("{n} equispaced points in [-{u_max}, {u_max}]"))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn control_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Open region of the state space with an optional continuous blend.
///
/// The blend equals 1 inside the region and 0 once the point is farther than `collar` from it.
#[derive(Clone)]
pub struct RegionSpec {
    indicator: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    blend: Option<StateFn>,
    collar: f64,
    label: String,
}

impl RegionSpec {
    pub fn new(
        label: impl Into<String>,
        indicator: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            indicator: Arc::new(indicator),
            blend: None,
            collar: 0.0,
            label: label.into(),
        }
    }

    pub fn with_blend(mut self, collar: f64, blend: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.blend = Some(Arc::new(blend));
        self.collar = collar;
        self
    }

    pub fn everywhere() -> Self {
        Self::new("all", |_| true).with_blend(0.0, |_| 1.0)
    }

    pub fn nowhere() -> Self {
        Self::new("empty", |_| false).with_blend(0.0, |_| 0.0)
    }

    /// `{x : |e·x| > δ‖x‖}`, the cone around the sum direction used by the W network.
    pub fn sum_cone(delta: f64, collar: f64) -> Self {
        let indicator = move |x: &[f64]| {
            let s: f64 = x.iter().sum();
            s.abs() > delta * norm(x)
        };
        let blend = move |x: &[f64]| {
            let s: f64 = x.iter().sum();
            let excess = s.abs() - delta * norm(x);
            smoothstep((excess + collar) / collar.max(f64::MIN_POSITIVE))
        };
        Self::new(format!("sum cone delta={delta}"), indicator).with_blend(collar, blend)
    }

    /// Complement of the closed ball of the given radius.
    pub fn ball_exterior(radius: f64, collar: f64) -> Self {
        Self::new(format!("exterior of B_{radius}"), move |x| norm(x) > radius).with_blend(
            collar,
            move |x| smoothstep((norm(x) - radius + collar) / collar.max(f64::MIN_POSITIVE)),
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }

    /// Continuous membership weight; falls back to the indicator when no blend is declared.
    pub fn blend(&self, x: &[f64]) -> f64 {
        match &self.blend {
            Some(b) => b(x).clamp(0.0, 1.0),
            None => f64::from(u8::from(self.contains(x))),
        }
    }

    pub fn has_blend(&self) -> bool {
        self.blend.is_some()
    }

    pub fn collar(&self) -> f64 {
        self.collar
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegionSpec")
            .field("label", &self.label)
            .field("collar", &self.collar)
            .finish()
    }
}

/// Cubic ramp clamped to `[0, 1]`.
pub(crate) fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    dim: usize,
    drift: DriftFn,
    sigma: SigmaFn,
    cost: CostFn,
    controls: ControlSet,
    region_k: RegionSpec,
    nondeg_floor: f64,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("controls", &self.controls.len())
            .field("region_k", &self.region_k)
            .field("nondeg_floor", &self.nondeg_floor)
            .finish()
    }
}

impl DiffusionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: DriftFn,
        sigma: SigmaFn,
        cost: CostFn,
        controls: ControlSet,
        region_k: RegionSpec,
        nondeg_floor: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        if !(nondeg_floor > 0.0) {
            return Err(Error::invalid("nondeg_floor must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            drift,
            sigma,
            cost,
            controls,
            region_k,
            nondeg_floor,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn region_k(&self) -> &RegionSpec {
        &self.region_k
    }

    pub fn nondeg_floor(&self) -> f64 {
        self.nondeg_floor
    }

    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(x, u, out)
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, u, &mut out);
        out
    }

    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }

    pub fn sigma(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(x, &mut out);
        out
    }

    /// `A(x) = Σ(x) Σ(x)ᵀ`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let s = self.sigma(x);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
            }
        }
        a
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.cost)(x, u)
    }

    pub fn cost_fn(&self) -> &CostFn {
        &self.cost
    }

    /// Same dynamics with a different running cost.
    pub fn with_cost(&self, name: impl Into<String>, cost: CostFn) -> Self {
        Self {
            name: name.into(),
            cost,
            ..self.clone()
        }
    }

    /// Same dynamics and cost restricted to one control (index into the control set).
    pub fn restricted_to(&self, control: usize) -> Result<Self> {
        if control >= self.controls.len() {
            return Err(Error::invalid(format!("control index {control} out of range")));
        }
        let controls = ControlSet::new(vec![self.controls.point(control).to_vec()], "single control")?;
        Ok(Self {
            controls,
            ..self.clone()
        })
    }

    /// Same model with running cost `κ·r`.
    pub fn scaled_cost(&self, kappa: f64) -> Self {
        let base = self.cost.clone();
        self.with_cost(
            format!("{} (cost x {kappa})", self.name),
            Arc::new(move |x: &[f64], u: &[f64]| kappa * base(x, u)),
        )
    }

    /// Smallest observed ratio `zᵀA(x)z / ‖z‖²` over the supplied pairs.
    pub fn nondegeneracy_ratio(&self, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let d = self.dim;
        samples
            .iter()
            .map(|(x, z)| {
                let a = self.diffusion_matrix(x);
                let mut quad = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        quad += z[i] * a[i * d + j] * z[j];
                    }
                }
                let zz: f64 = z.iter().map(|v| v * v).sum();
                if zz > 0.0 {
                    quad / zz
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Scalar Ornstein–Uhlenbeck model with linear control and quadratic costs:
/// `b(x,u) = a x + u`, `Σ = sigma`, `r(x,u) = ½ q x² + ½ c u²`.
pub fn builtin_ou_lq(a: f64, sigma: f64, q: f64, c: f64, u_max: f64, n_controls: usize) -> Result<DiffusionModel> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(q >= 0.0) || !(c >= 0.0) {
        return Err(Error::invalid("cost weights q and c must be nonnegative"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("drift coefficient must be finite"));
    }
    let controls = ControlSet::equispaced(u_max, n_controls)?;
    DiffusionModel::new(
        format!("ou_lq(a={a}, sigma={sigma}, q={q}, c={c})"),
        1,
        Arc::new(move |x: &[f64], u: &[f64], out: &mut [f64]| out[0] = a * x[0] + u[0]),
        Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = sigma),
        Arc::new(move |x: &[f64], u: &[f64]| 0.5 * q * x[0] * x[0] + 0.5 * c * u[0] * u[0]),
        controls,
        RegionSpec::everywhere(),
        sigma * sigma,
    )
}

/// Parameters of the three-class, two-pool "W" network diffusion limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WNetworkParams {
    pub arrival_rates: [f64; 3],
    /// `service_rates[i][j]`: rate of pool `j+1` serving class `i+1`.
    /// Only μ₁₁, μ₂₁, μ₂₂ and μ₃₂ enter the dynamics.
    pub service_rates: [[f64; 2]; 3],
    pub l_vec: [f64; 3],
    pub cost_weights: [f64; 3],
    /// Lattice resolution of each simplex factor of the control space.
    pub n_controls: usize,
    #[serde(default = "default_w_delta")]
    pub delta: f64,
}

fn default_w_delta() -> f64 {
    0.1
}

impl WNetworkParams {
    pub fn m1(&self) -> [[f64; 3]; 3] {
        let mu = &self.service_rates;
        [
            [mu[0][0], 0.0, 0.0],
            [mu[1][1] - mu[1][0], mu[1][1], 0.0],
            [0.0, 0.0, mu[2][1]],
        ]
    }

    pub fn m2(&self) -> [[f64; 2]; 3] {
        let mu = &self.service_rates;
        [[0.0, 0.0], [mu[1][0] - mu[1][1], 0.0], [0.0, 0.0]]
    }
}

/// Points `k/m` with nonnegative integer `k` summing to `m`, in lexicographic order.
pub fn simplex_lattice(dim: usize, m: usize) -> Vec<Vec<f64>> {
    fn rec(dim: usize, remaining: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == dim - 1 {
            prefix.push(remaining);
            out.push(prefix.iter().map(|&k| k as f64 / m as f64).collect());
            prefix.pop();
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            rec(dim, remaining - k, m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, m, m, &mut Vec::new(), &mut out);
    out
}

pub fn builtin_w_network(params: &WNetworkParams) -> Result<DiffusionModel> {
    let rates_ok = params.arrival_rates.iter().all(|&v| v > 0.0)
        && params.service_rates.iter().flatten().all(|&v| v > 0.0);
    if !rates_ok {
        return Err(Error::invalid("W network rates must all be positive"));
    }
    if params.cost_weights.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::invalid("W network cost weights must be positive"));
    }
    if params.n_controls == 0 {
        return Err(Error::invalid("n_controls must be at least 1"));
    }
    let m1 = params.m1();
    let m2 = params.m2();
    let l = params.l_vec;
    let c = params.cost_weights;

    // u = (u^c, u^s) with u^c on the 2-simplex and u^s on the 1-simplex.
    let mut points = Vec::new();
    for uc in simplex_lattice(3, params.n_controls) {
        for us in simplex_lattice(2, params.n_controls) {
            let mut p = uc.clone();
            p.extend_from_slice(&us);
            points.push(p);
        }
    }
    let controls = ControlSet::new(points, format!("simplex product lattice m={}", params.n_controls))?;

    let drift = move |x: &[f64], u: &[f64], out: &mut [f64]| {
        let s: f64 = x[0] + x[1] + x[2];
        let pos = s.max(0.0);
        let neg = (-s).max(0.0);
        let y = [x[0] - pos * u[0], x[1] - pos * u[1], x[2] - pos * u[2]];
        for i in 0..3 {
            let m1y = m1[i][0] * y[0] + m1[i][1] * y[1] + m1[i][2] * y[2];
            let m2us = m2[i][0] * u[3] + m2[i][1] * u[4];
            out[i] = l[i] - m1y + neg * m2us;
        }
    };
    let sd = params.arrival_rates.map(|lam| (2.0 * lam).sqrt());
    let sigma = move |_x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        out[0] = sd[0];
        out[4] = sd[1];
        out[8] = sd[2];
    };
    let cost = move |x: &[f64], u: &[f64]| {
        let pos = (x[0] + x[1] + x[2]).max(0.0);
        c[0] * pos * u[0] + c[1] * pos * u[1] + c[2] * pos * u[2]
    };
    let floor = sd.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
    DiffusionModel::new(
        "w_network",
        3,
        Arc::new(drift),
        Arc::new(sigma),
        Arc::new(cost),
        controls,
        RegionSpec::sum_cone(params.delta, 0.05),
        floor,
    )
}

/// One monomial `coef · Π xᵢ^{x[i]} · Π uⱼ^{u[j]}`; missing exponents are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    #[serde(default)]
    pub x: Vec<u32>,
    #[serde(default)]
    pub u: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut v = self.coef;
        for (xi, &p) in x.iter().zip(&self.x) {
            v *= xi.powi(p as i32);
        }
        for (ui, &p) in u.iter().zip(&self.u) {
            v *= ui.powi(p as i32);
        }
        v
    }
}

fn eval_poly(terms: &[Monomial], x: &[f64], u: &[f64]) -> f64 {
    terms.iter().map(|t| t.eval(x, u)).sum()
}

/// Region selector usable from declarative configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    #[default]
    All,
    Empty,
    SumCone { delta: f64, collar: f64 },
    BallExterior { radius: f64, collar: f64 },
}

impl RegionKind {
    pub fn build(&self) -> RegionSpec {
        match *self {
            RegionKind::All => RegionSpec::everywhere(),
            RegionKind::Empty => RegionSpec::nowhere(),
            RegionKind::SumCone { delta, collar } => RegionSpec::sum_cone(delta, collar),
            RegionKind::BallExterior { radius, collar } => RegionSpec::ball_exterior(radius, collar),
        }
    }
}

/// Polynomial model loaded from configuration: drift components, diffusion entries and
/// cost are sums of monomials in `(x, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModelSpec {
    pub dim: usize,
    pub drift: Vec<Vec<Monomial>>,
    /// Row-major `dim x dim` entries of Σ as functions of `x` (control exponents ignored).
    pub sigma: Vec<Vec<Vec<Monomial>>>,
    pub cost: Vec<Monomial>,
    pub controls: Vec<Vec<f64>>,
    pub nondeg_floor: f64,
    #[serde(default)]
    pub region_k: RegionKind,
}

impl PolynomialModelSpec {
    pub fn build(&self) -> Result<DiffusionModel> {
        let d = self.dim;
        if self.drift.len() != d {
            return Err(Error::invalid(format!("drift has {} components, expected {d}", self.drift.len())));
        }
        if self.sigma.len() != d || self.sigma.iter().any(|row| row.len() != d) {
            return Err(Error::invalid(format!("sigma must be a {d}x{d} array of polynomials")));
        }
        let controls = ControlSet::new(self.controls.clone(), "declared control points")?;
        let drift_terms = self.drift.clone();
        let sigma_terms: Vec<Vec<Monomial>> = self.sigma.iter().flatten().cloned().collect();
        let cost_terms = self.cost.clone();
        DiffusionModel::new(
            "polynomial",
            d,
            Arc::new(move |x: &[f64], u: &[f64], out: &mut [f64]| {
                for (o, terms) in out.iter_mut().zip(&drift_terms) {
                    *o = eval_poly(terms, x, u);
                }
            }),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, terms) in out.iter_mut().zip(&sigma_terms) {
                    *o = eval_poly(terms, x, &[]);
                }
            }),
            Arc::new(move |x: &[f64], u: &[f64]| eval_poly(&cost_terms, x, u)),
            controls,
            self.region_k.build(),
            self.nondeg_floor,
        )
    }
}

/// Logarithm `𝔙 = log 𝒱` of a Foster–Lyapunov function, with optional exact derivatives.
#[derive(Clone)]
pub struct LyapunovLog {
    pub value: StateFn,
    pub gradient: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    /// Row-major Hessian.
    pub hessian: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
}

impl LyapunovLog {
    pub fn from_fn(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
        }
    }

    /// `xᵀ diag(q) x`, which agrees with the quadratic form everywhere and is smooth.
    pub fn quadratic(q_diag: Vec<f64>) -> Self {
        let qv = q_diag.clone();
        let qg = q_diag.clone();
        let qh = q_diag;
        Self {
            value: Arc::new(move |x| x.iter().zip(&qv).map(|(xi, qi)| qi * xi * xi).sum()),
            gradient: Some(Arc::new(move |x| x.iter().zip(&qg).map(|(xi, qi)| 2.0 * qi * xi).collect())),
            hessian: Some(Arc::new(move |x| {
                let d = x.len();
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    h[i * d + i] = 2.0 * qh[i];
                }
                h
            })),
        }
    }

    fn fd_gradient(&self, x: &[f64], step: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                xp[i] = x[i] + step;
                let fp = (self.value)(&xp);
                xp[i] = x[i] - step;
                let fm = (self.value)(&xp);
                xp[i] = x[i];
                (fp - fm) / (2.0 * step)
            })
            .collect()
    }

    fn fd_hessian(&self, x: &[f64], step: f64) -> Vec<f64> {
        let d = x.len();
        let f0 = (self.value)(x);
        let mut h = vec![0.0; d * d];
        let mut xp = x.to_vec();
        for i in 0..d {
            xp[i] = x[i] + step;
            let fp = (self.value)(&xp);
            xp[i] = x[i] - step;
            let fm = (self.value)(&xp);
            xp[i] = x[i];
            h[i * d + i] = (fp - 2.0 * f0 + fm) / (step * step);
            for j in 0..d {
                if j == i {
                    continue;
                }
                // One-sided mixed difference; its asymmetry flags non-smooth functions.
                let mut eval = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * step;
                    xp[j] = x[j] + sj * step;
                    let v = (self.value)(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let fpp = eval(1.0, 1.0);
                let fp0 = eval(1.0, 0.0);
                let f0p = eval(0.0, 1.0);
                h[i * d + j] = if i < j {
                    (fpp - fp0 - f0p + f0) / (step * step)
                } else {
                    let fmm = eval(-1.0, -1.0);
                    let fm0 = eval(-1.0, 0.0);
                    let f0m = eval(0.0, -1.0);
                    (fmm - fm0 - f0m + f0) / (step * step)
                };
            }
        }
        h
    }

    fn derivatives(&self, x: &[f64], sym_tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let step = 1e-4 * scale;
        let grad = match &self.gradient {
            Some(g) => g(x),
            None => self.fd_gradient(x, step),
        };
        let hess = match &self.hessian {
            Some(h) => h(x),
            None => {
                let d = x.len();
                let h1 = self.fd_hessian(x, step);
                let h2 = self.fd_hessian(x, 0.5 * step);
                for i in 0..d {
                    for j in 0..d {
                        let a = h1[i * d + j];
                        let tol = sym_tol * (1.0 + a.abs());
                        if (a - h1[j * d + i]).abs() > tol || (a - h2[i * d + j]).abs() > tol {
                            return Err(Error::Assumption(format!(
                                "log-Lyapunov function is not twice differentiable at {x:?} \
                                 (finite-difference Hessian entry ({i},{j}) unstable)"
                            )));
                        }
                    }
                }
                h1
            }
        };
        Ok((grad, hess))
    }
}

impl fmt::Debug for LyapunovLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovLog")
            .field("exact_gradient", &self.gradient.is_some())
            .field("exact_hessian", &self.hessian.is_some())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `𝓛ᵘ𝔙 + ½‖Σᵀ∇𝔙‖² ≤ C₁ − h̄` on `𝒦ᶜ × 𝕌`.
    Stability,
    /// `𝓛ᵘ𝔙 + ½‖Σᵀ∇𝔙‖² ≤ C₂ + C₃ r` on `𝒦 × 𝕌`.
    CostBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub inequality: Inequality,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checked_points: usize,
    pub violations: Vec<Violation>,
    pub constants: AssumptionConstants,
    pub slacks: Vec<f64>,
    pub worst_slack: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the logarithmic form of the mixed Foster–Lyapunov hypothesis at each sample.
pub fn check_assumptions(
    model: &DiffusionModel,
    lyap_log: &LyapunovLog,
    hbar: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    constants: AssumptionConstants,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<AssumptionReport> {
    if !(constants.c3 < 1.0) || !(constants.c1 > 0.0 && constants.c2 > 0.0 && constants.c3 > 0.0) {
        return Err(Error::invalid(format!(
            "constants must be positive with C3 < 1, got {constants:?}"
        )));
    }
    let d = model.dim();
    let mut drift = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut slacks = Vec::with_capacity(samples.len());
    let mut violations = Vec::new();
    for (x, u) in samples {
        if x.len() != d {
            return Err(Error::invalid("sample point dimension mismatch"));
        }
        let (grad, hess) = lyap_log.derivatives(x, 1e-3)?;
        model.drift_into(x, u, &mut drift);
        model.sigma_into(x, &mut sig);
        let a = model.diffusion_matrix(x);
        let first: f64 = drift.iter().zip(&grad).map(|(b, g)| b * g).sum();
        let second: f64 = 0.5 * (0..d * d).map(|k| a[k] * hess[k]).sum::<f64>();
        // ‖Σᵀ∇𝔙‖²
        let carre: f64 = (0..d)
            .map(|k| {
                let c: f64 = (0..d).map(|i| sig[i * d + k] * grad[i]).sum();
                c * c
            })
            .sum();
        let lhs = first + second + 0.5 * carre;
        let (bound, inequality) = if model.region_k().contains(x) {
            (constants.c2 + constants.c3 * model.cost(x, u), Inequality::CostBound)
        } else {
            (constants.c1 - hbar(x, u), Inequality::Stability)
        };
        let slack = bound - lhs;
        slacks.push(slack);
        if slack < 0.0 {
            violations.push(Violation {
                x: x.clone(),
                u: u.clone(),
                inequality,
                slack,
            });
        }
    }
    let worst_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AssumptionReport {
        checked_points: samples.len(),
        violations,
        constants,
        slacks,
        worst_slack,
    })
}
