//! Diffusion models, exact transition laws and trajectory simulation.
//!
//! All bundled test problems are one-dimensional linear flows with a
//! Gaussian (possibly degenerate) transition law, so their conditional
//! expectations are computable by Gauss–Hermite quadrature. Models without
//! an exact law are simulated by Euler–Maruyama.
//!
//! Randomness is keyed: trajectory `i` of a run seeded with `s` draws its
//! path, kill time and initial state from three distinct ChaCha streams
//! derived from `(s, i)`. Results therefore do not depend on how a batch is
//! scheduled across threads.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};

/// Euler–Maruyama substeps per observation interval when no exact law exists.
pub const DEFAULT_SUBSTEPS: usize = 16;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Gaussian transition law `X_t | X_0 = x ~ N(e^{λt} x, v(t))` of a scalar
/// linear diffusion. `v ≡ 0` is the deterministic flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactKernel {
    pub lambda: f64,
    pub sigma: f64,
}

impl ExactKernel {
    pub fn conditional_mean(&self, x: f64, t: f64) -> f64 {
        x * (self.lambda * t).exp()
    }

    /// `σ²/(2λ) (e^{2λt} - 1)`, or `σ² t` when `λ = 0`.
    pub fn conditional_variance(&self, t: f64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        if self.lambda == 0.0 {
            s2 * t
        } else {
            s2 / (2.0 * self.lambda) * (2.0 * self.lambda * t).exp_m1()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, t: f64, rng: &mut R) -> f64 {
        let mean = self.conditional_mean(x, t);
        let var = self.conditional_variance(t);
        if var == 0.0 {
            mean
        } else {
            let z: f64 = rng.sample(StandardNormal);
            mean + var.sqrt() * z
        }
    }
}

/// Scalar normal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub var: f64,
}

impl Normal1 {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.var.sqrt() * z
    }
}

/// `dX = b(X) dt + Λ^{1/2}(X) dB` with reward `r` and discount rate `β`.
#[derive(Clone)]
pub struct DiffusionModel {
    pub spec: ModelSpec,
    pub dim: usize,
    pub beta: f64,
    drift: VectorFn,
    /// Row-major `d×d` square root of the diffusion matrix.
    diffusion_sqrt: VectorFn,
    reward: ScalarFn,
    pub exact_kernel: Option<ExactKernel>,
    true_value: Option<ScalarFn>,
    pub stationary: Option<Normal1>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("spec", &self.spec.to_string())
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .field("exact_kernel", &self.exact_kernel)
            .field("has_true_value", &self.true_value.is_some())
            .field("stationary", &self.stationary)
            .finish()
    }
}

impl DiffusionModel {
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion_sqrt(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion_sqrt)(x, out)
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        (self.reward)(x)
    }

    pub fn true_value(&self, x: &[f64]) -> Option<f64> {
        self.true_value.as_ref().map(|v| v(x))
    }

    pub fn has_true_value(&self) -> bool {
        self.true_value.is_some()
    }

    /// A copy of this model with its reward replaced by the constant `c`;
    /// the true value becomes `c/β`.
    pub fn with_constant_reward(&self, c: f64) -> DiffusionModel {
        let mut m = self.clone();
        m.reward = Arc::new(move |_| c);
        let v = c / self.beta;
        m.true_value = Some(Arc::new(move |_| v));
        m.spec = ModelSpec::ConstantReward {
            base: Box::new(self.spec.clone()),
            c,
        };
        m
    }

    /// `β V(x) - A V(x) - r(x)` for the bundled true value, with `A` by
    /// finite differences (scalar states only).
    ///
    /// The first derivative uses a central difference with step `1e-5`;
    /// the second a five-point stencil with step `1e-3`, whose truncation
    /// and rounding errors both stay far below `1e-6` for smooth `V`.
    pub fn generator_residual(&self, x: f64) -> Option<f64> {
        let v = self.true_value.as_ref()?;
        if self.dim != 1 {
            return None;
        }
        let f = |y: f64| v(&[y]);
        let h1 = 1e-5;
        let d1 = (f(x + h1) - f(x - h1)) / (2.0 * h1);
        let h2 = 1e-3;
        let d2 = (-f(x + 2.0 * h2) + 16.0 * f(x + h2) - 30.0 * f(x) + 16.0 * f(x - h2)
            - f(x - 2.0 * h2))
            / (12.0 * h2 * h2);
        let mut b = [0.0];
        let mut s = [0.0];
        self.drift(&[x], &mut b);
        self.diffusion_sqrt(&[x], &mut s);
        let av = b[0] * d1 + 0.5 * s[0] * s[0] * d2;
        Some(self.beta * f(x) - av - self.reward(&[x]))
    }
}

/// Reward of the deterministic linear flow `dX = λX dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearReward {
    /// `r = β cos³(kx) + 3kλx cos²(kx) sin(kx)`, value `cos³(kx)`.
    Cos3 { k: f64 },
    /// `r = b x^α`, value `b x^α / (β - αλ)`.
    Power { alpha: i32, b: f64 },
}

/// Reward of the Ornstein–Uhlenbeck process `dX = λX dt + σ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuReward {
    /// `r = x²`.
    Quadratic,
    /// The reward whose value function is `exp(sin x)`.
    PeriodicExp,
    /// `r = r₀ + r₁x + r₂x²`.
    Polynomial([f64; 3]),
}

pub fn make_deterministic_linear(lambda: f64, reward: LinearReward, beta: f64) -> Result<DiffusionModel> {
    check_beta(beta)?;
    let (reward_fn, value_fn, spec): (ScalarFn, ScalarFn, ModelSpec) = match reward {
        LinearReward::Cos3 { k } => (
            Arc::new(move |x: &[f64]| {
                let (s, c) = (k * x[0]).sin_cos();
                beta * c.powi(3) + 3.0 * k * lambda * x[0] * c * c * s
            }),
            Arc::new(move |x: &[f64]| (k * x[0]).cos().powi(3)),
            ModelSpec::DetCos3 { lambda, k, beta },
        ),
        LinearReward::Power { alpha, b } => {
            let denom = beta - alpha as f64 * lambda;
            if denom.abs() <= 1e-12 * beta.abs().max(1.0) {
                return Err(Error::SingularValueFunction(format!(
                    "β = αλ ({beta} = {alpha}·{lambda}) makes the value function infinite"
                )));
            }
            (
                Arc::new(move |x: &[f64]| b * x[0].powi(alpha)),
                Arc::new(move |x: &[f64]| b * x[0].powi(alpha) / denom),
                ModelSpec::DetPower {
                    lambda,
                    alpha,
                    b,
                    beta,
                },
            )
        }
    };
    Ok(DiffusionModel {
        spec,
        dim: 1,
        beta,
        drift: Arc::new(move |x, out| out[0] = lambda * x[0]),
        diffusion_sqrt: Arc::new(|_, out| out[0] = 0.0),
        reward: reward_fn,
        exact_kernel: Some(ExactKernel { lambda, sigma: 0.0 }),
        true_value: Some(value_fn),
        stationary: None,
    })
}

pub fn make_ou(lambda: f64, sigma: f64, reward: OuReward, beta: f64) -> Result<DiffusionModel> {
    check_beta(beta)?;
    if !(lambda < 0.0) {
        return Err(Error::domain(format!(
            "OU mean reversion λ = {lambda} must be negative for a stationary law"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("OU volatility σ = {sigma} must be positive")));
    }
    let s2 = sigma * sigma;
    let (reward_fn, value_fn, spec): (ScalarFn, ScalarFn, ModelSpec) = match reward {
        OuReward::Quadratic => {
            if (beta - 2.0 * lambda).abs() < 1e-14 {
                return Err(Error::Resonance("β = 2λ".into()));
            }
            (
                Arc::new(|x: &[f64]| x[0] * x[0]),
                Arc::new(move |x: &[f64]| {
                    (s2 / (2.0 * lambda) + x[0] * x[0]) / (beta - 2.0 * lambda)
                        - s2 / (2.0 * lambda * beta)
                }),
                ModelSpec::OuQuadratic { lambda, sigma, beta },
            )
        }
        OuReward::PeriodicExp => (
            // β e^{sin x} - λx cos x e^{sin x} - σ²/2 (cos²x - sin x) e^{sin x}
            Arc::new(move |x: &[f64]| {
                let (s, c) = x[0].sin_cos();
                (beta - lambda * x[0] * c - 0.5 * s2 * (c * c - s)) * s.exp()
            }),
            Arc::new(|x: &[f64]| x[0].sin().exp()),
            ModelSpec::OuPeriodic { lambda, sigma, beta },
        ),
        OuReward::Polynomial(r) => {
            let v = lq_coefficients(lambda, sigma, beta, r)?;
            (
                Arc::new(move |x: &[f64]| r[0] + r[1] * x[0] + r[2] * x[0] * x[0]),
                Arc::new(move |x: &[f64]| v[0] + v[1] * x[0] + v[2] * x[0] * x[0]),
                ModelSpec::OuPoly {
                    lambda,
                    sigma,
                    beta,
                    r,
                },
            )
        }
    };
    Ok(DiffusionModel {
        spec,
        dim: 1,
        beta,
        drift: Arc::new(move |x, out| out[0] = lambda * x[0]),
        diffusion_sqrt: Arc::new(move |_, out| out[0] = sigma),
        reward: reward_fn,
        exact_kernel: Some(ExactKernel { lambda, sigma }),
        true_value: Some(value_fn),
        stationary: Some(Normal1 {
            mean: 0.0,
            var: s2 / (2.0 * lambda.abs()),
        }),
    })
}

/// Coefficients `(v₀, v₁, v₂)` of the quadratic value function of an OU
/// process with reward `r₀ + r₁x + r₂x²`, from `βV - AV = r`.
pub fn lq_coefficients(lambda: f64, sigma: f64, beta: f64, r: [f64; 3]) -> Result<[f64; 3]> {
    let tiny = 1e-14 * beta.abs().max(lambda.abs()).max(1.0);
    if (beta - 2.0 * lambda).abs() <= tiny {
        return Err(Error::Resonance(format!("β = 2λ = {beta}")));
    }
    if (beta - lambda).abs() <= tiny {
        return Err(Error::Resonance(format!("β = λ = {beta}")));
    }
    if beta.abs() <= tiny {
        return Err(Error::Resonance("β = 0".into()));
    }
    // x²: (β - 2λ) v₂ = r₂;  x: (β - λ) v₁ = r₁;  1: β v₀ - σ² v₂ = r₀
    let v2 = r[2] / (beta - 2.0 * lambda);
    let v1 = r[1] / (beta - lambda);
    let v0 = (r[0] + sigma * sigma * v2) / beta;
    Ok([v0, v1, v2])
}

/// Langevin diffusion `dX = -½∇U(X) dt + dB` in `dim` dimensions.
pub fn make_langevin(
    dim: usize,
    potential_grad: VectorFn,
    reward: ScalarFn,
    beta: f64,
    spec: ModelSpec,
) -> Result<DiffusionModel> {
    check_beta(beta)?;
    if dim == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    let grad = potential_grad.clone();
    Ok(DiffusionModel {
        spec,
        dim,
        beta,
        drift: Arc::new(move |x, out| {
            grad(x, out);
            out.iter_mut().for_each(|v| *v *= -0.5);
        }),
        diffusion_sqrt: Arc::new(move |_, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..dim {
                out[i * dim + i] = 1.0;
            }
        }),
        reward,
        exact_kernel: None,
        true_value: None,
        stationary: None,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("discount rate must be positive, got {beta}")));
    }
    Ok(())
}

/// Parameterized identifiers of the bundled models.
///
/// Text form is `name` or `name:key=value,key=value`, e.g.
/// `ou-periodic:lambda=-0.1,sigma=1,beta=1`. Omitted keys take the values
/// of the reference experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    DetCos3 { lambda: f64, k: f64, beta: f64 },
    DetPower { lambda: f64, alpha: i32, b: f64, beta: f64 },
    OuQuadratic { lambda: f64, sigma: f64, beta: f64 },
    OuPeriodic { lambda: f64, sigma: f64, beta: f64 },
    OuPoly { lambda: f64, sigma: f64, beta: f64, r: [f64; 3] },
    /// `U(x) = κ|x|²/2` in `dim` dimensions.
    LangevinQuadratic { kappa: f64, beta: f64, dim: usize },
    /// `U(x) = (x² - 1)²/4`, reward `cos x`.
    LangevinDoubleWell { beta: f64 },
    ConstantReward { base: Box<ModelSpec>, c: f64 },
}

impl ModelSpec {
    pub fn build(&self) -> Result<DiffusionModel> {
        match self {
            ModelSpec::DetCos3 { lambda, k, beta } => {
                make_deterministic_linear(*lambda, LinearReward::Cos3 { k: *k }, *beta)
            }
            ModelSpec::DetPower { lambda, alpha, b, beta } => make_deterministic_linear(
                *lambda,
                LinearReward::Power { alpha: *alpha, b: *b },
                *beta,
            ),
            ModelSpec::OuQuadratic { lambda, sigma, beta } => {
                make_ou(*lambda, *sigma, OuReward::Quadratic, *beta)
            }
            ModelSpec::OuPeriodic { lambda, sigma, beta } => {
                make_ou(*lambda, *sigma, OuReward::PeriodicExp, *beta)
            }
            ModelSpec::OuPoly { lambda, sigma, beta, r } => {
                make_ou(*lambda, *sigma, OuReward::Polynomial(*r), *beta)
            }
            ModelSpec::LangevinQuadratic { kappa, beta, dim } => {
                let k = *kappa;
                make_langevin(
                    *dim,
                    Arc::new(move |x, out| {
                        for (o, xi) in out.iter_mut().zip(x) {
                            *o = k * xi;
                        }
                    }),
                    Arc::new(|x| x.iter().map(|v| v * v).sum()),
                    *beta,
                    self.clone(),
                )
            }
            ModelSpec::LangevinDoubleWell { beta } => make_langevin(
                1,
                Arc::new(|x, out| out[0] = x[0] * (x[0] * x[0] - 1.0)),
                Arc::new(|x| x[0].cos()),
                *beta,
                self.clone(),
            ),
            ModelSpec::ConstantReward { base, c } => Ok(base.build()?.with_constant_reward(*c)),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            ModelSpec::DetCos3 { beta, .. }
            | ModelSpec::DetPower { beta, .. }
            | ModelSpec::OuQuadratic { beta, .. }
            | ModelSpec::OuPeriodic { beta, .. }
            | ModelSpec::OuPoly { beta, .. }
            | ModelSpec::LangevinQuadratic { beta, .. }
            | ModelSpec::LangevinDoubleWell { beta } => *beta,
            ModelSpec::ConstantReward { base, .. } => base.beta(),
        }
    }

    /// Names accepted by [`ModelSpec::from_str`].
    pub const NAMES: [&'static str; 7] = [
        "det-cos3",
        "det-power",
        "ou-quadratic",
        "ou-periodic",
        "ou-poly",
        "langevin-quadratic",
        "langevin-double-well",
    ];
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::DetCos3 { lambda, k, beta } => {
                write!(f, "det-cos3:lambda={lambda},k={k},beta={beta}")
            }
            ModelSpec::DetPower { lambda, alpha, b, beta } => {
                write!(f, "det-power:lambda={lambda},alpha={alpha},b={b},beta={beta}")
            }
            ModelSpec::OuQuadratic { lambda, sigma, beta } => {
                write!(f, "ou-quadratic:lambda={lambda},sigma={sigma},beta={beta}")
            }
            ModelSpec::OuPeriodic { lambda, sigma, beta } => {
                write!(f, "ou-periodic:lambda={lambda},sigma={sigma},beta={beta}")
            }
            ModelSpec::OuPoly { lambda, sigma, beta, r } => write!(
                f,
                "ou-poly:lambda={lambda},sigma={sigma},beta={beta},r0={},r1={},r2={}",
                r[0], r[1], r[2]
            ),
            ModelSpec::LangevinQuadratic { kappa, beta, dim } => {
                write!(f, "langevin-quadratic:kappa={kappa},beta={beta},dim={dim}")
            }
            ModelSpec::LangevinDoubleWell { beta } => write!(f, "langevin-double-well:beta={beta}"),
            ModelSpec::ConstantReward { base, c } => {
                let s = base.to_string();
                let sep = if s.contains(':') { ',' } else { ':' };
                write!(f, "{s}{sep}const_reward={c}")
            }
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: Vec<(String, f64)> = Vec::new();
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config("model", format!("expected key=value, got `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("model.{}", k.trim()), format!("not a number: `{v}`")))?;
            params.push((k.trim().to_string(), v));
        }
        let mut take = |key: &str, default: f64| -> f64 {
            match params.iter().position(|(k, _)| k == key) {
                Some(i) => params.remove(i).1,
                None => default,
            }
        };
        let spec = match name {
            "det-cos3" => ModelSpec::DetCos3 {
                lambda: take("lambda", 0.05),
                k: take("k", 1.0),
                beta: take("beta", 0.1),
            },
            "det-power" => ModelSpec::DetPower {
                lambda: take("lambda", 0.01),
                alpha: take("alpha", 5.0).round() as i32,
                b: take("b", 1.0),
                beta: take("beta", 0.1),
            },
            "ou-quadratic" => ModelSpec::OuQuadratic {
                lambda: take("lambda", -0.1),
                sigma: take("sigma", 1.0),
                beta: take("beta", 1.0),
            },
            "ou-periodic" => ModelSpec::OuPeriodic {
                lambda: take("lambda", -0.1),
                sigma: take("sigma", 1.0),
                beta: take("beta", 1.0),
            },
            "ou-poly" => ModelSpec::OuPoly {
                lambda: take("lambda", -0.1),
                sigma: take("sigma", 1.0),
                beta: take("beta", 1.0),
                r: [take("r0", 0.0), take("r1", 0.0), take("r2", 1.0)],
            },
            "langevin-quadratic" => ModelSpec::LangevinQuadratic {
                kappa: take("kappa", 1.0),
                beta: take("beta", 1.0),
                dim: take("dim", 1.0).round().max(1.0) as usize,
            },
            "langevin-double-well" => ModelSpec::LangevinDoubleWell {
                beta: take("beta", 1.0),
            },
            other => {
                return Err(Error::config(
                    "model",
                    format!("unknown model `{other}` (known: {})", ModelSpec::NAMES.join(", ")),
                ))
            }
        };
        let c = take("const_reward", f64::NAN);
        if let Some((k, _)) = params.first() {
            return Err(Error::config(format!("model.{k}"), format!("unknown parameter for `{name}`")));
        }
        Ok(if c.is_nan() {
            spec
        } else {
            ModelSpec::ConstantReward {
                base: Box::new(spec),
                c,
            }
        })
    }
}

/// Equi-spaced observations `X_{kη}` and rewards `R_{kη} = r(X_{kη})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    pub dim: usize,
    /// Row-major, `dim` entries per observation.
    pub states: Vec<f64>,
    pub rewards: Vec<f64>,
    pub seed: u64,
    /// Geometric kill index `K`; windows may use observations `0..=K`.
    pub kill_step: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Last observation index usable by estimators.
    pub fn last_index(&self) -> Option<usize> {
        let last = self.len().checked_sub(1)?;
        Some(self.kill_step.map_or(last, |k| k.min(last)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.rewards.len() * self.dim {
            return Err(Error::domain("states and rewards have different lengths"));
        }
        if let Some(k) = self.kill_step {
            if k >= self.len() {
                return Err(Error::domain(format!(
                    "kill step {k} beyond the last observation {}",
                    self.len().saturating_sub(1)
                )));
            }
        }
        Ok(())
    }
}

/// Independent trajectories sharing a step size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub eta: f64,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Law of the initial state of each simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    Normal(Normal1),
    /// The model's stationary law.
    Stationary,
}

impl InitialLaw {
    pub const UNIFORM_PERIOD: InitialLaw = InitialLaw::Uniform { lo: -PI, hi: PI };

    fn sample<R: Rng + ?Sized>(&self, model: &DiffusionModel, rng: &mut R) -> Result<f64> {
        Ok(match *self {
            InitialLaw::Point(x) => x,
            InitialLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            InitialLaw::Normal(n) => n.sample(rng),
            InitialLaw::Stationary => model
                .stationary
                .ok_or_else(|| Error::domain("model has no stationary law"))?
                .sample(rng),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Path = 0,
    Kill = 1,
    Init = 2,
}

fn stream_rng(seed: u64, traj: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

/// Simulates `steps` transitions of length `eta` starting from `x0`.
///
/// Uses the exact law when the model has one (`substeps` is then ignored)
/// and Euler–Maruyama with `substeps` internal steps otherwise.
pub fn simulate_trajectory(
    model: &DiffusionModel,
    x0: &[f64],
    eta: f64,
    steps: usize,
    seed: u64,
    substeps: usize,
) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, 0, Purpose::Path);
    simulate_with(model, x0, eta, steps, seed, substeps, &mut rng, None)
}

/// As [`simulate_trajectory`] but aborts with [`Error::Timeout`] once
/// `deadline` has passed.
pub(crate) fn simulate_keyed(
    model: &DiffusionModel,
    x0: &[f64],
    eta: f64,
    steps: usize,
    seed: u64,
    traj: u64,
    substeps: usize,
    deadline: Option<(Instant, u64)>,
) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, traj, Purpose::Path);
    simulate_with(model, x0, eta, steps, seed, substeps, &mut rng, deadline)
}

#[allow(clippy::too_many_arguments)]
fn simulate_with(
    model: &DiffusionModel,
    x0: &[f64],
    eta: f64,
    steps: usize,
    seed: u64,
    substeps: usize,
    rng: &mut ChaCha8Rng,
    deadline: Option<(Instant, u64)>,
) -> Result<Trajectory> {
    let d = model.dim;
    if x0.len() != d {
        return Err(Error::domain(format!("initial state has dimension {}, model {d}", x0.len())));
    }
    if steps == 0 || substeps == 0 {
        return Err(Error::domain("steps and substeps must be at least 1"));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("step size must be positive, got {eta}")));
    }
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut rewards = Vec::with_capacity(steps + 1);
    states.extend_from_slice(x0);
    rewards.push(model.reward(x0));

    let mut x = x0.to_vec();
    let mut drift = vec![0.0; d];
    let mut sqrt = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    let h = eta / substeps as f64;
    let sqrt_h = h.sqrt();
    let kernel = model.exact_kernel.filter(|_| d == 1);
    let (mean_factor, sd) = kernel
        .map(|k| ((k.lambda * eta).exp(), k.conditional_variance(eta).sqrt()))
        .unwrap_or((0.0, 0.0));

    for step in 1..=steps {
        if let Some((deadline, budget_ms)) = deadline {
            if step % 1024 == 0 && Instant::now() > deadline {
                return Err(Error::Timeout { budget_ms });
            }
        }
        if kernel.is_some() {
            let noise = if sd > 0.0 {
                sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            x[0] = mean_factor * x[0] + noise;
        } else {
            for _ in 0..substeps {
                model.drift(&x, &mut drift);
                model.diffusion_sqrt(&x, &mut sqrt);
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let dw: f64 = (0..d).map(|j| sqrt[i * d + j] * z[j]).sum();
                    x[i] += drift[i] * h + dw * sqrt_h;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        states.extend_from_slice(&x);
        rewards.push(model.reward(&x));
    }
    Ok(Trajectory {
        eta,
        dim: d,
        states,
        rewards,
        seed,
        kill_step: None,
    })
}

/// How long each trajectory of a batch runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchLength {
    /// Killed at `K ~ Geometric(1 - e^{-βη})` (failures before the first
    /// success), observed for `K + 1 + margin` points.
    Killed { beta: f64, margin: usize },
    /// Exactly `points` observations, usable in full.
    Fixed { points: usize },
}

/// Draws a geometric kill index with success probability `1 - e^{-βη}`.
pub fn sample_kill_step<R: Rng + ?Sized>(beta: f64, eta: f64, rng: &mut R) -> usize {
    let rate = beta * eta;
    // P(K ≥ k) = e^{-βηk}
    let u: f64 = 1.0 - rng.random::<f64>();
    let k = (-u.ln() / rate).floor();
    if k.is_finite() && k < usize::MAX as f64 {
        k as usize
    } else {
        usize::MAX
    }
}

/// Simulates `n_traj` independent trajectories.
#[allow(clippy::too_many_arguments)]
pub fn simulate_batch(
    model: &DiffusionModel,
    init: InitialLaw,
    eta: f64,
    n_traj: usize,
    length: BatchLength,
    seed: u64,
    substeps: usize,
    mode: ExecMode,
) -> Result<TrajectoryBatch> {
    simulate_batch_with_deadline(model, init, eta, n_traj, length, seed, substeps, mode, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_batch_with_deadline(
    model: &DiffusionModel,
    init: InitialLaw,
    eta: f64,
    n_traj: usize,
    length: BatchLength,
    seed: u64,
    substeps: usize,
    mode: ExecMode,
    deadline: Option<(Instant, u64)>,
) -> Result<TrajectoryBatch> {
    if n_traj == 0 {
        return Err(Error::domain("a batch needs at least one trajectory"));
    }
    if model.dim != 1 && !matches!(init, InitialLaw::Point(_)) {
        return Err(Error::domain("random initial laws are scalar"));
    }
    let results = map_indexed(n_traj, mode, |i| -> Result<Trajectory> {
        let i = i as u64;
        let x0 = init.sample(model, &mut stream_rng(seed, i, Purpose::Init))?;
        let (kill, steps) = match length {
            BatchLength::Killed { beta, margin } => {
                let k = sample_kill_step(beta, eta, &mut stream_rng(seed, i, Purpose::Kill));
                let steps = k
                    .checked_add(margin)
                    .filter(|&s| s <= 1 << 40)
                    .ok_or_else(|| Error::domain("kill time overflow"))?;
                (Some(k), steps)
            }
            BatchLength::Fixed { points } => {
                if points < 2 {
                    return Err(Error::domain("fixed-length trajectories need at least two points"));
                }
                (Some(points - 1), points - 1)
            }
        };
        let x0v = vec![x0; model.dim];
        let mut traj = if steps == 0 {
            Trajectory {
                eta,
                dim: model.dim,
                states: x0v.clone(),
                rewards: vec![model.reward(&x0v)],
                seed,
                kill_step: None,
            }
        } else {
            simulate_keyed(model, &x0v, eta, steps, seed, i, substeps, deadline)?
        };
        traj.kill_step = kill;
        Ok(traj)
    });
    Ok(TrajectoryBatch {
        eta,
        seed,
        trajectories: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Exponentially killed batch: `K_i ~ Geometric(1 - e^{-βη})` independent of
/// the paths, each observed for `K_i + 1 + margin` points.
#[allow(clippy::too_many_arguments)]
pub fn simulate_killed_batch(
    model: &DiffusionModel,
    init: InitialLaw,
    eta: f64,
    n_traj: usize,
    beta: f64,
    margin: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<TrajectoryBatch> {
    simulate_batch(
        model,
        init,
        eta,
        n_traj,
        BatchLength::Killed { beta, margin },
        seed,
        DEFAULT_SUBSTEPS,
        mode,
    )
}
