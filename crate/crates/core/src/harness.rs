//! Declarative convergence sweeps: error against closed-form truths over a
//! step-size, horizon or trajectory-count ladder, slope fits and CSV
//! reports.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{Family, FeatureMap};
use crate::error::{Error, Result};
use crate::estimators::{estimate, estimate_killed, EstimateOptions, ValueApproximation};
use crate::exact::{solve_exact, ExactOptions, GridSpec, DEFAULT_GRID_INTERVALS};
use crate::exec::{map_indexed, ExecMode};
use crate::io::VERSION;
use crate::process::{
    lq_coefficients, simulate_batch_with_deadline, BatchLength, DiffusionModel, InitialLaw,
    ModelSpec, Normal1, DEFAULT_SUBSTEPS,
};
use crate::scheme::{generator_coefficients, Method};

/// Number of intervals of the sup-error evaluation grid.
pub const SUP_EVAL_INTERVALS: usize = 100;
/// Test-sample size of the MSE metric.
pub const MSE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Population solve on a grid; no randomness.
    Exact,
    /// One long trajectory from the stationary law.
    Single,
    /// Geometrically killed trajectories.
    Killed,
    /// Trajectories of `points` observations each.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisKind {
    Eta,
    Horizon,
    Trajectories,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Sup,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub kind: AxisKind,
    pub values: Vec<f64>,
}

/// Experiment description, read from TOML.
///
/// ```toml
/// model = "det-cos3:lambda=0.05,k=1,beta=0.1"
/// basis = "fourier:5"
/// methods = ["bellman:1", "bellman:2", "generator:2"]
/// data = "exact"
/// metric = "sup"
/// seed = 1
///
/// [axis]
/// kind = "eta"
/// values = [1.0, 0.1, 0.01, 0.001]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: String,
    pub basis: String,
    pub methods: Vec<Method>,
    pub data: DataKind,
    pub axis: Axis,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Step size when the axis is not `eta`.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Trajectory horizon `T` for `single` data.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Trajectory count for `killed` and `fixed` data.
    #[serde(default)]
    pub trajectories: Option<usize>,
    /// Observations per trajectory for `fixed` data.
    #[serde(default)]
    pub points: Option<usize>,
    /// `stationary`, `uniform`, `uniform:lo:hi`, `point:x` or `normal:mean:var`.
    #[serde(default)]
    pub init: Option<String>,
    /// `periodic[:K]`, `uniform:lo:hi:K` or `gaussian[:K]`.
    #[serde(default)]
    pub grid: Option<String>,
    /// Sup-error evaluation interval.
    #[serde(default = "default_eval_range")]
    pub eval_range: [f64; 2],
    #[serde(default = "default_mse_samples")]
    pub mse_samples: usize,
    /// Errors below this are left out of slope fits.
    #[serde(default)]
    pub floor_exclusion: f64,
    #[serde(default)]
    pub budget_ms: Option<u64>,
    #[serde(default)]
    pub mode: ExecMode,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub ridge: f64,
}

fn default_metric() -> Metric {
    Metric::Sup
}
fn one() -> usize {
    1
}
fn default_eval_range() -> [f64; 2] {
    [-PI, PI]
}
fn default_mse_samples() -> usize {
    MSE_SAMPLES
}
fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::config(key, msg)
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.axis.values;
        if v.is_empty() {
            return Err(Error::config("axis.values", "ladder is empty"));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::config("axis.values", "ladder values must be positive"));
        }
        let up = v.windows(2).all(|w| w[1] > w[0]);
        let down = v.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::config("axis.values", "ladder must be strictly monotone"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "no methods listed"));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps", "must be at least 1"));
        }
        let axis_ok = match (self.data, self.axis.kind) {
            (_, AxisKind::Eta) => true,
            (DataKind::Single, AxisKind::Horizon) => true,
            (DataKind::Killed | DataKind::Fixed, AxisKind::Trajectories) => true,
            _ => false,
        };
        if !axis_ok {
            return Err(Error::config("axis.kind", "axis does not apply to this data kind"));
        }
        if self.axis.kind == AxisKind::Trajectories && v.iter().any(|x| x.fract() != 0.0) {
            return Err(Error::config("axis.values", "trajectory counts must be integers"));
        }
        if !(self.eval_range[1] > self.eval_range[0]) {
            return Err(Error::config("eval_range", "needs lo < hi"));
        }
        self.model_spec()?;
        self.feature_map()?;
        self.init_law()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.parse()
    }

    pub fn feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::from_str(&self.basis).map_err(|e| Error::config("basis", e.to_string()))
    }

    fn init_law(&self) -> Result<InitialLaw> {
        let default = match self.data {
            DataKind::Single => "stationary",
            _ => "uniform",
        };
        parse_init(self.init.as_deref().unwrap_or(default))
    }

    fn param(&self, key: &'static str, value: Option<f64>, axis: AxisKind, x: f64) -> Result<f64> {
        if self.axis.kind == axis {
            Ok(x)
        } else {
            value.ok_or_else(|| Error::config(key, "required for this data kind and axis"))
        }
    }
}

pub fn parse_init(s: &str) -> Result<InitialLaw> {
    let bad = || Error::config("init", format!("cannot parse `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
    Ok(match parts.as_slice() {
        ["stationary"] => InitialLaw::Stationary,
        ["uniform"] => InitialLaw::UNIFORM_PERIOD,
        ["uniform", lo, hi] => InitialLaw::Uniform {
            lo: num(lo)?,
            hi: num(hi)?,
        },
        ["point", x] => InitialLaw::Point(num(x)?),
        ["normal", m, v] => InitialLaw::Normal(Normal1 {
            mean: num(m)?,
            var: num(v)?,
        }),
        _ => return Err(bad()),
    })
}

fn parse_grid(s: Option<&str>, model: &DiffusionModel) -> Result<GridSpec> {
    let s = s.unwrap_or("periodic");
    let bad = || Error::config("grid", format!("cannot parse `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
    let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        ["periodic"] => Ok(GridSpec::periodic_default()),
        ["periodic", k] => GridSpec::uniform(-PI, PI, int(k)?),
        ["uniform", lo, hi, k] => GridSpec::uniform(num(lo)?, num(hi)?, int(k)?),
        ["gaussian", rest @ ..] if rest.len() <= 1 => {
            let law = model
                .stationary
                .ok_or_else(|| Error::config("grid", "gaussian grid needs a stationary law"))?;
            let k = rest.first().map_or(Ok(2 * DEFAULT_GRID_INTERVALS), |k| int(k))?;
            GridSpec::gaussian(law.mean, law.var, k, 8.0)
        }
        _ => Err(bad()),
    }
}

/// `max_j |V̂(x_j) − V(x_j)|` over `x_j = lo + j(hi − lo)/J`, `j = 0..=J`.
pub fn sup_error(approx: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let delta = (hi - lo) / intervals as f64;
    (0..=intervals)
        .map(|j| {
            let x = lo + j as f64 * delta;
            (approx(x) - truth(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Mean squared error over `n` draws of `sampler`, seeded by `seed`.
pub fn mse_error(
    approx: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    sampler: &Normal1,
    n: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..n)
        .map(|_| {
            let z = sampler.sample(&mut rng);
            (approx(z) - truth(z)).powi(2)
        })
        .sum();
    total / n as f64
}

/// Fitted log-log slope with the number of points that entered the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub points_used: usize,
}

/// Least-squares slope of `log(error)` against `log(axis)`, skipping errors
/// below `floor` (and non-finite or nonpositive values). `None` when fewer
/// than three points survive.
pub fn fit_slope(axis: &[f64], errors: &[f64], floor: f64) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = axis
        .iter()
        .zip(errors)
        .filter(|(a, e)| **a > 0.0 && e.is_finite() && **e > 0.0 && **e >= floor)
        .map(|(a, e)| (a.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(SlopeFit {
        slope: sxy / sxx,
        points_used: pts.len(),
    })
}

/// `(v0, v1, v2)` of the quadratic value function of an OU model with
/// polynomial reward of degree at most two.
pub fn derive_lq_truth(spec: &ModelSpec) -> Result<[f64; 3]> {
    match *spec {
        ModelSpec::OuQuadratic { lambda, sigma, beta } => lq_coefficients(lambda, sigma, beta, [0.0, 0.0, 1.0]),
        ModelSpec::OuPoly { lambda, sigma, beta, r } => lq_coefficients(lambda, sigma, beta, r),
        ModelSpec::ConstantReward { ref base, c } => match **base {
            ModelSpec::OuQuadratic { beta, .. } | ModelSpec::OuPoly { beta, .. } => {
                if beta == 0.0 {
                    Err(Error::Resonance("β = 0".into()))
                } else {
                    Ok([c / beta, 0.0, 0.0])
                }
            }
            _ => Err(Error::domain("not an OU model with polynomial reward")),
        },
        _ => Err(Error::domain("not an OU model with polynomial reward")),
    }
}

/// Largest step allowed by the generator-form stability rule
/// `ηⁿ ≤ β / (2 C ‖Aⁿ⁺¹Φ‖)`, `C = Σ|c_j| jⁿ⁺¹ / (n+1)!`, for a Fourier span.
///
/// `‖Aⁿ⁺¹Φ‖` is bounded by `gⁿ⁺¹` with `g = max_x |b(x)| K + σ(x)² K² / 2`
/// over `range`, the per-mode bound of the generator on frequencies up to
/// `K`. Only logged by the sweeps, never enforced. `None` for other bases.
pub fn generator_step_advisory(model: &DiffusionModel, fm: &FeatureMap, order: usize, range: [f64; 2]) -> Option<f64> {
    let Family::Fourier { max_freq } = fm.family() else {
        return None;
    };
    if model.dim != 1 || max_freq == 0 {
        return None;
    }
    let c = generator_coefficients(order).ok()?;
    let fact: f64 = (1..=order + 1).map(|k| k as f64).product();
    let big_c: f64 = c
        .iter()
        .enumerate()
        .map(|(j, cj)| cj.abs() * (j as f64).powi(order as i32 + 1))
        .sum::<f64>()
        / fact;
    let k = max_freq as f64;
    let (mut b, mut s) = ([0.0], [0.0]);
    let g = (0..=SUP_EVAL_INTERVALS)
        .map(|j| {
            let x = range[0] + (range[1] - range[0]) * j as f64 / SUP_EVAL_INTERVALS as f64;
            model.drift(&[x], &mut b);
            model.diffusion_sqrt(&[x], &mut s);
            b[0].abs() * k + 0.5 * s[0] * s[0] * k * k
        })
        .fold(0.0, f64::max);
    let bound = model.beta / (2.0 * big_c * g.powi(order as i32 + 1));
    Some(bound.powf(1.0 / order as f64))
}

/// Outcome of one (method, axis value, replication) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub axis: f64,
    pub replication: usize,
    /// `None` when the run failed; see `failure`.
    pub error: Option<f64>,
    pub runtime_ms: f64,
    pub cond: Option<f64>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSlope {
    pub method: Method,
    pub fit: Option<SlopeFit>,
    /// Every cell of the method failed.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellResult>,
    pub slopes: Vec<MethodSlope>,
}

impl SweepResult {
    /// Mean error per axis value over successful replications; `NaN` where
    /// every replication failed.
    pub fn mean_errors(&self, method: Method) -> Vec<f64> {
        self.spec
            .axis
            .values
            .iter()
            .map(|&a| {
                let errs: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.method == method && c.axis == a)
                    .filter_map(|c| c.error)
                    .collect();
                if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                }
            })
            .collect()
    }

    pub fn slope(&self, method: Method) -> Option<SlopeFit> {
        self.slopes.iter().find(|s| s.method == method).and_then(|s| s.fit)
    }
}

/// Mixes the experiment seed with a cell index.
pub fn cell_seed(seed: u64, cell: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng.next_u64()
}

enum CellData {
    Exact(GridSpec),
    Single(crate::process::Trajectory),
    Batch(crate::process::TrajectoryBatch),
}

struct Resolved {
    model: DiffusionModel,
    fm: FeatureMap,
    init: InitialLaw,
    max_margin: usize,
}

fn resolve(spec: &ExperimentSpec) -> Result<Resolved> {
    spec.validate()?;
    let model = spec.model_spec()?.build()?;
    if !model.has_true_value() {
        return Err(Error::config("model", "model has no closed-form value function"));
    }
    if spec.metric == Metric::Mse && model.stationary.is_none() {
        return Err(Error::config("metric", "mse needs a model with a stationary law"));
    }
    if model.dim != 1 {
        return Err(Error::config("model", "sweeps support scalar models only"));
    }
    let fm = spec.feature_map()?;
    let init = spec.init_law()?;
    let max_margin = spec.methods.iter().map(|m| m.order().max(1)).max().unwrap_or(1);
    Ok(Resolved {
        model,
        fm,
        init,
        max_margin,
    })
}

fn build_data(spec: &ExperimentSpec, r: &Resolved, x: f64, seed: u64, deadline: Option<(Instant, u64)>) -> Result<(f64, CellData)> {
    let eta = spec.param("eta", spec.eta, AxisKind::Eta, x)?;
    if !(eta > 0.0) {
        return Err(Error::config("eta", "must be positive"));
    }
    let data = match spec.data {
        DataKind::Exact => CellData::Exact(parse_grid(spec.grid.as_deref(), &r.model)?),
        DataKind::Single => {
            let horizon = spec.param("horizon", spec.horizon, AxisKind::Horizon, x)?;
            let steps = (horizon / eta).round() as usize;
            let batch = simulate_batch_with_deadline(
                &r.model,
                r.init,
                eta,
                1,
                BatchLength::Fixed { points: steps + 1 },
                seed,
                spec.substeps,
                ExecMode::Sequential,
                deadline,
            )?;
            let mut traj = batch.trajectories.into_iter().next().expect("one trajectory");
            traj.kill_step = None;
            CellData::Single(traj)
        }
        DataKind::Killed | DataKind::Fixed => {
            let n = spec.param("trajectories", spec.trajectories.map(|t| t as f64), AxisKind::Trajectories, x)?;
            let length = match spec.data {
                DataKind::Killed => BatchLength::Killed {
                    beta: r.model.beta,
                    margin: r.max_margin,
                },
                _ => BatchLength::Fixed {
                    points: spec
                        .points
                        .ok_or_else(|| Error::config("points", "required for fixed data"))?,
                },
            };
            CellData::Batch(simulate_batch_with_deadline(
                &r.model,
                r.init,
                eta,
                n as usize,
                length,
                seed,
                spec.substeps,
                ExecMode::Sequential,
                deadline,
            )?)
        }
    };
    Ok((eta, data))
}

fn run_method(spec: &ExperimentSpec, r: &Resolved, method: Method, eta: f64, data: &CellData) -> Result<ValueApproximation> {
    let scheme = method.scheme(r.model.beta, eta)?;
    match data {
        CellData::Exact(grid) => solve_exact(
            &r.model,
            &r.fm,
            &scheme,
            grid,
            &ExactOptions {
                mode: ExecMode::Sequential,
                ridge: spec.ridge,
            },
        ),
        CellData::Single(traj) => estimate(
            traj,
            &r.fm,
            &scheme,
            &EstimateOptions {
                mode: ExecMode::Sequential,
                ridge: spec.ridge,
            },
        ),
        CellData::Batch(batch) => estimate_killed(
            batch,
            &r.fm,
            &scheme,
            &EstimateOptions {
                mode: ExecMode::Sequential,
                ridge: spec.ridge,
            },
        ),
    }
}

fn score(spec: &ExperimentSpec, r: &Resolved, v: &ValueApproximation) -> f64 {
    let truth = |x: f64| r.model.true_value(&[x]).expect("checked in resolve");
    let approx = |x: f64| v.evaluate(&[x]);
    match spec.metric {
        Metric::Sup => sup_error(approx, truth, spec.eval_range[0], spec.eval_range[1], SUP_EVAL_INTERVALS),
        Metric::Mse => mse_error(
            approx,
            truth,
            &r.model.stationary.expect("checked in resolve"),
            spec.mse_samples,
            cell_seed(spec.seed, u64::MAX),
        ),
    }
}

fn failure_tag(e: &Error) -> String {
    let kind = match e {
        Error::Singular { .. } => "singular",
        Error::Divergence { .. } => "divergence",
        Error::Timeout { .. } => "timeout",
        Error::InsufficientData(_) => "insufficient-data",
        _ => "error",
    };
    format!("{kind}: {e}")
}

/// Runs every (axis value, replication) data cell and every method on it.
///
/// Cell randomness is keyed by the spec seed and the data-cell index, so
/// methods at the same cell see the same data and the result does not
/// depend on `spec.mode`. Failures are recorded in the cell.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    let r = resolve(spec)?;
    let axis = &spec.axis.values;
    log_step_advisories(spec, &r);
    let reps = if spec.data == DataKind::Exact { 1 } else { spec.replications };
    let n_cells = axis.len() * reps;
    let per_cell: Vec<Vec<CellResult>> = map_indexed(n_cells, spec.mode, |cell| {
        let (ai, rep) = (cell / reps, cell % reps);
        let x = axis[ai];
        let seed = cell_seed(spec.seed, cell as u64);
        let deadline = spec
            .budget_ms
            .map(|ms| (Instant::now() + Duration::from_millis(ms), ms));
        let started = Instant::now();
        let data = build_data(spec, &r, x, seed, deadline);
        let data_ms = started.elapsed().as_secs_f64() * 1e3;
        spec.methods
            .iter()
            .map(|&method| {
                let t0 = Instant::now();
                let out = data.as_ref().map_err(clone_err).and_then(|(eta, d)| {
                    let v = run_method(spec, &r, method, *eta, d)?;
                    if let Some((dl, budget_ms)) = deadline {
                        if Instant::now() > dl {
                            return Err(Error::Timeout { budget_ms });
                        }
                    }
                    Ok(v)
                });
                let runtime_ms = data_ms + t0.elapsed().as_secs_f64() * 1e3;
                match out {
                    Ok(v) => {
                        let mut warnings = Vec::new();
                        if v.diagnostics.ill_conditioned() {
                            warnings.push("ill-conditioned".to_string());
                        }
                        if v.sample_count < r.fm.dim() {
                            warnings.push("few-samples".to_string());
                        }
                        CellResult {
                            method,
                            axis: x,
                            replication: rep,
                            error: Some(score(spec, &r, &v)),
                            runtime_ms,
                            cond: Some(v.diagnostics.condition_estimate),
                            warnings,
                            failure: None,
                        }
                    }
                    Err(e) => {
                        log::warn!("{method} at {x} (replication {rep}) failed: {e}");
                        CellResult {
                            method,
                            axis: x,
                            replication: rep,
                            error: None,
                            runtime_ms,
                            cond: None,
                            warnings: Vec::new(),
                            failure: Some(failure_tag(&e)),
                        }
                    }
                }
            })
            .collect()
    });
    let mut cells: Vec<CellResult> = Vec::with_capacity(n_cells * spec.methods.len());
    for rep_cells in per_cell {
        cells.extend(rep_cells);
    }
    if spec.data == DataKind::Exact && spec.replications > 1 {
        // no randomness: every replication is the same cell
        let base = std::mem::take(&mut cells);
        for c in base {
            for rep in 0..spec.replications {
                cells.push(CellResult {
                    replication: rep,
                    ..c.clone()
                });
            }
        }
    }
    cells.sort_by(|a, b| {
        let ma = spec.methods.iter().position(|m| *m == a.method);
        let mb = spec.methods.iter().position(|m| *m == b.method);
        let ia = axis.iter().position(|x| *x == a.axis);
        let ib = axis.iter().position(|x| *x == b.axis);
        (ma, ia, a.replication).cmp(&(mb, ib, b.replication))
    });
    let mut result = SweepResult {
        spec: spec.clone(),
        cells,
        slopes: Vec::new(),
    };
    result.slopes = spec
        .methods
        .iter()
        .map(|&m| {
            let failed = result.cells.iter().filter(|c| c.method == m).all(|c| c.error.is_none());
            if failed {
                log::warn!("every cell of {m} failed");
            }
            MethodSlope {
                method: m,
                fit: fit_slope(axis, &result.mean_errors(m), spec.floor_exclusion),
                failed,
            }
        })
        .collect();
    Ok(result)
}

fn log_step_advisories(spec: &ExperimentSpec, r: &Resolved) {
    for &m in &spec.methods {
        let Method::Generator(n) = m else { continue };
        let Some(bound) = generator_step_advisory(&r.model, &r.fm, n, spec.eval_range) else {
            continue;
        };
        let etas: Vec<f64> = match spec.axis.kind {
            AxisKind::Eta => spec.axis.values.clone(),
            _ => spec.eta.into_iter().collect(),
        };
        let above = etas.iter().filter(|&&e| e > bound).count();
        log::info!("{m}: advisory step bound {bound:.3e}; {above} of {} step sizes exceed it", etas.len());
    }
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Domain(s) => Error::Domain(s.clone()),
        Error::Singular { pivot, sample_count } => Error::Singular {
            pivot: *pivot,
            sample_count: *sample_count,
        },
        Error::Divergence { step } => Error::Divergence { step: *step },
        Error::SingularValueFunction(s) => Error::SingularValueFunction(s.clone()),
        Error::Resonance(s) => Error::Resonance(s.clone()),
        Error::InsufficientData(s) => Error::InsufficientData(s.clone()),
        Error::Timeout { budget_ms } => Error::Timeout { budget_ms: *budget_ms },
        Error::Config { key, message } => Error::Config {
            key: key.clone(),
            message: message.clone(),
        },
        Error::Parse(s) => Error::Parse(s.clone()),
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), e.to_string())),
    }
}

/// Header comment lines shared by the sweep outputs.
pub fn report_header(spec: &ExperimentSpec) -> String {
    let mut s = format!(
        "# ctpe {VERSION} seed={} aggregation=mean-over-replications\n",
        spec.seed
    );
    for line in spec.to_toml().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NaN".to_string(), |v| format!("{v:.10e}"))
}

/// `method,axis,replication,error,runtime_ms,cond,warn`.
pub fn write_sweep_csv<W: Write>(w: &mut W, result: &SweepResult) -> Result<()> {
    w.write_all(report_header(&result.spec).as_bytes())?;
    writeln!(w, "method,axis,replication,error,runtime_ms,cond,warn")?;
    for c in &result.cells {
        let warn = match &c.failure {
            Some(f) => f.split(':').next().unwrap_or("error").to_string(),
            None => c.warnings.join(";"),
        };
        writeln!(
            w,
            "{},{},{},{},{:.3},{},{}",
            c.method,
            c.axis,
            c.replication,
            fmt_opt(c.error),
            c.runtime_ms,
            fmt_opt(c.cond),
            warn
        )?;
    }
    Ok(())
}

/// `method,slope,points_used`; `NA` marks an unavailable slope.
pub fn write_slopes_csv<W: Write>(w: &mut W, header: &str, slopes: &[MethodSlope]) -> Result<()> {
    w.write_all(header.as_bytes())?;
    writeln!(w, "method,slope,points_used")?;
    for s in slopes {
        match s.fit {
            Some(f) => writeln!(w, "{},{:.6},{}", s.method, f.slope, f.points_used)?,
            None => writeln!(w, "{},NA,0", s.method)?,
        }
    }
    Ok(())
}

/// Recomputes slopes from a sweep CSV, averaging replications.
pub fn slopes_from_csv<R: BufRead>(r: R, floor: f64) -> Result<Vec<MethodSlope>> {
    let mut rows: Vec<(Method, f64, Option<f64>)> = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if !line.starts_with("method,axis,replication,error") {
                return Err(Error::Parse("not a sweep CSV".into()));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(Error::Parse(format!("line {}: too few fields", i + 1)));
        }
        let method: Method = f[0].parse()?;
        let axis: f64 = f[1]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad axis", i + 1)))?;
        let err: f64 = f[3]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad error", i + 1)))?;
        rows.push((method, axis, err.is_finite().then_some(err)));
    }
    if !seen_header {
        return Err(Error::Parse("not a sweep CSV".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    for (m, ..) in &rows {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    Ok(methods
        .into_iter()
        .map(|m| {
            let mut axes: Vec<f64> = Vec::new();
            for (mm, a, _) in &rows {
                if *mm == m && !axes.contains(a) {
                    axes.push(*a);
                }
            }
            let means: Vec<f64> = axes
                .iter()
                .map(|a| {
                    let e: Vec<f64> = rows
                        .iter()
                        .filter(|(mm, aa, _)| *mm == m && aa == a)
                        .filter_map(|r| r.2)
                        .collect();
                    if e.is_empty() {
                        f64::NAN
                    } else {
                        e.iter().sum::<f64>() / e.len() as f64
                    }
                })
                .collect();
            MethodSlope {
                method: m,
                fit: fit_slope(&axes, &means, floor),
                failed: means.iter().all(|e| e.is_nan()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_advisory_first_order() {
        let m: ModelSpec = "det-cos3:lambda=0.05,k=1,beta=0.1".parse().unwrap();
        let m = m.build().unwrap();
        let fm: FeatureMap = "fourier:5".parse().unwrap();
        // C = 1/2, g = 0.05π·5
        let g = 0.05 * PI * 5.0;
        let want = 0.1 / (2.0 * 0.5 * g * g);
        let got = generator_step_advisory(&m, &fm, 1, [-PI, PI]).unwrap();
        assert!((got - want).abs() < 1e-12 * want);
        let leg: FeatureMap = "legendre:3".parse().unwrap();
        assert!(generator_step_advisory(&m, &leg, 1, [-PI, PI]).is_none());
    }

    const EXACT: &str = r#"
model = "det-cos3:lambda=0.05,k=1,beta=0.1"
basis = "fourier:5"
methods = ["bellman:1", "bellman:2"]
data = "exact"
replications = 2

[axis]
kind = "eta"
values = [1.0, 0.1, 0.01]
"#;

    #[test]
    fn sup_error_of_offset() {
        assert_eq!(sup_error(|x| x.sin(), |x| x.sin(), -PI, PI, 100), 0.0);
        let e = sup_error(|x| x.sin() + 0.25, |x| x.sin(), -PI, PI, 100);
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn slopes_of_powers() {
        let axis = [1.0, 0.5, 0.25, 0.125];
        let e1: Vec<f64> = axis.to_vec();
        let e2: Vec<f64> = axis.iter().map(|a| 3.0 * a * a).collect();
        assert!((fit_slope(&axis, &e1, 0.0).unwrap().slope - 1.0).abs() < 1e-12);
        assert!((fit_slope(&axis, &e2, 0.0).unwrap().slope - 2.0).abs() < 1e-12);
        assert_eq!(fit_slope(&axis, &e2, 0.1).unwrap().points_used, 3);
        assert!(fit_slope(&axis, &e2, 0.5).is_none());
        assert!(fit_slope(&axis[..2], &e1[..2], 0.0).is_none());
    }

    #[test]
    fn spec_parses_and_validates() {
        let s = ExperimentSpec::from_toml(EXACT).unwrap();
        assert_eq!(s.metric, Metric::Sup);
        assert_eq!(s.replications, 2);
        let back = ExperimentSpec::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);

        let bad = EXACT.replace("det-cos3", "no-such-model");
        match ExperimentSpec::from_toml(&bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model"),
            other => panic!("{other:?}"),
        }
        let bad = EXACT.replace("[1.0, 0.1, 0.01]", "[1.0, 0.01, 0.1]");
        assert!(matches!(ExperimentSpec::from_toml(&bad), Err(Error::Config { .. })));
        let bad = EXACT.replace("replications = 2", "replications = 0");
        assert!(matches!(ExperimentSpec::from_toml(&bad), Err(Error::Config { .. })));
        let bad = format!("{EXACT}\nbogus = 1\n");
        assert!(matches!(ExperimentSpec::from_toml(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn exact_sweep_is_replication_invariant() {
        let s = ExperimentSpec::from_toml(EXACT).unwrap();
        let r = run_sweep(&s).unwrap();
        assert_eq!(r.cells.len(), 2 * 3 * 2);
        for pair in r.cells.chunks(2) {
            assert_eq!(pair[0].error, pair[1].error);
            assert!(pair[0].error.unwrap() >= 0.0);
        }
    }

    #[test]
    fn csv_round_trip_through_slopes() {
        let s = ExperimentSpec::from_toml(&EXACT.replace("[1.0, 0.1, 0.01]", "[0.4, 0.2, 0.1, 0.05]")).unwrap();
        let r = run_sweep(&s).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# ctpe "));
        let slopes = slopes_from_csv(text.as_bytes(), 0.0).unwrap();
        for s in &slopes {
            let direct = r.slope(s.method).unwrap().slope;
            assert!((s.fit.unwrap().slope - direct).abs() < 1e-6);
        }
    }

    #[test]
    fn lq_truth_constant_reward() {
        let spec: ModelSpec = "ou-quadratic:const_reward=0.7".parse().unwrap();
        let v = derive_lq_truth(&spec).unwrap();
        assert_eq!(v, [0.7, 0.0, 0.0]);
    }
}
