//! Population-level projected fixed points with exact conditional
//! expectations.
//!
//! The trajectory sums of [`crate::estimators`] are replaced by sums over a
//! deterministic grid `x_k`, and every future observation by its
//! conditional expectation given `X_0 = x_k`, computed with a 64-node
//! Gauss–Hermite rule over the Gaussian transition law (a point evaluation
//! for deterministic flows). The result is free of statistical error, so
//! its distance to the true value function isolates the discretization and
//! projection errors.

use std::f64::consts::PI;

use crate::basis::FeatureMap;
use crate::error::{Error, Result};
use crate::estimators::{NormalEquations, RowForm, ValueApproximation};
use crate::exec::{reduce_indexed, ExecMode};
use crate::process::{DiffusionModel, ExactKernel};
use crate::quadrature::GaussHermite;
use crate::scheme::{BellmanScheme, GeneratorScheme, Method, Scheme};

/// Default number of solve-grid intervals on `[-π, π]`.
pub const DEFAULT_GRID_INTERVALS: usize = 400;

/// Solve grid with optional quadrature weights (unit weights otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn new(points: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("grid has no points"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("grid points must be strictly increasing"));
        }
        if let Some(w) = &weights {
            if w.len() != points.len() {
                return Err(Error::domain("grid weights and points differ in length"));
            }
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::domain("grid weights must be nonnegative"));
            }
        }
        Ok(GridSpec { points, weights })
    }

    /// `lo + k (hi - lo)/intervals` for `k = 0..=intervals`.
    pub fn uniform(lo: f64, hi: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(hi > lo) {
            return Err(Error::domain("uniform grid needs hi > lo and at least one interval"));
        }
        let delta = (hi - lo) / intervals as f64;
        GridSpec::new((0..=intervals).map(|k| lo + k as f64 * delta).collect(), None)
    }

    /// The default `-π + kδ`, `δ = 2π/400` grid.
    pub fn periodic_default() -> Self {
        GridSpec::uniform(-PI, PI, DEFAULT_GRID_INTERVALS).expect("static grid")
    }

    /// Trapezoid weights of `N(mean, var)` on `mean ± half_width·sd`.
    pub fn gaussian(mean: f64, var: f64, intervals: usize, half_width: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::domain("Gaussian grid needs positive variance"));
        }
        let sd = var.sqrt();
        let g = GridSpec::uniform(mean - half_width * sd, mean + half_width * sd, intervals)?;
        let delta = 2.0 * half_width * sd / intervals as f64;
        let norm = (2.0 * PI * var).sqrt().recip();
        let weights = g
            .points
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let end = if k == 0 || k == intervals { 0.5 } else { 1.0 };
                end * delta * norm * (-(x - mean).powi(2) / (2.0 * var)).exp()
            })
            .collect();
        GridSpec::new(g.points, Some(weights))
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    pub mode: ExecMode,
    pub ridge: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            mode: ExecMode::Sequential,
            ridge: 0.0,
        }
    }
}

fn kernel_of(model: &DiffusionModel) -> Result<ExactKernel> {
    if model.dim != 1 {
        return Err(Error::domain("exact solvers support scalar states only"));
    }
    model
        .exact_kernel
        .ok_or_else(|| Error::domain("exact solver needs a model with an exact transition law"))
}

/// `E[g(X_t) | X_0 = x]`.
fn conditional_expectation(kernel: &ExactKernel, x: f64, t: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    if t == 0.0 {
        return g(x);
    }
    GaussHermite::default_rule().expect(kernel.conditional_mean(x, t), kernel.conditional_variance(t), &mut g)
}

/// `E[ψ(X_t) | X_0 = x]` into `out`.
fn conditional_features(kernel: &ExactKernel, fm: &FeatureMap, x: f64, t: f64, out: &mut [f64]) {
    if t == 0.0 {
        fm.eval_into(&[x], out);
        return;
    }
    let var = kernel.conditional_variance(t);
    let mean = kernel.conditional_mean(x, t);
    if var == 0.0 {
        fm.eval_into(&[mean], out);
        return;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut tmp = vec![0.0; out.len()];
    for (y, w) in GaussHermite::default_rule().gaussian_points(mean, var) {
        fm.eval_into(&[y], &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += w * t;
        }
    }
}

/// Assembles and solves the grid normal equations for either form.
pub fn solve_exact(
    model: &DiffusionModel,
    fm: &FeatureMap,
    scheme: &Scheme,
    grid: &GridSpec,
    opts: &ExactOptions,
) -> Result<ValueApproximation> {
    let kernel = kernel_of(model)?;
    let form = RowForm::new(scheme);
    let eta = form.eta();
    let margin = form.margin();
    let m = fm.dim();
    let points = grid.points();
    let eqs = reduce_indexed(
        points.len(),
        opts.mode,
        || {
            (
                NormalEquations::new(m),
                vec![0.0; (margin + 1) * m],
                vec![0.0; margin + 1],
                vec![0.0; m],
            )
        },
        |(acc, feats, rewards, v), k| {
            let x = points[k];
            for j in 0..=margin {
                let t = j as f64 * eta;
                conditional_features(&kernel, fm, x, t, &mut feats[j * m..(j + 1) * m]);
                rewards[j] = conditional_expectation(&kernel, x, t, |y| model.reward(&[y]));
            }
            let rhs = form.row(0, |j| &feats[j * m..(j + 1) * m], |j| rewards[j], v);
            acc.add(grid.weight(k), &feats[..m], v, rhs);
            acc.count += 1;
        },
        |(acc, ..), (other, ..)| acc.merge(other),
    )
    .0;
    eqs.solve(fm, opts.ridge)
}

pub fn solve_bellman_exact(
    model: &DiffusionModel,
    fm: &FeatureMap,
    scheme: &BellmanScheme,
    grid: &GridSpec,
) -> Result<ValueApproximation> {
    solve_exact(model, fm, &Scheme::Bellman(scheme.clone()), grid, &ExactOptions::default())
}

pub fn solve_generator_exact(
    model: &DiffusionModel,
    fm: &FeatureMap,
    scheme: &GeneratorScheme,
    grid: &GridSpec,
) -> Result<ValueApproximation> {
    solve_exact(model, fm, &Scheme::Generator(scheme.clone()), grid, &ExactOptions::default())
}

/// Exact solve for a [`Method`] at step `eta`, discount from the model.
pub fn solve_method(
    model: &DiffusionModel,
    fm: &FeatureMap,
    method: Method,
    eta: f64,
    grid: &GridSpec,
    opts: &ExactOptions,
) -> Result<ValueApproximation> {
    solve_exact(model, fm, &method.scheme(model.beta, eta)?, grid, opts)
}

/// `T⁽ⁿ⁾f` at `points` for a function `f` given in closed form.
pub fn apply_bellman_operator_fn(
    scheme: &BellmanScheme,
    model: &DiffusionModel,
    points: &[f64],
    f: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let kernel = kernel_of(model)?;
    let weights = scheme.reward_weights();
    let lookahead = scheme.lookahead_steps as f64 * scheme.eta;
    Ok(points
        .iter()
        .map(|&x| {
            let reward: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * conditional_expectation(&kernel, x, i as f64 * scheme.eta, |y| model.reward(&[y]))
                })
                .sum();
            reward + scheme.lookahead_discount * conditional_expectation(&kernel, x, lookahead, &f)
        })
        .collect())
}

/// One application of `T⁽ⁿ⁾` to a function known on the grid. Off-grid
/// values are linearly interpolated and held constant beyond the ends, a
/// non-expansive extension, so the sup-norm contraction carries over.
pub fn apply_bellman_operator(
    scheme: &BellmanScheme,
    model: &DiffusionModel,
    grid: &GridSpec,
    values: &[f64],
) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::domain("grid function has the wrong length"));
    }
    let pts = grid.points();
    apply_bellman_operator_fn(scheme, model, pts, |y| interpolate(pts, values, y))
}

/// Piecewise-linear interpolation with constant extension.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&p| p <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}
