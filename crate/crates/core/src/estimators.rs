//! LSTD estimators of the projected high-order fixed points from
//! discretely observed trajectories.
//!
//! Each usable window starting at index `k` contributes one rank-one term
//! to an `m×m` system `A θ = b`:
//!
//! ```text
//! Bellman:    A += ψ_k (ψ_k - γ ψ_{k+L})ᵀ,           b += η Σᵢ κᵢ R_{k+i} ψ_k
//! generator:  A += ψ_k (β ψ_k - η⁻¹ Σⱼ cⱼ ψ_{k+j})ᵀ,  b += R_k ψ_k
//! ```
//!
//! with `γ = e^{-β(n-1)η}` and `L = n - 1` (one step for first-order
//! schemes). A trajectory of `N` observations contributes windows
//! `k = 0..N-n`; a killed trajectory with kill index `K` contributes
//! `k = 0..=K-n`. Windows overlap with stride one.

use crate::basis::FeatureMap;
use crate::error::{Error, Result};
use crate::exec::{reduce_indexed, ExecMode};
use crate::linalg::{self, Matrix, SolveReport};
use crate::process::{Trajectory, TrajectoryBatch};
use crate::scheme::{BellmanScheme, GeneratorScheme, Scheme};

/// `θ` over a feature map, with solve diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueApproximation {
    pub theta: Vec<f64>,
    pub feature_map: FeatureMap,
    pub diagnostics: SolveReport,
    /// Number of windows (or grid points) summed into the system.
    pub sample_count: usize,
}

impl ValueApproximation {
    /// `⟨θ, ψ(x)⟩`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.feature_map.evaluate(&self.theta, x)
    }
}

pub fn evaluate(approx: &ValueApproximation, x: &[f64]) -> f64 {
    approx.evaluate(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub mode: ExecMode,
    /// Tikhonov term added to `A`; zero leaves the fixed point unbiased.
    pub ridge: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            mode: ExecMode::Sequential,
            ridge: 0.0,
        }
    }
}

/// Partial normal equations.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub count: usize,
}

impl NormalEquations {
    pub fn new(m: usize) -> Self {
        NormalEquations {
            a: Matrix::zeros(m, m),
            b: vec![0.0; m],
            count: 0,
        }
    }

    pub fn merge(&mut self, other: NormalEquations) {
        self.a.add_assign(&other.a);
        for (x, y) in self.b.iter_mut().zip(other.b) {
            *x += y;
        }
        self.count += other.count;
    }

    /// `A += scale · u vᵀ`, `b += rhs · u`.
    pub fn add(&mut self, scale: f64, u: &[f64], v: &[f64], rhs: f64) {
        self.a.add_outer(scale, u, v);
        for (bi, ui) in self.b.iter_mut().zip(u) {
            *bi += rhs * scale * ui;
        }
    }

    pub fn solve(self, fm: &FeatureMap, ridge: f64) -> Result<ValueApproximation> {
        let count = self.count;
        if count < fm.dim() {
            log::warn!("only {count} windows for {} features", fm.dim());
        }
        let diagnostics = linalg::solve(&self.a, &self.b, ridge).map_err(|e| e.with_sample_count(count))?;
        Ok(ValueApproximation {
            theta: diagnostics.solution.clone(),
            feature_map: *fm,
            diagnostics,
            sample_count: count,
        })
    }
}

/// Per-window row builder shared by both forms.
pub(crate) enum RowForm<'a> {
    Bellman { scheme: &'a BellmanScheme, weights: Vec<f64> },
    Generator { scheme: &'a GeneratorScheme },
}

impl<'a> RowForm<'a> {
    pub fn new(scheme: &'a Scheme) -> Self {
        match scheme {
            Scheme::Bellman(s) => RowForm::Bellman {
                scheme: s,
                weights: s.reward_weights(),
            },
            Scheme::Generator(s) => RowForm::Generator { scheme: s },
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            RowForm::Bellman { scheme, .. } => scheme.eta,
            RowForm::Generator { scheme } => scheme.eta,
        }
    }

    /// Observations needed after the window start.
    pub fn margin(&self) -> usize {
        match self {
            RowForm::Bellman { scheme, .. } => scheme.window_margin(),
            RowForm::Generator { scheme } => scheme.order,
        }
    }

    /// Writes the test-function row `v` for the window at `k` and returns
    /// its reward coefficient. `feat(j)` is `ψ` at observation `j` and
    /// `reward(j)` the reward there.
    pub fn row<'f>(
        &self,
        k: usize,
        feat: impl Fn(usize) -> &'f [f64],
        reward: impl Fn(usize) -> f64,
        v: &mut [f64],
    ) -> f64 {
        let psi = feat(k);
        match self {
            RowForm::Bellman { scheme, weights } => {
                let ahead = feat(k + scheme.lookahead_steps);
                let g = scheme.lookahead_discount;
                for ((vi, p), q) in v.iter_mut().zip(psi).zip(ahead) {
                    *vi = p - g * q;
                }
                weights.iter().enumerate().map(|(i, w)| w * reward(k + i)).sum()
            }
            RowForm::Generator { scheme } => {
                let inv_eta = scheme.eta.recip();
                for (vi, p) in v.iter_mut().zip(psi) {
                    *vi = scheme.beta * p;
                }
                for (j, cj) in scheme.c.iter().enumerate() {
                    let s = cj * inv_eta;
                    for (vi, q) in v.iter_mut().zip(feat(k + j)) {
                        *vi -= s * q;
                    }
                }
                reward(k)
            }
        }
    }
}

/// Features of observations `0..n` of a trajectory, row-major.
fn feature_table(traj: &Trajectory, fm: &FeatureMap, n: usize) -> Vec<f64> {
    let m = fm.dim();
    let mut out = vec![0.0; n * m];
    for (k, row) in out.chunks_mut(m).enumerate() {
        fm.eval_into(traj.state(k), row);
    }
    out
}

fn check_eta(traj_eta: f64, scheme_eta: f64) -> Result<()> {
    if (traj_eta - scheme_eta).abs() > 1e-9 * scheme_eta {
        return Err(Error::domain(format!(
            "trajectory step {traj_eta} differs from scheme step {scheme_eta}"
        )));
    }
    Ok(())
}

/// Sums windows `0..windows` of one trajectory.
fn accumulate_trajectory(
    traj: &Trajectory,
    fm: &FeatureMap,
    form: &RowForm<'_>,
    usable: usize,
    mode: ExecMode,
) -> NormalEquations {
    let m = fm.dim();
    let margin = form.margin();
    let windows = usable.saturating_sub(margin);
    if windows == 0 {
        return NormalEquations::new(m);
    }
    let table = feature_table(traj, fm, usable);
    let feat = |j: usize| &table[j * m..(j + 1) * m];
    let reward = |j: usize| traj.rewards[j];
    reduce_indexed(
        windows,
        mode,
        || (NormalEquations::new(m), vec![0.0; m]),
        |(acc, v), k| {
            let rhs = form.row(k, feat, reward, v);
            acc.add(1.0, feat(k), v, rhs);
            acc.count += 1;
        },
        |(acc, _), (other, _)| acc.merge(other),
    )
    .0
}

/// Single-trajectory estimator for either form.
pub fn estimate(
    traj: &Trajectory,
    fm: &FeatureMap,
    scheme: &Scheme,
    opts: &EstimateOptions,
) -> Result<ValueApproximation> {
    traj.validate()?;
    let form = RowForm::new(scheme);
    check_eta(traj.eta, form.eta())?;
    let n = traj.len();
    if n < form.margin() + 1 {
        return Err(Error::InsufficientData(format!(
            "trajectory of {n} observations is shorter than the scheme lookahead {} + 1",
            form.margin()
        )));
    }
    accumulate_trajectory(traj, fm, &form, n, opts.mode).solve(fm, opts.ridge)
}

/// Killed multi-trajectory estimator for either form. Trajectory `i`
/// contributes windows `0..=K_i - margin`; trajectories without a kill
/// index contribute all their windows.
pub fn estimate_killed(
    batch: &TrajectoryBatch,
    fm: &FeatureMap,
    scheme: &Scheme,
    opts: &EstimateOptions,
) -> Result<ValueApproximation> {
    let form = RowForm::new(scheme);
    check_eta(batch.eta, form.eta())?;
    let m = fm.dim();
    for t in &batch.trajectories {
        t.validate()?;
        check_eta(t.eta, form.eta())?;
    }
    let trajs = &batch.trajectories;
    let total = reduce_indexed(
        trajs.len(),
        opts.mode,
        || NormalEquations::new(m),
        |acc, i| {
            let t = &trajs[i];
            if let Some(last) = t.last_index() {
                acc.merge(accumulate_trajectory(t, fm, &form, last + 1, ExecMode::Sequential));
            }
        },
        |acc, other| acc.merge(other),
    );
    if total.count == 0 {
        return Err(Error::InsufficientData(format!(
            "no trajectory reaches the scheme lookahead {}",
            form.margin()
        )));
    }
    total.solve(fm, opts.ridge)
}

pub fn estimate_bellman(traj: &Trajectory, fm: &FeatureMap, scheme: &BellmanScheme) -> Result<ValueApproximation> {
    estimate(traj, fm, &Scheme::Bellman(scheme.clone()), &EstimateOptions::default())
}

pub fn estimate_generator(
    traj: &Trajectory,
    fm: &FeatureMap,
    scheme: &GeneratorScheme,
) -> Result<ValueApproximation> {
    estimate(traj, fm, &Scheme::Generator(scheme.clone()), &EstimateOptions::default())
}

pub fn estimate_bellman_killed(
    batch: &TrajectoryBatch,
    fm: &FeatureMap,
    scheme: &BellmanScheme,
) -> Result<ValueApproximation> {
    estimate_killed(batch, fm, &Scheme::Bellman(scheme.clone()), &EstimateOptions::default())
}

pub fn estimate_generator_killed(
    batch: &TrajectoryBatch,
    fm: &FeatureMap,
    scheme: &GeneratorScheme,
) -> Result<ValueApproximation> {
    estimate_killed(batch, fm, &Scheme::Generator(scheme.clone()), &EstimateOptions::default())
}

/// The first-order generator equation rewritten as a discounted Bellman
/// equation: reward weight `η/(1 + βη)` and discount `1/(1 + βη)`.
pub fn first_order_generator_as_bellman(beta: f64, eta: f64) -> Result<BellmanScheme> {
    let d = 1.0 / (1.0 + beta * eta);
    BellmanScheme::custom(beta, eta, vec![d], 1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_fourier, make_quadratic};
    use crate::process::{make_ou, simulate_trajectory, InitialLaw, OuReward};

    fn ou_traj(steps: usize, seed: u64) -> Trajectory {
        let m = make_ou(-0.1, 1.0, OuReward::PeriodicExp, 1.0).unwrap();
        simulate_trajectory(&m, &[0.5], 0.1, steps, seed, 1).unwrap()
    }

    #[test]
    fn window_counts() {
        let t = ou_traj(200, 1);
        let fm = make_fourier(2);
        for n in 1..=3 {
            let b = BellmanScheme::new(n, 1.0, 0.1).unwrap();
            assert_eq!(estimate_bellman(&t, &fm, &b).unwrap().sample_count, t.len() - n);
            let g = GeneratorScheme::new(n, 1.0, 0.1).unwrap();
            assert_eq!(estimate_generator(&t, &fm, &g).unwrap().sample_count, t.len() - n);
        }
    }

    #[test]
    fn eta_mismatch_and_short_data() {
        let t = ou_traj(20, 2);
        let fm = make_quadratic();
        let b = BellmanScheme::new(2, 1.0, 0.2).unwrap();
        assert!(matches!(estimate_bellman(&t, &fm, &b), Err(Error::Domain(_))));
        let short = ou_traj(2, 2);
        let g = GeneratorScheme::new(3, 1.0, 0.1).unwrap();
        assert!(matches!(estimate_generator(&short, &fm, &g), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn killed_needs_some_window() {
        let model = make_ou(-0.1, 1.0, OuReward::Quadratic, 1.0).unwrap();
        let batch = crate::process::simulate_killed_batch(
            &model,
            InitialLaw::Stationary,
            0.1,
            5,
            1e9,
            3,
            1,
            ExecMode::Sequential,
        )
        .unwrap();
        let g = GeneratorScheme::new(2, 1.0, 0.1).unwrap();
        assert!(matches!(
            estimate_generator_killed(&batch, &make_quadratic(), &g),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn evaluate_inner_product() {
        let fm = make_quadratic();
        let approx = ValueApproximation {
            theta: vec![1.0, 0.0, 1.0],
            feature_map: fm,
            diagnostics: linalg::solve(&Matrix::identity(3), &[1.0, 0.0, 1.0], 0.0).unwrap(),
            sample_count: 3,
        };
        assert_eq!(evaluate(&approx, &[2.0]), 5.0);
        let zero = ValueApproximation {
            theta: vec![0.0; 3],
            ..approx
        };
        assert_eq!(zero.evaluate(&[2.0]), 0.0);
    }

    #[test]
    fn parallel_matches_sequential_closely() {
        let t = ou_traj(50_000, 3);
        let fm = make_fourier(3);
        let s = Scheme::Bellman(BellmanScheme::new(2, 1.0, 0.1).unwrap());
        let seq = estimate(&t, &fm, &s, &EstimateOptions::default()).unwrap();
        let par = estimate(
            &t,
            &fm,
            &s,
            &EstimateOptions {
                mode: ExecMode::Parallel,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in seq.theta.iter().zip(&par.theta) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
