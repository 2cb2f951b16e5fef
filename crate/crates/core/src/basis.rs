//! Linear feature maps `ψ: state → ℝᵐ` for one-dimensional states.
//!
//! Orderings are fixed so coefficient vectors can be exchanged between runs:
//!
//! * `fourier:K`: `(1, cos x, sin x, …, cos Kx, sin Kx) / √(2π)`, `m = 2K + 1`
//! * `legendre:D:a:b`: `P₀(t), …, P_D(t)` with `t = (2x - a - b)/(b - a)`
//! * `monomial:D`: `1, x, …, x^D`
//! * `quadratic`: `1, x, x²`
//!
//! Multi-dimensional states are accepted and only their first coordinate
//! is read.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Fourier { max_freq: usize },
    Legendre { degree: usize, lo: f64, hi: f64 },
    Monomial { degree: usize },
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    family: Family,
}

pub fn make_fourier(max_freq: usize) -> FeatureMap {
    FeatureMap {
        family: Family::Fourier { max_freq },
    }
}

pub fn make_legendre(degree: usize, lo: f64, hi: f64) -> Result<FeatureMap> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::domain(format!("degenerate Legendre interval [{lo}, {hi}]")));
    }
    Ok(FeatureMap {
        family: Family::Legendre { degree, lo, hi },
    })
}

pub fn make_monomial(degree: usize) -> FeatureMap {
    FeatureMap {
        family: Family::Monomial { degree },
    }
}

pub fn make_quadratic() -> FeatureMap {
    FeatureMap {
        family: Family::Quadratic,
    }
}

impl FeatureMap {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        match self.family {
            Family::Fourier { max_freq } => 2 * max_freq + 1,
            Family::Legendre { degree, .. } | Family::Monomial { degree } => degree + 1,
            Family::Quadratic => 3,
        }
    }

    /// Writes `ψ(x)` into `out` (length [`FeatureMap::dim`]).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let x = x[0];
        match self.family {
            Family::Fourier { max_freq } => {
                let scale = (2.0 * PI).sqrt().recip();
                out[0] = scale;
                let (s1, c1) = x.sin_cos();
                let (mut s, mut c) = (s1, c1);
                for k in 1..=max_freq {
                    out[2 * k - 1] = scale * c;
                    out[2 * k] = scale * s;
                    let next_c = c * c1 - s * s1;
                    s = s * c1 + c * s1;
                    c = next_c;
                }
            }
            Family::Legendre { degree, lo, hi } => {
                let t = (2.0 * x - lo - hi) / (hi - lo);
                out[0] = 1.0;
                if degree >= 1 {
                    out[1] = t;
                }
                for n in 1..degree {
                    let nf = n as f64;
                    out[n + 1] = ((2.0 * nf + 1.0) * t * out[n] - nf * out[n - 1]) / (nf + 1.0);
                }
            }
            Family::Monomial { degree } => powers_into(x, degree, out),
            Family::Quadratic => powers_into(x, 2, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// `dψ/dx` at `x`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut out = vec![0.0; m];
        let x0 = x[0];
        match self.family {
            Family::Fourier { max_freq } => {
                let scale = (2.0 * PI).sqrt().recip();
                for k in 1..=max_freq {
                    let kf = k as f64;
                    let (s, c) = (kf * x0).sin_cos();
                    out[2 * k - 1] = -scale * kf * s;
                    out[2 * k] = scale * kf * c;
                }
            }
            Family::Legendre { degree, lo, hi } => {
                let p = self.eval(x);
                let dt = 2.0 / (hi - lo);
                // P'_{n+1} = P'_{n-1} + (2n + 1) P_n
                let mut dp = vec![0.0; degree + 1];
                for n in 0..degree {
                    let prev = if n >= 1 { dp[n - 1] } else { 0.0 };
                    dp[n + 1] = prev + (2 * n + 1) as f64 * p[n];
                }
                for (o, d) in out.iter_mut().zip(dp) {
                    *o = d * dt;
                }
            }
            Family::Monomial { .. } | Family::Quadratic => {
                let mut pow = 1.0;
                for (k, o) in out.iter_mut().enumerate().skip(1) {
                    *o = k as f64 * pow;
                    pow *= x0;
                }
            }
        }
        out
    }

    /// Coefficients representing the constant function `c`.
    pub fn constant(&self, c: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        theta[0] = match self.family {
            Family::Fourier { .. } => c * (2.0 * PI).sqrt(),
            _ => c,
        };
        theta
    }

    pub fn evaluate(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.eval(x).iter().zip(theta).map(|(p, t)| p * t).sum()
    }
}

fn powers_into(x: f64, degree: usize, out: &mut [f64]) {
    let mut pow = 1.0;
    for o in out.iter_mut().take(degree + 1) {
        *o = pow;
        pow *= x;
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Fourier { max_freq } => write!(f, "fourier:{max_freq}"),
            Family::Legendre { degree, lo, hi } => write!(f, "legendre:{degree}:{lo}:{hi}"),
            Family::Monomial { degree } => write!(f, "monomial:{degree}"),
            Family::Quadratic => write!(f, "quadratic"),
        }
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad integer `{p}` in basis `{s}`")))
        };
        let real = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number `{p}` in basis `{s}`")))
        };
        match parts.as_slice() {
            ["fourier", k] => Ok(make_fourier(int(k)?)),
            ["legendre", d, a, b] => make_legendre(int(d)?, real(a)?, real(b)?),
            ["legendre", d] => make_legendre(int(d)?, -PI, PI),
            ["monomial", d] => Ok(make_monomial(int(d)?)),
            ["quadratic"] => Ok(make_quadratic()),
            _ => Err(Error::Parse(format!(
                "unknown basis `{s}` (expected fourier:K, legendre:D:a:b, monomial:D or quadratic)"
            ))),
        }
    }
}

/// Outcome of [`fourier_gradient_bound_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundReport {
    /// Largest frequency in the span.
    pub omega_max: f64,
    /// Largest observed `‖f'‖ / ‖f‖` under the uniform law on the period.
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
}

impl GradientBoundReport {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.max_ratio <= self.omega_max * (1.0 + rel_tol)
    }
}

/// Number of quadrature points for the norms in the gradient-bound check.
pub const GRADIENT_CHECK_POINTS: usize = 10_000;

/// `‖f'‖_ξ / ‖f‖_ξ` for `f = θᵀψ`, `ξ` uniform on `[-π, π)`.
pub fn gradient_ratio(fm: &FeatureMap, theta: &[f64]) -> f64 {
    let n = GRADIENT_CHECK_POINTS;
    let (mut f2, mut g2) = (0.0, 0.0);
    for j in 0..n {
        let x = [-PI + 2.0 * PI * j as f64 / n as f64];
        let f: f64 = fm.eval(&x).iter().zip(theta).map(|(a, b)| a * b).sum();
        let g: f64 = fm.grad(&x).iter().zip(theta).map(|(a, b)| a * b).sum();
        f2 += f * f;
        g2 += g * g;
    }
    if f2 == 0.0 {
        return 0.0;
    }
    (g2 / f2).sqrt()
}

/// Checks `‖f'‖ ≤ ω_max ‖f‖` on `samples` random elements of a Fourier span.
pub fn fourier_gradient_bound_check(
    fm: &FeatureMap,
    samples: usize,
    seed: u64,
) -> Result<GradientBoundReport> {
    let Family::Fourier { max_freq } = fm.family() else {
        return Err(Error::domain("gradient bound check applies to Fourier bases only"));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratios: Vec<f64> = (0..samples)
        .map(|_| {
            let theta: Vec<f64> = (0..fm.dim()).map(|_| rng.sample(StandardNormal)).collect();
            gradient_ratio(fm, &theta)
        })
        .collect();
    Ok(GradientBoundReport {
        omega_max: max_freq as f64,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
    })
}
