//! Weights of the high-order Bellman operator and the high-order generator.
//!
//! The order-`n` Bellman operator replaces the reward path on
//! `[0, (n-1)η]` by its Lagrange interpolant through the observations at
//! `0, η, …, (n-1)η`:
//!
//! ```text
//! T⁽ⁿ⁾f(x) = η Σᵢ κᵢ E[r(X_{iη}) | x] + e^{-β(n-1)η} E[f(X_{(n-1)η}) | x]
//! κᵢ      = (1/η) ∫₀^{(n-1)η} e^{-βs} Wᵢ(s) ds
//! ```
//!
//! The order-`n` generator is the one-sided difference
//! `A⁽ⁿ⁾f(x) = (1/η) Σⱼ cⱼ E[f(X_{jη}) | x]` whose weights solve the
//! Vandermonde system `Σⱼ cⱼ jᵏ = [k = 1]`, `k = 0..n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Largest supported order for both schemes.
pub const MAX_ORDER: usize = 8;

/// Above this value of `β·(n-1)η/2` the exponential moments are computed by
/// forward integration by parts; below it by their power series.
const SERIES_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellmanScheme {
    pub order: usize,
    pub beta: f64,
    pub eta: f64,
    /// Reward weights; the reward at offset `i` enters as `η κᵢ R_{(k+i)η}`.
    pub kappa: Vec<f64>,
    pub lookahead_discount: f64,
    pub lookahead_steps: usize,
    pub naive: bool,
}

impl BellmanScheme {
    /// Order-`n` scheme. Order 1 is the exponentially weighted constant
    /// interpolation; use [`BellmanScheme::naive`] for the plain `η r` rule.
    pub fn new(order: usize, beta: f64, eta: f64) -> Result<Self> {
        check_rate_and_step(beta, eta)?;
        match order {
            0 => Err(Error::domain("order must be at least 1")),
            1 => first_order_bellman(beta, eta, false),
            n if n > MAX_ORDER => Err(Error::domain(format!(
                "Bellman order {n} exceeds the supported maximum {MAX_ORDER}"
            ))),
            n => {
                let kappa = kappa_coefficients(n, beta, eta)?;
                Ok(BellmanScheme {
                    order: n,
                    beta,
                    eta,
                    kappa,
                    lookahead_discount: (-beta * (n - 1) as f64 * eta).exp(),
                    lookahead_steps: n - 1,
                    naive: false,
                })
            }
        }
    }

    pub fn naive(beta: f64, eta: f64) -> Result<Self> {
        first_order_bellman(beta, eta, true)
    }

    /// A discounted one-step-or-more scheme with arbitrary weights.
    ///
    /// Used to express algebraically equivalent rearrangements such as the
    /// first-order generator equation in Bellman form.
    pub fn custom(
        beta: f64,
        eta: f64,
        kappa: Vec<f64>,
        lookahead_steps: usize,
        lookahead_discount: f64,
    ) -> Result<Self> {
        check_rate_and_step(beta, eta)?;
        if kappa.is_empty() || lookahead_steps == 0 {
            return Err(Error::domain("custom scheme needs weights and a positive lookahead"));
        }
        if !(lookahead_discount > 0.0 && lookahead_discount < 1.0) {
            return Err(Error::domain("lookahead discount must lie in (0, 1)"));
        }
        Ok(BellmanScheme {
            order: kappa.len(),
            beta,
            eta,
            kappa,
            lookahead_discount,
            lookahead_steps,
            naive: false,
        })
    }

    /// `η κᵢ` for each reward offset.
    pub fn reward_weights(&self) -> Vec<f64> {
        self.kappa.iter().map(|k| self.eta * k).collect()
    }

    /// Observations a window needs beyond its first index: the window
    /// starting at `k` is usable when `k + margin` is a valid index.
    pub fn window_margin(&self) -> usize {
        self.lookahead_steps.max(self.kappa.len() - 1).max(self.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorScheme {
    pub order: usize,
    pub beta: f64,
    pub eta: f64,
    /// `c_0, …, c_n`.
    pub c: Vec<f64>,
}

impl GeneratorScheme {
    pub fn new(order: usize, beta: f64, eta: f64) -> Result<Self> {
        check_rate_and_step(beta, eta)?;
        Ok(GeneratorScheme {
            order,
            beta,
            eta,
            c: generator_coefficients(order)?,
        })
    }
}

/// One of the discretizations compared throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Naive,
    Bellman(usize),
    Generator(usize),
}

/// A constructed scheme for one [`Method`].
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Bellman(BellmanScheme),
    Generator(GeneratorScheme),
}

impl Method {
    pub fn scheme(self, beta: f64, eta: f64) -> Result<Scheme> {
        Ok(match self {
            Method::Naive => Scheme::Bellman(BellmanScheme::naive(beta, eta)?),
            Method::Bellman(n) => Scheme::Bellman(BellmanScheme::new(n, beta, eta)?),
            Method::Generator(n) => Scheme::Generator(GeneratorScheme::new(n, beta, eta)?),
        })
    }

    /// Nominal convergence order in `η`.
    pub fn order(self) -> usize {
        match self {
            Method::Naive => 1,
            Method::Bellman(n) | Method::Generator(n) => n,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Naive => write!(f, "naive"),
            Method::Bellman(n) => write!(f, "bellman:{n}"),
            Method::Generator(n) => write!(f, "generator:{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "naive" {
            return Ok(Method::Naive);
        }
        let (form, order) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("method `{s}` is not naive, bellman:N or generator:N")))?;
        let n: usize = order
            .parse()
            .map_err(|_| Error::Parse(format!("bad order in method `{s}`")))?;
        match form {
            "bellman" => Ok(Method::Bellman(n)),
            "generator" => Ok(Method::Generator(n)),
            _ => Err(Error::Parse(format!("unknown form `{form}` in method `{s}`"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_rate_and_step(beta: f64, eta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("discount rate must be positive, got {beta}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("step size must be positive, got {eta}")));
    }
    Ok(())
}

/// Lagrange basis polynomial `Wᵢ(s)` on the nodes `0, η, …, (n-1)η`.
pub fn lagrange_weight(i: usize, s: f64, n: usize, eta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("Lagrange weights need at least two nodes"));
    }
    if i >= n {
        return Err(Error::domain(format!("node index {i} out of range for order {n}")));
    }
    let mut w = 1.0;
    for j in (0..n).filter(|&j| j != i) {
        w *= (s - j as f64 * eta) / ((i as f64 - j as f64) * eta);
    }
    Ok(w)
}

/// `κᵢ = (1/η) ∫₀^{(n-1)η} e^{-βs} Wᵢ(s) ds` for `i = 0..n`.
///
/// With `τ = s/η` and `u = τ - (n-1)/2` each `Wᵢ` is a polynomial in `u`
/// with modest coefficients, and `κᵢ` is a combination of the centred
/// moments `∫₀^{n-1} e^{-βητ} (τ - (n-1)/2)ᵖ dτ`.
pub fn kappa_coefficients(n: usize, beta: f64, eta: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::domain("kappa coefficients need order at least 2"));
    }
    if n > MAX_ORDER {
        return Err(Error::domain(format!("order {n} exceeds {MAX_ORDER}")));
    }
    check_rate_and_step(beta, eta)?;
    let a = beta * eta;
    let centre = (n - 1) as f64 / 2.0;
    let moments = centred_exp_moments(a, centre, n - 1);
    Ok((0..n)
        .map(|i| {
            lagrange_poly_centred(i, n)
                .iter()
                .zip(&moments)
                .map(|(c, m)| c * m)
                .sum()
        })
        .collect())
}

/// Monomial coefficients in `u = τ - (n-1)/2` of the `i`-th Lagrange
/// polynomial on the integer nodes `0..n`.
fn lagrange_poly_centred(i: usize, n: usize) -> Vec<f64> {
    let centre = (n - 1) as f64 / 2.0;
    let mut poly = vec![1.0];
    for j in (0..n).filter(|&j| j != i) {
        let root = j as f64 - centre;
        let denom = i as f64 - j as f64;
        let mut next = vec![0.0; poly.len() + 1];
        for (p, &coef) in poly.iter().enumerate() {
            next[p + 1] += coef / denom;
            next[p] -= coef * root / denom;
        }
        poly = next;
    }
    poly
}

/// `K_p = ∫₀^{2c} e^{-aτ} (τ - c)ᵖ dτ` for `p = 0..=max_power`.
fn centred_exp_moments(a: f64, c: f64, max_power: usize) -> Vec<f64> {
    if a * c >= SERIES_LIMIT {
        // Forward recursion is stable once a·c exceeds p + 1.
        let h = 2.0 * c;
        let tail = (-a * h).exp();
        let mut out = Vec::with_capacity(max_power + 1);
        out.push(-(-a * h).exp_m1() / a);
        for p in 1..=max_power {
            let boundary = ((-c).powi(p as i32) - tail * c.powi(p as i32)) / a;
            let prev = out[p - 1];
            out.push(boundary + p as f64 / a * prev);
        }
        return out;
    }
    // e^{-ac} ∫_{-c}^{c} e^{-au} uᵖ du, expanding e^{-au}. Only terms with
    // p + k even survive and they all share one sign.
    let damp = (-a * c).exp();
    (0..=max_power)
        .map(|p| {
            let mut term = c.powi(p as i32 + 1); // (ac)^k / k! · c^{p+1}
            let mut sum = 0.0;
            for k in 0..600 {
                if k > 0 {
                    term *= a * c / k as f64;
                }
                if (p + k) % 2 == 0 {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    let contrib = 2.0 * term / (p + k + 1) as f64;
                    sum += sign * contrib;
                    if k as f64 > a * c && contrib <= 1e-18 * sum.abs() {
                        break;
                    }
                }
                if term == 0.0 {
                    break;
                }
            }
            damp * sum
        })
        .collect()
}

/// First-order Bellman scheme: one-step lookahead with discount `e^{-βη}`.
///
/// The naive variant weights the reward by `η`; the default variant by
/// `(1 - e^{-βη})/β`, the exact discounted integral of a reward held
/// constant over the step.
pub fn first_order_bellman(beta: f64, eta: f64, naive: bool) -> Result<BellmanScheme> {
    check_rate_and_step(beta, eta)?;
    let a = beta * eta;
    let kappa0 = if naive { 1.0 } else { -(-a).exp_m1() / a };
    Ok(BellmanScheme {
        order: 1,
        beta,
        eta,
        kappa: vec![kappa0],
        lookahead_discount: (-a).exp(),
        lookahead_steps: 1,
        naive,
    })
}

/// Weights `c_0..c_n` of the order-`n` one-sided generator difference.
pub fn generator_coefficients(n: usize) -> Result<Vec<f64>> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::domain(format!(
            "generator order must be in 1..={MAX_ORDER}, got {n}"
        )));
    }
    let a = Matrix::from_fn(n + 1, n + 1, |k, j| (j as f64).powi(k as i32));
    let mut b = vec![0.0; n + 1];
    b[1] = 1.0;
    Ok(linalg::solve(&a, &b, 0.0)?.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn second_order_weights_are_linear() {
        let eta = 0.3;
        for s in [0.0, 0.05, 0.17, 0.3] {
            assert_relative_eq!(lagrange_weight(0, s, 2, eta).unwrap(), 1.0 - s / eta, epsilon = 1e-15);
            assert_relative_eq!(lagrange_weight(1, s, 2, eta).unwrap(), s / eta, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_are_cardinal() {
        let eta = 0.2;
        for n in 2..=MAX_ORDER {
            for i in 0..n {
                for j in 0..n {
                    let w = lagrange_weight(i, j as f64 * eta, n, eta).unwrap();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((w - want).abs() < 1e-12, "n={n} i={i} j={j} w={w}");
                }
            }
        }
    }

    #[test]
    fn weight_domain_errors() {
        assert!(lagrange_weight(2, 0.0, 2, 0.1).is_err());
        assert!(lagrange_weight(0, 0.0, 1, 0.1).is_err());
    }

    #[test]
    fn trapezoid_limit() {
        let k = kappa_coefficients(2, 1e-12, 0.5).unwrap();
        assert_relative_eq!(k[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(k[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn recursion_and_series_agree_near_switch() {
        let c = 3.5;
        let a_lo = (SERIES_LIMIT - 1e-9) / c;
        let a_hi = SERIES_LIMIT / c;
        let lo = centred_exp_moments(a_lo, c, 7);
        let hi = centred_exp_moments(a_hi, c, 7);
        for (x, y) in lo.iter().zip(&hi) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "{x} vs {y}");
        }
    }

    #[test]
    fn first_order_variants() {
        let naive = first_order_bellman(2.0, 1.0, true).unwrap();
        assert_eq!(naive.kappa, vec![1.0]);
        assert_eq!(naive.lookahead_steps, 1);
        let exp = first_order_bellman(2.0, 1.0, false).unwrap();
        assert_relative_eq!(exp.kappa[0], (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(exp.lookahead_discount, (-2.0f64).exp(), epsilon = 1e-15);
        let tiny = first_order_bellman(1e-14, 1.0, false).unwrap();
        assert!((tiny.kappa[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn low_order_generators() {
        let c1 = generator_coefficients(1).unwrap();
        assert_eq!(c1, vec![-1.0, 1.0]);
        let c2 = generator_coefficients(2).unwrap();
        for (x, w) in c2.iter().zip([-1.5, 2.0, -0.5]) {
            assert!((x - w).abs() < 1e-15);
        }
        assert!(generator_coefficients(0).is_err());
        assert!(generator_coefficients(9).is_err());
    }

    #[test]
    fn order_cap_and_bad_parameters() {
        assert!(BellmanScheme::new(9, 1.0, 0.1).is_err());
        assert!(BellmanScheme::new(0, 1.0, 0.1).is_err());
        assert!(BellmanScheme::new(2, 0.0, 0.1).is_err());
        assert!(BellmanScheme::new(2, 1.0, -0.1).is_err());
        assert!(GeneratorScheme::new(2, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn method_round_trip() {
        for m in [Method::Naive, Method::Bellman(3), Method::Generator(1)] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("bellman".parse::<Method>().is_err());
        assert!("td:2".parse::<Method>().is_err());
    }

    #[test]
    fn scheme_shapes() {
        let s = BellmanScheme::new(4, 1.0, 0.1).unwrap();
        assert_eq!(s.kappa.len(), 4);
        assert_eq!(s.lookahead_steps, 3);
        assert!(s.lookahead_discount > 0.0 && s.lookahead_discount < 1.0);
        let g = GeneratorScheme::new(4, 1.0, 0.1).unwrap();
        assert_eq!(g.c.len(), 5);
    }
}
