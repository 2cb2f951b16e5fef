#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exact rational image of a finite double.
pub fn rat_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

/// Gaussian elimination over the rationals.
pub fn rational_solve(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).find(|&r| !a[r][col].is_zero()).expect("nonsingular");
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = &a[r][col] / &a[col][col];
            for c in col..n {
                let t = &f * &a[col][c];
                a[r][c] -= t;
            }
            let t = &f * &b[col];
            b[r] -= t;
        }
    }
    let mut x = vec![BigRational::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r].clone();
        for c in r + 1..n {
            s -= &a[r][c] * &x[c];
        }
        x[r] = s / &a[r][r];
    }
    x
}

pub fn rational_vandermonde(n: usize) -> Vec<BigRational> {
    let a: Vec<Vec<BigRational>> = (0..=n)
        .map(|k| {
            (0..=n)
                .map(|j| {
                    let mut p = BigRational::one();
                    for _ in 0..k {
                        p *= rat(j as i64, 1);
                    }
                    p
                })
                .collect()
        })
        .collect();
    let b = (0..=n).map(|k| if k == 1 { BigRational::one() } else { BigRational::zero() }).collect();
    rational_solve(a, b)
}

pub fn abs(x: &BigRational) -> BigRational {
    x.abs()
}

const GL7_X: [f64; 7] = [
    0.0,
    0.405_845_151_377_397_2,
    -0.405_845_151_377_397_2,
    0.741_531_185_599_394_4,
    -0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
    -0.949_107_912_342_758_5,
];
const GL7_W: [f64; 7] = [
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
    0.129_484_966_168_869_7,
];

fn gl7(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (m, h) = ((a + b) / 2.0, (b - a) / 2.0);
    h * GL7_X.iter().zip(&GL7_W).map(|(x, w)| w * f(m + h * x)).sum::<f64>()
}

/// Adaptive 7-point Gauss–Legendre quadrature by interval bisection.
pub fn adaptive_gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = (a + b) / 2.0;
        let (l, r) = (gl7(f, a, m), gl7(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= tol {
            l + r
        } else {
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
    }
    rec(f, a, b, gl7(f, a, b), tol, 30)
}

/// Lagrange basis polynomial on `0, η, …, (n-1)η` from its product formula.
pub fn lagrange_product(i: usize, s: f64, n: usize, eta: f64) -> f64 {
    (0..n)
        .filter(|&j| j != i)
        .map(|j| (s - j as f64 * eta) / ((i as f64 - j as f64) * eta))
        .product()
}

/// `e^{-a}` for rational `0 ≤ a ≤ 5` by its Taylor series, stopped once the
/// alternating terms fall below `1e-40`.
pub fn rational_exp_neg(a: &BigRational) -> BigRational {
    let tiny = BigRational::new(BigInt::one(), BigInt::from(10).pow(40));
    let mut term = BigRational::one();
    let mut sum = BigRational::one();
    for k in 1..120 {
        term = -term * a / rat(k, 1);
        sum += &term;
        if abs(&term) < tiny {
            break;
        }
    }
    sum
}

/// `(η κ₀, η κ₁)` of the second-order scheme from the explicit formulas
/// `(1−e^{−βη})/β − (1−(1+βη)e^{−βη})/(β²η)` and
/// `(1−(1+βη)e^{−βη})/(β²η)`, evaluated in rational arithmetic.
pub fn second_order_reward_weights(beta: f64, eta: f64) -> (f64, f64) {
    let (b, h) = (rat_f64(beta), rat_f64(eta));
    let a = &b * &h;
    let e = rational_exp_neg(&a);
    let one = BigRational::one();
    let w1 = (&one - (&one + &a) * &e) / (&b * &b * &h);
    let w0 = (&one - &e) / &b - &w1;
    (to_f64(&w0), to_f64(&w1))
}
