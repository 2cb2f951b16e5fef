//! Gauss–Hermite rules for expectations under Gaussian laws.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Node count used for conditional expectations of Gaussian transitions.
pub const DEFAULT_NODES: usize = 64;

/// Physicists' Gauss–Hermite rule, `∫ e^{-x²} f(x) dx ≈ Σ wᵢ f(xᵢ)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Roots by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let pim4 = PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }

    /// Shared 64-node rule.
    pub fn default_rule() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(DEFAULT_NODES))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Points and probability weights approximating `N(mean, var)`.
    /// The weights sum to one.
    pub fn gaussian_points(&self, mean: f64, var: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = (2.0 * var.max(0.0)).sqrt();
        let norm = PI.sqrt().recip();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mean + scale * x, w * norm))
    }

    /// `E[f(Y)]` for `Y ~ N(mean, var)`; `var = 0` evaluates `f(mean)`.
    pub fn expect(&self, mean: f64, var: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if var <= 0.0 {
            return f(mean);
        }
        self.gaussian_points(mean, var).map(|(y, w)| w * f(y)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 20, 64, 100] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights().iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n} sum={s}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let gh = GaussHermite::default_rule();
        let (mu, var) = (0.7, 2.3);
        assert!((gh.expect(mu, var, |y| y) - mu).abs() < 1e-12);
        assert!((gh.expect(mu, var, |y| (y - mu).powi(2)) - var).abs() < 1e-12);
        assert!((gh.expect(mu, var, |y| (y - mu).powi(4)) - 3.0 * var * var).abs() < 1e-10);
    }

    #[test]
    fn characteristic_function() {
        // E[cos(kY)] = e^{-k²v/2} cos(kμ)
        let gh = GaussHermite::default_rule();
        // 64 nodes resolve frequencies up to about 8 in the standardized
        // variable to this tolerance
        let (mu, var) = (0.3, 0.9);
        for k in 1..=6 {
            let k = k as f64;
            let want = (-k * k * var / 2.0).exp() * (k * mu).cos();
            let got = gh.expect(mu, var, |y| (k * y).cos());
            assert!((got - want).abs() < 1e-13, "k={k} {got} {want}");
        }
    }

    #[test]
    fn degenerate_variance_is_point_mass() {
        let gh = GaussHermite::default_rule();
        assert_eq!(gh.expect(1.5, 0.0, |y| y * y), 2.25);
    }

    #[test]
    fn two_point_rule() {
        let gh = GaussHermite::new(2);
        let r = 0.5f64.sqrt();
        assert!((gh.nodes()[0].abs() - r).abs() < 1e-14);
    }
}
