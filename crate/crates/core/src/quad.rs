//! Gauss-Legendre and Gauss-Hermite quadrature rules.
//!
//! Nodes and weights come from the Golub-Welsch construction: the nodes are
//! the eigenvalues of the symmetric tridiagonal Jacobi matrix of the
//! orthogonal-polynomial recurrence and the weights are the squared first
//! eigenvector components scaled by the zeroth moment. The tridiagonal
//! eigenproblem is solved by QL with implicit shifts, accumulating only the
//! first eigenvector row.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// QL with implicit shifts on a symmetric tridiagonal matrix, rotating a
/// single row of the eigenvector matrix along (enough for quadrature
/// weights). `diag` holds the diagonal, `off[i]` the (i, i+1) entry with
/// `off[n-1]` unused; on return `diag` holds unsorted eigenvalues and `z`
/// the first row of the eigenvector matrix.
fn tridiag_ql_first_row(diag: &mut [f64], off: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iterations = 0;
        loop {
            // find a negligible off-diagonal element
            let mut m = l;
            while m < n - 1 {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 50 {
                return Err(Error::InvalidArgument(
                    "tridiagonal QL failed to converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            while i > l {
                i -= 1;
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && i > l {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    GaussLegendre,
    GaussHermite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Legendre rule on [-1, 1], exact for polynomials up to 2n-1.
    pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
        // recurrence beta_k = k / sqrt(4k^2 - 1), zeroth moment 2
        let beta = |k: usize| {
            let kf = k as f64;
            kf / (4.0 * kf * kf - 1.0).sqrt()
        };
        Self::golub_welsch(QuadratureKind::GaussLegendre, n, beta, 2.0)
    }

    /// Gauss-Hermite rule (physicists' weight `exp(-x^2)`), exact for
    /// `int x^k exp(-x^2) dx` up to k = 2n-1.
    pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
        // recurrence beta_k = sqrt(k/2), zeroth moment sqrt(pi)
        let beta = |k: usize| (k as f64 / 2.0).sqrt();
        Self::golub_welsch(
            QuadratureKind::GaussHermite,
            n,
            beta,
            std::f64::consts::PI.sqrt(),
        )
    }

    fn golub_welsch(
        kind: QuadratureKind,
        n: usize,
        beta: impl Fn(usize) -> f64,
        mu0: f64,
    ) -> Result<QuadratureRule> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature order must be positive".into()));
        }
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (1..n).map(&beta).collect();
        off.push(0.0);
        let mut first_row = vec![0.0; n];
        first_row[0] = 1.0;
        tridiag_ql_first_row(&mut diag, &mut off, &mut first_row)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
        let mut nodes: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
        let mut weights: Vec<f64> = order
            .iter()
            .map(|&i| mu0 * first_row[i] * first_row[i])
            .collect();
        // both rules are symmetric; enforce the +/- pairing exactly
        for k in 0..n / 2 {
            let s = 0.5 * (nodes[n - 1 - k] - nodes[k]);
            nodes[k] = -s;
            nodes[n - 1 - k] = s;
            let w = 0.5 * (weights[k] + weights[n - 1 - k]);
            weights[k] = w;
            weights[n - 1 - k] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(QuadratureRule { kind, nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Cached Gauss-Hermite rule of the default population-loss order.
    pub fn hermite_cached(n: usize) -> &'static QuadratureRule {
        use std::sync::{Mutex, OnceLock};
        static CACHE: OnceLock<Mutex<std::collections::HashMap<usize, &'static QuadratureRule>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(Default::default()));
        let mut map = cache.lock().expect("quadrature cache");
        map.entry(n).or_insert_with(|| {
            Box::leak(Box::new(QuadratureRule::gauss_hermite(n).expect("fixed order")))
        })
    }

    /// Integral of `f` over [a, b] (Gauss-Legendre rules only).
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        debug_assert_eq!(self.kind, QuadratureKind::GaussLegendre);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        half * acc
    }

    /// Expectation of `f` under the standard normal distribution.
    ///
    /// Gauss-Hermite rules apply their nodes directly. Gauss-Legendre rules
    /// integrate `f(x) phi(x)` panel-wise over [-10, 10], which keeps
    /// spectral accuracy even for integrands much sharper than the normal
    /// scale (where plain Gauss-Hermite converges slowly).
    pub fn normal_expectation(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        match self.kind {
            QuadratureKind::GaussHermite => {
                let root2 = std::f64::consts::SQRT_2;
                let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
                let mut acc = 0.0;
                for (x, w) in self.nodes.iter().zip(&self.weights) {
                    acc += w * f(root2 * x);
                }
                inv_sqrt_pi * acc
            }
            QuadratureKind::GaussLegendre => {
                let norm = 1.0 / (std::f64::consts::TAU).sqrt();
                let mut acc = 0.0;
                for panel in -10..10 {
                    let a = panel as f64;
                    acc += self.integrate(a, a + 1.0, |x| f(x) * norm * (-0.5 * x * x).exp());
                }
                acc
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        // degree up to 2n-1 with n = 8
        let rule = QuadratureRule::gauss_legendre(8).unwrap();
        for k in 0..=15usize {
            let got = rule.integrate(-1.0, 1.0, |x| x.powi(k as i32));
            let expect = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((got - expect).abs() < 1e-12, "degree {k}: {got} vs {expect}");
        }
    }

    #[test]
    fn legendre_64_matches_known_integral() {
        let rule = QuadratureRule::gauss_legendre(64).unwrap();
        let got = rule.integrate(0.0, 1.0, |x| (-x * x).exp());
        // erf(1) * sqrt(pi)/2
        let expect = libm::erf(1.0) * std::f64::consts::PI.sqrt() / 2.0;
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments_exact() {
        // int x^k e^{-x^2} dx = Gamma((k+1)/2) for even k, 0 for odd k
        let rule = QuadratureRule::gauss_hermite(12).unwrap();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let expect = |k: usize| -> f64 {
            if k % 2 == 1 {
                0.0
            } else {
                // Gamma(1/2) sequence: (k-1)!! / 2^{k/2} * sqrt(pi)
                let mut v = sqrt_pi;
                let mut m = k as f64 - 1.0;
                while m > 0.0 {
                    v *= m / 2.0;
                    m -= 2.0;
                }
                v
            }
        };
        for k in 0..=23usize {
            let mut got = 0.0;
            let mut mag = 0.0;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                got += w * x.powi(k as i32);
                mag += (w * x.powi(k as i32)).abs();
            }
            assert!(
                (got - expect(k)).abs() < 1e-13 * mag.max(1.0),
                "moment {k}: {got} vs {}",
                expect(k)
            );
        }
    }

    #[test]
    fn hermite_normal_expectations() {
        let rule = QuadratureRule::gauss_hermite(80).unwrap();
        // E[Z^2] = 1, E[Z^4] = 3, E[cos Z] = exp(-1/2)
        assert!((rule.normal_expectation(|z| z * z) - 1.0).abs() < 1e-13);
        assert!((rule.normal_expectation(|z| z.powi(4)) - 3.0).abs() < 1e-12);
        assert!((rule.normal_expectation(|z| z.cos()) - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn doubling_order_is_stable() {
        let r80 = QuadratureRule::gauss_hermite(80).unwrap();
        let r160 = QuadratureRule::gauss_hermite(160).unwrap();
        let f = |z: f64| libm::erf(z / std::f64::consts::SQRT_2) * (0.3 * z).sin();
        assert!((r80.normal_expectation(f) - r160.normal_expectation(f)).abs() < 1e-12);
    }
}
