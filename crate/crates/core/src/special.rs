//! Normal-distribution special functions: the standard normal CDF, Owen's T
//! function, the bivariate normal CDF, and the Gaussian expectation of a
//! product of two shifted error functions.
//!
//! Owen's T is evaluated by Gauss-Legendre quadrature on its defining
//! integral for |a| <= 1 and reduced through the standard identity
//! `T(h,a) = G(h)/2 + G(ah)/2 - G(h)G(ah) - T(ah, 1/a)` otherwise, together
//! with `T(h,-a) = -T(h,a)` and `T(-h,a) = T(h,a)`.

use crate::quad::QuadratureRule;
use std::sync::OnceLock;

const TWO_PI: f64 = std::f64::consts::TAU;

fn owens_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_legendre(64).expect("fixed order"))
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / TWO_PI.sqrt()
}

/// Standard normal CDF `G(z)`, accurate to ~1e-15 on both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Owen's T function `T(h, a)`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 || h.is_nan() || a.is_nan() {
        return 0.0;
    }
    let h = h.abs();
    let sign = a.signum();
    let a = a.abs();
    if a.is_infinite() {
        // T(h, inf) = (1 - G(h)) / 2 for h >= 0
        return sign * 0.5 * (1.0 - std_normal_cdf(h));
    }
    if a <= 1.0 {
        sign * owens_t_core(h, a)
    } else {
        let g_h = std_normal_cdf(h);
        let g_ah = std_normal_cdf(a * h);
        sign * (0.5 * g_h + 0.5 * g_ah - g_h * g_ah - owens_t_core(a * h, 1.0 / a))
    }
}

/// Defining integral for 0 <= a <= 1, h >= 0:
/// `(1/2pi) int_0^a exp(-h^2 (1+x^2)/2) / (1+x^2) dx`.
fn owens_t_core(h: f64, a: f64) -> f64 {
    let hh = 0.5 * h * h;
    owens_rule().integrate(0.0, a, |x| (-hh * (1.0 + x * x)).exp() / (1.0 + x * x)) / TWO_PI
}

/// Bivariate standard normal CDF `P(X <= mu1, Y <= mu2)` with correlation rho.
pub fn bvn_cdf(mu1: f64, mu2: f64, rho: f64) -> f64 {
    let g1 = std_normal_cdf(mu1);
    let g2 = std_normal_cdf(mu2);
    if rho >= 1.0 {
        return g1.min(g2);
    }
    if rho <= -1.0 {
        return (g1 + g2 - 1.0).max(0.0);
    }
    if mu1 == 0.0 && mu2 == 0.0 {
        return 0.25 + rho.asin() / TWO_PI;
    }
    let root = (1.0 - rho * rho).sqrt();
    // At mu = 0 the T(mu1, mu2/mu1) and T(mu1, (mu2 - rho mu1)/(mu1 root))
    // terms cancel in the limit, leaving a single Owen term.
    if mu1 == 0.0 {
        return 0.5 * g2 + owens_t(mu2, rho / root);
    }
    if mu2 == 0.0 {
        return 0.5 * g1 + owens_t(mu1, rho / root);
    }
    owens_t(mu1, mu2 / mu1) + owens_t(mu2, mu1 / mu2)
        - owens_t(mu1, (mu2 - rho * mu1) / (mu1 * root))
        - owens_t(mu2, (mu1 - rho * mu2) / (mu2 * root))
        + g1 * g2
}

/// Gaussian expectation `g = < erf((z1+mu1)/sqrt2) erf((z2+mu2)/sqrt2) >`
/// where `(z1, z2)` is centered Gaussian with variances `s1sq`, `s2sq` and
/// covariance `kappa`. In network terms: `mu` are biases, `s*sq` and `kappa`
/// are input-weight overlaps.
pub fn erf_pair_expectation(mu1: f64, mu2: f64, s1sq: f64, kappa: f64, s2sq: f64) -> f64 {
    let d1 = (1.0 + s1sq).sqrt();
    let d2 = (1.0 + s2sq).sqrt();
    let m1 = mu1 / d1;
    let m2 = mu2 / d2;
    let rho = kappa / (d1 * d2);
    4.0 * bvn_cdf(m1, m2, rho) - 2.0 * std_normal_cdf(m1) - 2.0 * std_normal_cdf(m2) + 1.0
}

/// Partial derivatives of [`erf_pair_expectation`] with respect to its five
/// arguments `(mu1, mu2, s1sq, kappa, s2sq)`.
pub fn erf_pair_expectation_grad(
    mu1: f64,
    mu2: f64,
    s1sq: f64,
    kappa: f64,
    s2sq: f64,
) -> [f64; 5] {
    let d1 = (1.0 + s1sq).sqrt();
    let d2 = (1.0 + s2sq).sqrt();
    let m1 = mu1 / d1;
    let m2 = mu2 / d2;
    let rho = (kappa / (d1 * d2)).clamp(-1.0, 1.0);

    // dPhi2/dm1 = phi(m1) G((m2 - rho m1)/root), symmetric in m2;
    // dPhi2/drho = bivariate density at (m1, m2).
    let root2 = (1.0 - rho * rho).max(1e-300);
    let root = root2.sqrt();
    let dphi2_dm1 = std_normal_pdf(m1) * std_normal_cdf((m2 - rho * m1) / root);
    let dphi2_dm2 = std_normal_pdf(m2) * std_normal_cdf((m1 - rho * m2) / root);
    let dphi2_drho = (-(m1 * m1 - 2.0 * rho * m1 * m2 + m2 * m2) / (2.0 * root2)).exp()
        / (TWO_PI * root);

    let dg_dm1 = 4.0 * dphi2_dm1 - 2.0 * std_normal_pdf(m1);
    let dg_dm2 = 4.0 * dphi2_dm2 - 2.0 * std_normal_pdf(m2);
    let dg_drho = 4.0 * dphi2_drho;

    // chain rule through m1 = mu1/d1, m2 = mu2/d2, rho = kappa/(d1 d2)
    let dm1_ds1sq = -0.5 * mu1 / (d1 * d1 * d1);
    let dm2_ds2sq = -0.5 * mu2 / (d2 * d2 * d2);
    let drho_ds1sq = -0.5 * kappa / (d1 * d1 * d1 * d2);
    let drho_ds2sq = -0.5 * kappa / (d1 * d2 * d2 * d2);

    [
        dg_dm1 / d1,
        dg_dm2 / d2,
        dg_dm1 * dm1_ds1sq + dg_drho * drho_ds1sq,
        dg_drho / (d1 * d2),
        dg_dm2 * dm2_ds2sq + dg_drho * drho_ds2sq,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson oracle, independent of the quadrature module.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
        }
        fn go(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (left, lm, flm) = simpson(f, a, fa, m, fm);
            let (right, rm, frm) = simpson(f, m, fm, b, fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                go(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                    + go(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let (whole, m, fm) = simpson(f, a, fa, b, fb);
        go(f, a, fa, b, fb, whole, m, fm, tol, 40)
    }

    #[test]
    fn cdf_basics() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for &z in &[0.3, 1.2, 2.7, 5.0] {
            assert!((std_normal_cdf(-z) - (1.0 - std_normal_cdf(z))).abs() < 1e-15);
        }
        // numeric integration oracle for G(1.96)
        let oracle = 0.5 + adaptive_simpson(&std_normal_pdf, 0.0, 1.96, 1e-12);
        assert!((std_normal_cdf(1.96) - oracle).abs() < 1e-12);
        assert!((std_normal_cdf(1.96) - 0.9750).abs() < 1e-4);
    }

    #[test]
    fn owens_t_zero_a() {
        assert_eq!(owens_t(1.3, 0.0), 0.0);
    }

    #[test]
    fn owens_t_zero_h_is_arctan() {
        for &a in &[0.2f64, 0.9, 1.0, 3.7, 25.0] {
            let expect = a.atan() / TWO_PI;
            assert!((owens_t(0.0, a) - expect).abs() < 1e-14, "a = {a}");
            assert!((owens_t(0.0, -a) + expect).abs() < 1e-14, "a = -{a}");
        }
    }

    #[test]
    fn owens_t_unit_a_reduction() {
        for &h in &[0.0, 0.4, 1.1, 2.6] {
            let g = std_normal_cdf(h);
            assert!((owens_t(h, 1.0) - 0.5 * g * (1.0 - g)).abs() < 1e-13, "h = {h}");
        }
    }

    #[test]
    fn owens_t_matches_defining_integral() {
        for &(h, a) in &[
            (0.3, 0.5),
            (1.2, 0.99),
            (2.0, 1.5),
            (0.7, 4.0),
            (-1.4, 2.5),
            (1.4, -2.5),
            (0.05, 30.0),
        ] {
            let hh: f64 = h;
            let f = move |x: f64| (-0.5 * hh * hh * (1.0 + x * x)).exp() / (1.0 + x * x);
            let oracle = adaptive_simpson(&f, 0.0, a, 1e-13) / TWO_PI;
            let got = owens_t(h, a);
            assert!(
                (got - oracle).abs() < 1e-10,
                "T({h},{a}) = {got} vs oracle {oracle}"
            );
        }
    }

    /// 1-D reduction oracle: Phi2(h,k;rho) = int_-inf^h phi(x) G((k-rho x)/root) dx.
    fn bvn_oracle(h: f64, k: f64, rho: f64) -> f64 {
        let root = (1.0 - rho * rho).sqrt();
        let f = move |x: f64| std_normal_pdf(x) * std_normal_cdf((k - rho * x) / root);
        adaptive_simpson(&f, -9.0, h, 1e-12)
    }

    #[test]
    fn bvn_independence_and_arcsine() {
        assert!((bvn_cdf(0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        for &rho in &[-0.95, -0.4, 0.2, 0.8] {
            let expect = 0.25 + (rho as f64).asin() / TWO_PI;
            assert!((bvn_cdf(0.0, 0.0, rho) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn bvn_matches_numeric_oracle() {
        let cases = [
            (0.5, -0.3, 0.6),
            (1.2, 1.7, -0.4),
            (-0.8, 0.4, 0.9),
            (2.1, -1.5, -0.85),
            (0.0, 0.7, 0.5),
            (-0.6, 0.0, -0.3),
            (0.3, 0.3, 0.999),
        ];
        for &(h, k, rho) in &cases {
            let got = bvn_cdf(h, k, rho);
            let oracle = bvn_oracle(h, k, rho);
            assert!(
                (got - oracle).abs() < 1e-8,
                "BvN({h},{k};{rho}) = {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn bvn_degenerate_correlation() {
        assert!((bvn_cdf(0.7, 1.4, 1.0) - std_normal_cdf(0.7)).abs() < 1e-15);
        let expect = (std_normal_cdf(0.7) + std_normal_cdf(-0.2) - 1.0).max(0.0);
        assert!((bvn_cdf(0.7, -0.2, -1.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn erf_pair_expectation_zero_mean_independent() {
        assert!(erf_pair_expectation(0.0, 0.0, 1.3, 0.0, 0.7).abs() < 1e-14);
    }

    #[test]
    fn erf_pair_expectation_identical_neurons() {
        // mu = 0, sigma1 = sigma2 = sigma, rho = 1: (2/pi) asin(sigma^2/(1+sigma^2))
        for &s in &[0.5f64, 1.0, 2.0] {
            let got = erf_pair_expectation(0.0, 0.0, s * s, s * s, s * s);
            let expect = 2.0 / std::f64::consts::PI * (s * s / (1.0 + s * s)).asin();
            assert!((got - expect).abs() < 1e-13, "sigma = {s}");
        }
    }

    #[test]
    fn erf_pair_expectation_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..4 {
            let s1: f64 = rng.gen_range(0.2..2.0);
            let s2: f64 = rng.gen_range(0.2..2.0);
            let rho: f64 = rng.gen_range(-0.9..0.9);
            let mu1: f64 = rng.gen_range(-1.0..1.0);
            let mu2: f64 = rng.gen_range(-1.0..1.0);
            let kappa = rho * s1 * s2;
            let got = erf_pair_expectation(mu1, mu2, s1 * s1, kappa, s2 * s2);

            let n = 400_000;
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for _ in 0..n {
                let u: f64 = rng.sample(rand_distr::StandardNormal);
                let v: f64 = rng.sample(rand_distr::StandardNormal);
                let z1 = s1 * u;
                let z2 = s2 * (rho * u + (1.0 - rho * rho).sqrt() * v);
                let prod = libm::erf((z1 + mu1) / std::f64::consts::SQRT_2)
                    * libm::erf((z2 + mu2) / std::f64::consts::SQRT_2);
                acc += prod;
                acc2 += prod * prod;
            }
            let mean = acc / n as f64;
            let var = (acc2 / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (got - mean).abs() < 4.0 * se + 1e-6,
                "g = {got} vs MC {mean} +- {se}"
            );
        }
    }

    #[test]
    fn erf_pair_expectation_grad_matches_fd() {
        let args = [0.4, -0.7, 1.3, 0.5, 0.9];
        let grad = erf_pair_expectation_grad(args[0], args[1], args[2], args[3], args[4]);
        let f = |a: &[f64; 5]| erf_pair_expectation(a[0], a[1], a[2], a[3], a[4]);
        let h = 1e-6;
        for k in 0..5 {
            let mut up = args;
            up[k] += h;
            let mut dn = args;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() < 1e-8 * fd.abs().max(1.0),
                "arg {k}: {} vs {fd}",
                grad[k]
            );
        }
    }
}
