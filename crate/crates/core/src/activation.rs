//! Scalar activation functions with derivatives up to third order.
//!
//! Every variant supplies `value`, `d1`, `d2`, `d3` as plain scalar maps so
//! gradient, Hessian and the limit expansions can be written generically.

use serde::{Deserialize, Serialize};

/// Logistic sigmoid, overflow-safe on both tails.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus `log(1 + exp(x))`, evaluated as `x + log1p(exp(-x))` for x > 0.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Softplus,
    ErfScaled,
    Tanh,
    Sigmoid4PlusSoftplus,
}

impl ActivationKind {
    pub fn value(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => softplus(x),
            ActivationKind::ErfScaled => libm::erf(x / std::f64::consts::SQRT_2),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid4PlusSoftplus => sigmoid(4.0 * x) + softplus(x),
        }
    }

    pub fn d1(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => sigmoid(x),
            ActivationKind::ErfScaled => SQRT_2_OVER_PI * (-0.5 * x * x).exp(),
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid4PlusSoftplus => {
                let s = sigmoid(4.0 * x);
                4.0 * s * (1.0 - s) + sigmoid(x)
            }
        }
    }

    pub fn d2(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::ErfScaled => -x * SQRT_2_OVER_PI * (-0.5 * x * x).exp(),
            ActivationKind::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::Sigmoid4PlusSoftplus => {
                let s = sigmoid(4.0 * x);
                let p = sigmoid(x);
                16.0 * s * (1.0 - s) * (1.0 - 2.0 * s) + p * (1.0 - p)
            }
        }
    }

    pub fn d3(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ActivationKind::ErfScaled => {
                (x * x - 1.0) * SQRT_2_OVER_PI * (-0.5 * x * x).exp()
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                (1.0 - t * t) * (6.0 * t * t - 2.0)
            }
            ActivationKind::Sigmoid4PlusSoftplus => {
                let s = sigmoid(4.0 * x);
                let p = sigmoid(x);
                64.0 * s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)
                    + p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }

    /// Tag string used in serialized architecture descriptors.
    pub fn tag(self) -> &'static str {
        match self {
            ActivationKind::Softplus => "softplus",
            ActivationKind::ErfScaled => "erf_scaled",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid4PlusSoftplus => "sigmoid4_plus_softplus",
        }
    }

    /// Odd activations satisfy sigma(-x) = -sigma(x), which induces the
    /// per-neuron sign-flip symmetry of the network function.
    pub fn is_odd(self) -> bool {
        matches!(self, ActivationKind::ErfScaled | ActivationKind::Tanh)
    }

    pub fn all() -> [ActivationKind; 4] {
        [
            ActivationKind::Softplus,
            ActivationKind::ErfScaled,
            ActivationKind::Tanh,
            ActivationKind::Sigmoid4PlusSoftplus,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        assert!((ActivationKind::Softplus.value(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_large_argument_no_overflow() {
        let v = ActivationKind::Softplus.value(750.0);
        assert!(v.is_finite());
        assert!((v - 750.0).abs() < 1e-12);
    }

    #[test]
    fn erf_scaled_is_odd() {
        for &x in &[0.3, 1.7, 4.2] {
            let a = ActivationKind::ErfScaled;
            assert!((a.value(-x) + a.value(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // Spec tolerance: relative error < 1e-6 at step 1e-5.
        let h = 1e-5;
        for act in ActivationKind::all() {
            for &x in &[-3.0, -1.2, -0.4, 0.0, 0.3, 1.1, 2.7] {
                let d1 = act.d1(x);
                let fd1 = central_diff(|t| act.value(t), x, h);
                assert!(
                    (d1 - fd1).abs() <= 1e-6 * fd1.abs().max(1e-3),
                    "{:?} d1 at {x}: {d1} vs {fd1}",
                    act
                );
                let d2 = act.d2(x);
                let fd2 = central_diff(|t| act.d1(t), x, h);
                assert!(
                    (d2 - fd2).abs() <= 1e-6 * fd2.abs().max(1e-3),
                    "{:?} d2 at {x}: {d2} vs {fd2}",
                    act
                );
                let d3 = act.d3(x);
                let fd3 = central_diff(|t| act.d2(t), x, h);
                assert!(
                    (d3 - fd3).abs() <= 1e-6 * fd3.abs().max(1e-3),
                    "{:?} d3 at {x}: {d3} vs {fd3}",
                    act
                );
            }
        }
    }

    #[test]
    fn softplus_d1_is_sigmoid() {
        for &x in &[-5.0, -0.1, 0.0, 2.3] {
            assert!((ActivationKind::Softplus.d1(x) - sigmoid(x)).abs() < 1e-15);
        }
    }
}
