use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Gelu,
    Linear,
}

/// Standard normal CDF. Uses `erfc` on the left tail so tiny values keep
/// their relative precision.
pub fn std_normal_cdf(v: f64) -> f64 {
    if v < 0.0 {
        0.5 * libm::erfc(-v * FRAC_1_SQRT_2)
    } else {
        0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2))
    }
}

pub fn std_normal_pdf(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * PI).sqrt()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Gelu,
        Activation::Linear,
    ];

    /// Value and derivative at `v`.
    pub fn apply(self, v: f64) -> (f64, f64) {
        match self {
            Activation::Sigmoid => {
                let f = sigmoid(v);
                (f, f * (1.0 - f))
            }
            // The derivative at exactly 0 is taken as 0.
            Activation::Relu => {
                if v > 0.0 {
                    (v, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Gelu => {
                let cdf = std_normal_cdf(v);
                (v * cdf, cdf + v * std_normal_pdf(v))
            }
            Activation::Linear => (v, 1.0),
        }
    }

    pub fn value(self, v: f64) -> f64 {
        self.apply(v).0
    }

    pub fn derivative(self, v: f64) -> f64 {
        self.apply(v).1
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Gelu => 2,
            Activation::Linear => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), (0.5, 0.25));
    }

    #[test]
    fn relu_cases() {
        assert_eq!(Activation::Relu.apply(-2.0), (0.0, 0.0));
        assert_eq!(Activation::Relu.apply(3.0), (3.0, 1.0));
        assert_eq!(Activation::Relu.apply(0.0), (0.0, 0.0));
    }

    #[test]
    fn gelu_at_one() {
        // 0.5 * (1 + erf(1/sqrt 2)) from a 30-digit reference.
        let phi1 = 0.841_344_746_068_542_9;
        let (v, d) = Activation::Gelu.apply(1.0);
        assert!((v - phi1).abs() < 1e-15);
        assert!((d - (phi1 + 0.241_970_724_519_143_37)).abs() < 1e-15);
    }

    #[test]
    fn no_overflow_at_extremes() {
        for a in Activation::ALL {
            for v in [-1e4, -745.0, -40.0, 40.0, 745.0, 1e4] {
                let (f, d) = a.apply(v);
                assert!(f.is_finite() && d.is_finite(), "{a:?} at {v}");
            }
        }
        assert_eq!(Activation::Sigmoid.value(-1e4), 0.0);
        assert_eq!(Activation::Sigmoid.value(1e4), 1.0);
    }

    fn grid() -> Vec<f64> {
        // Log-spaced magnitudes in [1e-4, 20], both signs, plus zero.
        let mut g = vec![0.0];
        for i in 0..=60 {
            let m = 1e-4 * (20.0f64 / 1e-4).powf(i as f64 / 60.0);
            g.push(m);
            g.push(-m);
        }
        g
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for a in Activation::ALL {
            for v in grid() {
                if a == Activation::Relu && v.abs() < 2.0 * h {
                    continue;
                }
                let numeric = (a.value(v + h) - a.value(v - h)) / (2.0 * h);
                let analytic = a.derivative(v);
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "{a:?} at {v}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn gelu_limits_and_definition() {
        for v in grid() {
            let exact = v * 0.5 * libm::erfc(-v / 2f64.sqrt());
            assert!((Activation::Gelu.value(v) - exact).abs() < 1e-12);
        }
        assert!((Activation::Gelu.value(20.0) - 20.0).abs() < 1e-12);
        assert!(Activation::Gelu.value(-20.0).abs() < 1e-12);
    }

    #[test]
    fn tags_round_trip() {
        for a in Activation::ALL {
            assert_eq!(Activation::from_tag(a.tag()), Some(a));
            assert_eq!(Activation::parse(a.name()).unwrap(), a);
        }
        assert!(Activation::from_tag(9).is_none());
    }
}
