use serde::{Deserialize, Serialize};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Smooth activations. ReLU is deliberately absent: the analysis needs a
/// Lipschitz derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// ELU with alpha = 1.
    #[default]
    Elu,
    /// Exact GeLU, `y * Phi(y)` with the Gaussian CDF (not the tanh fit).
    Gelu,
    Sigmoid,
}

fn std_normal_pdf(y: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * y * y).exp()
}

fn std_normal_cdf(y: f64) -> f64 {
    0.5 * (1.0 + libm::erf(y * INV_SQRT_2))
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Elu, Activation::Gelu, Activation::Sigmoid];

    pub fn value(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    y
                } else {
                    y.exp_m1()
                }
            }
            Activation::Gelu => y * std_normal_cdf(y),
            Activation::Sigmoid => logistic(y),
        }
    }

    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y.exp()
                }
            }
            Activation::Gelu => std_normal_cdf(y) + y * std_normal_pdf(y),
            Activation::Sigmoid => {
                let s = logistic(y);
                s * (1.0 - s)
            }
        }
    }

    pub fn second_derivative(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    0.0
                } else {
                    y.exp()
                }
            }
            Activation::Gelu => std_normal_pdf(y) * (2.0 - y * y),
            Activation::Sigmoid => {
                let s = logistic(y);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// `sup |sigma'|`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Elu => 1.0,
            // sigma'' vanishes at y = sqrt(2), where sigma' peaks.
            Activation::Gelu => {
                let y = std::f64::consts::SQRT_2;
                std_normal_cdf(y) + y * std_normal_pdf(y)
            }
            Activation::Sigmoid => 0.25,
        }
    }

    /// `sup |sigma''|`.
    pub fn smoothness(self) -> f64 {
        match self {
            Activation::Elu => 1.0,
            Activation::Gelu => 2.0 * INV_SQRT_2PI,
            // |s(1-s)(1-2s)| peaks at s = (3 -+ sqrt 3)/6 with value 1/(6 sqrt 3).
            Activation::Sigmoid => 1.0 / (6.0 * 3f64.sqrt()),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Activation::Elu),
            "gelu" => Ok(Activation::Gelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(crate::Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in Activation::ALL {
            for &y in &[-3.0, -0.7, -1e-3, 0.4, 1.3, 4.0] {
                let fd = (act.value(y + h) - act.value(y - h)) / (2.0 * h);
                assert!((fd - act.derivative(y)).abs() < 1e-8, "{act:?} at {y}");
                let fd2 = (act.derivative(y + h) - act.derivative(y - h)) / (2.0 * h);
                assert!((fd2 - act.second_derivative(y)).abs() < 1e-7, "{act:?} at {y}");
            }
        }
    }

    #[test]
    fn lipschitz_and_smoothness_hold_on_random_pairs() {
        let mut rng = crate::rng::seeded(11);
        for act in Activation::ALL {
            for _ in 0..10_000 {
                let a: f64 = rng.random_range(-8.0..8.0);
                let b: f64 = rng.random_range(-8.0..8.0);
                let dy = (a - b).abs();
                assert!((act.value(a) - act.value(b)).abs() <= act.lipschitz() * dy + 1e-15);
                assert!((act.derivative(a) - act.derivative(b)).abs() <= act.smoothness() * dy + 1e-15);
            }
        }
    }

    #[test]
    fn gelu_constants() {
        assert!((Activation::Gelu.lipschitz() - 1.128_904).abs() < 1e-6);
        assert!((Activation::Gelu.smoothness() - 0.797_884_6).abs() < 1e-6);
    }
}
