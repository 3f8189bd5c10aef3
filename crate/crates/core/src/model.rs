//! Parameterised SDE families `dX = a(X; θ) dt + b(X; θ) dW`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// The SDE families supported by the estimator.
///
/// * `OrnsteinUhlenbeck`: `a = θ1(θ2 − x)`, `b = θ3`, state space ℝ.
/// * `BoundedMeanReversion`: `a = −2θ1 x`, `b = sqrt(2θ2(1 − x²))`, state
///   space (−1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeModel {
    OrnsteinUhlenbeck,
    BoundedMeanReversion,
}

/// Value and first two derivatives of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }
}

impl SdeModel {
    pub fn dim_theta(self) -> usize {
        match self {
            SdeModel::OrnsteinUhlenbeck => 3,
            SdeModel::BoundedMeanReversion => 2,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SdeModel::OrnsteinUhlenbeck => "ou",
            SdeModel::BoundedMeanReversion => "bmr",
        }
    }

    /// Closed state space bounds.
    pub fn state_space(self) -> (f64, f64) {
        match self {
            SdeModel::OrnsteinUhlenbeck => (f64::NEG_INFINITY, f64::INFINITY),
            SdeModel::BoundedMeanReversion => (-1.0, 1.0),
        }
    }

    pub fn check_theta(self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim_theta() {
            return Err(invalid(format!(
                "{} expects {} parameters, got {}",
                self.short_name(),
                self.dim_theta(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        Ok(())
    }

    /// Membership in the admissible parameter set Θ.
    ///
    /// For OU only `θ1 > 0` is required: `θ3` enters the generator through
    /// `θ3²`, so its sign is not identifiable.
    pub fn in_parameter_set(self, theta: &[f64]) -> bool {
        if theta.len() != self.dim_theta() || theta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            SdeModel::OrnsteinUhlenbeck => theta[0] > 0.0,
            SdeModel::BoundedMeanReversion => theta[0] > 0.0 && theta[1] > 0.0,
        }
    }

    /// Maps an estimate to its canonical representative (`θ3 ≥ 0` for OU).
    pub fn canonicalize(self, theta: &mut [f64]) {
        if let SdeModel::OrnsteinUhlenbeck = self {
            if let Some(t3) = theta.get_mut(2) {
                *t3 = t3.abs();
            }
        }
    }

    pub fn drift(self, x: f64, theta: &[f64]) -> f64 {
        match self {
            SdeModel::OrnsteinUhlenbeck => theta[0] * (theta[1] - x),
            SdeModel::BoundedMeanReversion => -2.0 * theta[0] * x,
        }
    }

    /// Volatility `b(x; θ)`. For BMR the argument of the square root is
    /// floored at zero so values on the closed boundary stay real.
    pub fn volatility(self, x: f64, theta: &[f64]) -> f64 {
        match self {
            SdeModel::OrnsteinUhlenbeck => theta[2],
            SdeModel::BoundedMeanReversion => (2.0 * theta[1] * (1.0 - x * x)).max(0.0).sqrt(),
        }
    }

    /// The Milstein correction coefficient `½ b b′`.
    pub fn milstein_correction(self, x: f64, theta: &[f64]) -> f64 {
        match self {
            SdeModel::OrnsteinUhlenbeck => 0.0,
            // b² = 2θ2(1 − x²) so ½ b b′ = ¼ d(b²)/dx = −θ2 x.
            SdeModel::BoundedMeanReversion => -theta[1] * x,
        }
    }

    pub fn coefficients(self, theta: &[f64]) -> GeneratorCoefficients {
        GeneratorCoefficients {
            model: self,
            theta: theta.to_vec(),
        }
    }

    /// `(L(θ) g)(x) = a(x; θ) g′(x) + ½ b(x; θ)² g″(x)`.
    pub fn generator_apply(self, theta: &[f64], g: Jet, x: f64) -> f64 {
        let c = self.coefficients(theta);
        c.c_drift(x) * g.d1 + c.c_diff(x) * g.d2
    }
}

impl fmt::Display for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for SdeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ou" | "ornstein_uhlenbeck" | "ornstein-uhlenbeck" => Ok(SdeModel::OrnsteinUhlenbeck),
            "bmr" | "bounded_mean_reversion" | "bounded-mean-reversion" => {
                Ok(SdeModel::BoundedMeanReversion)
            }
            other => Err(invalid(format!("unknown model '{other}'"))),
        }
    }
}

/// Coefficients of the generator `c_drift(x) d/dx + c_diff(x) d²/dx²` for a
/// fixed parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorCoefficients {
    model: SdeModel,
    theta: Vec<f64>,
}

impl GeneratorCoefficients {
    pub fn c_drift(&self, x: f64) -> f64 {
        self.model.drift(x, &self.theta)
    }

    /// `b(x; θ)² / 2`, computed without the square root.
    pub fn c_diff(&self, x: f64) -> f64 {
        match self.model {
            SdeModel::OrnsteinUhlenbeck => 0.5 * self.theta[2] * self.theta[2],
            SdeModel::BoundedMeanReversion => self.theta[1] * (1.0 - x * x),
        }
    }
}
