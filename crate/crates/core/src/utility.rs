//! Weighted alpha-fair utilities and their demand functions.
//!
//! `U(y) = w y^(1-a) / (1-a)` for `a != 1` and `U(y) = w log y` for `a == 1`.
//! The demand function is the inverse of the marginal utility,
//! `D(l) = (w / l)^(1/a)`.

use crate::error::{Error, Result};

/// Per-source utility parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFair {
    pub weight: f64,
    pub alpha: f64,
}

impl Default for AlphaFair {
    fn default() -> Self {
        Self {
            weight: 1.0,
            alpha: 1.0,
        }
    }
}

impl AlphaFair {
    pub fn new(weight: f64, alpha: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidValue {
                what: "utility weight",
                value: weight,
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidValue {
                what: "fairness alpha",
                value: alpha,
            });
        }
        Ok(Self { weight, alpha })
    }

    fn is_log(&self) -> bool {
        self.alpha == 1.0
    }

    pub fn value(&self, y: f64) -> f64 {
        if self.is_log() {
            self.weight * y.ln()
        } else {
            self.weight * y.powf(1.0 - self.alpha) / (1.0 - self.alpha)
        }
    }

    /// `U'(y) = w y^-a`.
    pub fn marginal(&self, y: f64) -> f64 {
        if self.is_log() {
            self.weight / y
        } else {
            self.weight * y.powf(-self.alpha)
        }
    }

    /// `U''(y) = -a w y^(-a-1)`.
    pub fn curvature(&self, y: f64) -> f64 {
        -self.alpha * self.weight * y.powf(-self.alpha - 1.0)
    }

    pub fn demand(&self, price: f64) -> f64 {
        if self.is_log() {
            self.weight / price
        } else {
            (self.weight / price).powf(1.0 / self.alpha)
        }
    }
}

fn positive(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonPositiveArgument(v))
    }
}

pub fn utility(y: f64, weight: f64, alpha: f64) -> Result<f64> {
    let y = positive(y)?;
    Ok(AlphaFair::new(weight, alpha)?.value(y))
}

pub fn utility_prime(y: f64, weight: f64, alpha: f64) -> Result<f64> {
    let y = positive(y)?;
    Ok(AlphaFair::new(weight, alpha)?.marginal(y))
}

pub fn demand(price: f64, weight: f64, alpha: f64) -> Result<f64> {
    let price = positive(price)?;
    Ok(AlphaFair::new(weight, alpha)?.demand(price))
}
