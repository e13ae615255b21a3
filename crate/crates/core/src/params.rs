use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// Exponent `p` and blending weight `gamma`. The conjugate exponent `q` is
/// always derived from `p` so that `1/p + 1/q = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmParams {
    p: f64,
    gamma: f64,
}

impl AlgorithmParams {
    pub fn new(p: f64, gamma: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidValue {
                what: "exponent p",
                value: p,
            });
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidValue {
                what: "gamma",
                value: gamma,
            });
        }
        Ok(Self { p, gamma })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.p, gamma)
    }

    /// Source prices are pinned to zero when `gamma == 1`.
    pub fn is_unit_gamma(&self) -> bool {
        self.gamma == 1.0
    }

    /// Dynamics need `gamma` in `(0, 1]`; at zero every route rate vanishes.
    pub fn require_dynamics_range(&self) -> Result<()> {
        if self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidValue {
                what: "gamma (dynamics require gamma > 0)",
                value: self.gamma,
            })
        }
    }
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self { p: 2.0, gamma: 0.5 }
    }
}

/// `true` for source `s` iff `alpha_s * p > 1`, which makes
/// `u^(q-1) U'(u^q)` strictly decreasing for alpha-fair utilities.
pub fn check_assumption_h(model: &NetworkModel, params: &AlgorithmParams) -> Vec<bool> {
    model
        .sources()
        .iter()
        .map(|s| assumption_h_holds(s.utility.alpha, params.p()))
        .collect()
}

pub fn assumption_h_holds(alpha: f64, p: f64) -> bool {
    alpha * p > 1.0
}
