//! Fluid-model simulator and analysis toolkit for multi-path dual congestion
//! control.
//!
//! * [`network`], [`utility`], [`params`]: topologies, alpha-fair utilities
//!   and algorithm parameters.
//! * [`dual`]: closed-form rate laws and undelayed price dynamics.
//! * [`delay`]: the delayed system, scalable gains and the decentralised
//!   stability conditions.
//! * [`oracle`]: independent convex solver, KKT certificates and the
//!   approximation-error sandwich.
//! * [`linear`]: linearisation, return ratio and Nyquist checks.
//! * [`sim`]: scenarios, runs, sweeps and reports.

pub mod delay;
pub mod dual;
pub mod error;
pub mod linear;
pub mod network;
pub mod oracle;
pub mod params;
pub mod presets;
pub mod scenario;
pub mod sim;
pub mod utility;

pub use delay::{DelayGains, DelayedState, Equilibrium, HistoryBuffer, StabilityReport};
pub use dual::{GainFunctions, PriceState, RateVector};
pub use error::{Error, Result};
pub use network::{Link, NetworkBuilder, NetworkModel, Route, Source};
pub use oracle::{KktResidual, PrimalSolution};
pub use params::AlgorithmParams;
pub use utility::AlphaFair;
