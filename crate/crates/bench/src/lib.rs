//! Shared fixtures for the criterion benches.

use mpdual::scenario::{bundled_scenario, Scenario};
use mpdual::sim::{delay_gains, scenario_equilibrium};
use mpdual::{DelayGains, Equilibrium};

pub struct Fixture {
    pub scenario: Scenario,
    pub equilibrium: Equilibrium,
    pub gains: DelayGains,
}

/// Bundled scenario with its oracle equilibrium and delayed-system gains.
pub fn fixture(name: &str) -> Fixture {
    let scenario = bundled_scenario(name)
        .expect("bundled scenario")
        .expect("valid scenario");
    let equilibrium = scenario_equilibrium(&scenario).expect("oracle converges");
    let gains = delay_gains(&scenario, Some(&equilibrium)).expect("gains");
    Fixture {
        scenario,
        equilibrium,
        gains,
    }
}
