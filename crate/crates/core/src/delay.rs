//! Delayed price dynamics, the scalable gain scheme and the decentralised
//! local-stability conditions.
//!
//! Links see route rates `T_rj` late, sources see link prices `T_jr` late
//! and their own rates a full round trip `T_r` late. The relaxed aggregate
//! `ybar` becomes a state variable with its own first-order dynamics.
//! Delays must lie on the `dt` grid so every history lookup is exact.

use std::f64::consts::PI;

use crate::dual::{
    aggregate_prices, min_route_price, projected, rates_for_ybar, rates_from_prices, RateVector,
    PRICE_EPSILON,
};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::oracle::PrimalSolution;
use crate::params::{assumption_h_holds, AlgorithmParams};
use crate::utility::AlphaFair;

/// Relative slack above which a link is treated as unloaded at equilibrium.
pub const SLACK_TOLERANCE: f64 = 1e-6;

/// Default oscillation threshold: peak-to-peak load over capacity.
pub const DEFAULT_OSCILLATION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DelayedState {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub ybar: Vec<f64>,
    pub time: f64,
}

impl DelayedState {
    /// Starts `ybar` on its algebraic value at the given prices.
    pub fn from_prices(
        model: &NetworkModel,
        params: &AlgorithmParams,
        mu: Vec<f64>,
        nu: Vec<f64>,
    ) -> Result<Self> {
        let rates = rates_from_prices(model, params, &mu, &nu)?;
        let nu = if params.is_unit_gamma() {
            vec![0.0; nu.len()]
        } else {
            nu
        };
        Ok(Self {
            mu,
            nu,
            ybar: rates.ybar,
            time: 0.0,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mu
            .iter()
            .chain(&self.nu)
            .chain(&self.ybar)
            .all(|v| v.is_finite())
    }
}

/// Per-link, per-source constant gains for the delayed system.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayGains {
    /// `kappa_j`.
    pub link: Vec<f64>,
    /// `kappa_s`.
    pub source: Vec<f64>,
    /// `rho_s`.
    pub rho: Vec<f64>,
}

impl DelayGains {
    pub fn uniform(model: &NetworkModel, link: f64, source: f64, rho: f64) -> Self {
        Self {
            link: vec![link; model.num_links()],
            source: vec![source; model.num_sources()],
            rho: vec![rho; model.num_sources()],
        }
    }

    pub fn validate(&self, model: &NetworkModel) -> Result<()> {
        crate::dual::check_len(model.num_links(), self.link.len())?;
        crate::dual::check_len(model.num_sources(), self.source.len())?;
        crate::dual::check_len(model.num_sources(), self.rho.len())?;
        for &k in self.link.iter().chain(&self.source).chain(&self.rho) {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidValue {
                    what: "delay gain",
                    value: k,
                });
            }
        }
        Ok(())
    }

    /// Multiplies every gain by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|k| k * factor).collect();
        Self {
            link: s(&self.link),
            source: s(&self.source),
            rho: s(&self.rho),
        }
    }
}

#[derive(Debug, Clone)]
struct Ring {
    data: Vec<f64>,
    head: usize,
}

impl Ring {
    fn filled(len: usize, value: f64) -> Self {
        Self {
            data: vec![value; len],
            head: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.head = (self.head + 1) % self.data.len();
        self.data[self.head] = v;
    }

    /// Sample pushed `lag` pushes ago; 0 is the latest.
    fn get(&self, lag: usize) -> f64 {
        let n = self.data.len();
        self.data[(self.head + n - lag % n) % n]
    }
}

#[derive(Debug, Clone)]
struct HopLags {
    link: usize,
    forward: usize,
    backward: usize,
}

/// Past route rates and link prices on the `dt` grid. Lookups before the
/// first sample return the initial value.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dt: f64,
    x: Vec<Ring>,
    mu: Vec<Ring>,
    hops: Vec<Vec<HopLags>>,
    round_trip: Vec<usize>,
    horizon: usize,
}

fn delay_steps(delay: f64, dt: f64) -> Result<usize> {
    let k = (delay / dt).round();
    if (k * dt - delay).abs() > 1e-9 * dt.max(delay) {
        return Err(Error::DelayGridMismatch { delay, dt });
    }
    Ok(k as usize)
}

/// Checks every route delay and hop delay against the `dt` grid.
pub fn validate_delay_grid(model: &NetworkModel, dt: f64) -> Result<()> {
    for r in model.routes() {
        delay_steps(r.round_trip, dt)?;
        for h in &r.hops {
            delay_steps(h.forward, dt)?;
            delay_steps(h.backward, dt)?;
        }
    }
    Ok(())
}

impl HistoryBuffer {
    pub fn new(model: &NetworkModel, dt: f64, initial_x: &[f64], initial_mu: &[f64]) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidValue {
                what: "dt",
                value: dt,
            });
        }
        crate::dual::check_len(model.num_routes(), initial_x.len())?;
        crate::dual::check_len(model.num_links(), initial_mu.len())?;
        let mut hops = Vec::with_capacity(model.num_routes());
        let mut round_trip = Vec::with_capacity(model.num_routes());
        let mut horizon = 0;
        for r in model.routes() {
            let rt = delay_steps(r.round_trip, dt)?;
            horizon = horizon.max(rt);
            round_trip.push(rt);
            let mut lags = Vec::with_capacity(r.hops.len());
            for h in &r.hops {
                let forward = delay_steps(h.forward, dt)?;
                let backward = delay_steps(h.backward, dt)?;
                horizon = horizon.max(forward).max(backward);
                lags.push(HopLags {
                    link: h.link,
                    forward,
                    backward,
                });
            }
            hops.push(lags);
        }
        Ok(Self {
            dt,
            x: initial_x.iter().map(|&v| Ring::filled(horizon + 1, v)).collect(),
            mu: initial_mu.iter().map(|&v| Ring::filled(horizon + 1, v)).collect(),
            hops,
            round_trip,
            horizon,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Longest stored lag, in steps.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `lambda_r(t) = sum mu_j(t - T_jr)` using the latest pushed prices.
    fn delayed_route_prices(&self) -> Vec<f64> {
        self.hops
            .iter()
            .map(|lags| lags.iter().map(|h| self.mu[h.link].get(h.backward)).sum())
            .collect()
    }

    /// `sum over r through j of x_r(t - T_rj)`.
    fn delayed_link_loads(&self, num_links: usize) -> Vec<f64> {
        let mut z = vec![0.0; num_links];
        for (r, lags) in self.hops.iter().enumerate() {
            for h in lags {
                z[h.link] += self.x[r].get(h.forward);
            }
        }
        z
    }

    /// `x_r(t - T_r)`.
    fn round_trip_rate(&self, route: usize) -> f64 {
        self.x[route].get(self.round_trip[route])
    }
}

/// Outcome of one delayed step.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedStep {
    pub state: DelayedState,
    /// Instantaneous rates at the start of the step; `z` holds the delayed
    /// loads actually seen by the links.
    pub rates: RateVector,
    /// Source prices pulled back into the domain.
    pub clamps: usize,
}

/// One explicit-Euler step of the delayed system.
///
/// Pushes `mu(t)` into the history, forms delayed route prices, computes the
/// instantaneous rates, pushes `x(t)`, then advances all three state blocks.
pub fn step_delayed(
    model: &NetworkModel,
    params: &AlgorithmParams,
    gains: &DelayGains,
    state: &DelayedState,
    history: &mut HistoryBuffer,
    dt: f64,
) -> Result<DelayedStep> {
    if (dt - history.dt).abs() > 1e-15 * dt.max(1.0) {
        return Err(Error::InvalidValue {
            what: "dt (differs from history sample period)",
            value: dt,
        });
    }
    params.require_dynamics_range()?;
    gains.validate(model)?;
    let p = params.p();
    let q = params.q();
    let gamma = params.gamma();
    let time = state.time + dt;

    for (ring, &m) in history.mu.iter_mut().zip(&state.mu) {
        ring.push(m);
    }
    let lambda = history.delayed_route_prices();

    let mut nu_now = state.nu.clone();
    let mut clamps = 0;
    if params.is_unit_gamma() {
        nu_now.iter_mut().for_each(|v| *v = 0.0);
    } else {
        for (s, src) in model.sources().iter().enumerate() {
            let hi = min_route_price(&lambda, &src.routes) - PRICE_EPSILON;
            if hi <= PRICE_EPSILON {
                return Err(Error::PriceDomainViolation {
                    source_index: s,
                    min_route_price: hi + PRICE_EPSILON,
                    source_price: nu_now[s],
                });
            }
            let clamped = nu_now[s].clamp(PRICE_EPSILON, hi);
            if clamped != nu_now[s] {
                clamps += 1;
                nu_now[s] = clamped;
            }
        }
    }
    for (r, route) in model.routes().iter().enumerate() {
        let s = route.source;
        if !(lambda[r] - nu_now[s] > 0.0) {
            return Err(Error::PriceDomainViolation {
                source_index: s,
                min_route_price: lambda[r],
                source_price: nu_now[s],
            });
        }
    }

    let (x, y) = rates_for_ybar(model, params, &lambda, &nu_now, &state.ybar);
    for (ring, &v) in history.x.iter_mut().zip(&x) {
        ring.push(v);
    }
    let z = history.delayed_link_loads(model.num_links());

    let mu: Vec<f64> = model
        .links()
        .iter()
        .enumerate()
        .map(|(j, link)| {
            let m = state.mu[j];
            (m + dt * gains.link[j] * m / p * projected(z[j] - link.capacity, m)).max(0.0)
        })
        .collect();
    let mut nu = vec![0.0; model.num_sources()];
    let mut ybar = vec![0.0; model.num_sources()];
    for (s, src) in model.sources().iter().enumerate() {
        let echoed: f64 = src.routes.iter().map(|&r| history.round_trip_rate(r)).sum();
        if !params.is_unit_gamma() {
            let n = nu_now[s];
            nu[s] = n + dt * gains.source[s] * n / p * (y[s] - echoed);
        }
        let powered: f64 = src
            .routes
            .iter()
            .map(|&r| history.round_trip_rate(r).powf(1.0 / q))
            .sum();
        let target = gamma * powered + (1.0 - gamma) * y[s].powf(1.0 / q);
        ybar[s] = state.ybar[s] + dt * q * gains.rho[s] / p * (target - state.ybar[s].powf(1.0 / q));
    }
    if !mu.iter().chain(&nu).chain(&ybar).all(|v| v.is_finite())
        || ybar.iter().any(|&v| v <= 0.0)
    {
        return Err(Error::NonFiniteState { time });
    }
    let rates = RateVector {
        x,
        y,
        ybar: state.ybar.clone(),
        lambda,
        z,
    };
    Ok(DelayedStep {
        state: DelayedState {
            mu,
            nu,
            ybar,
            time,
        },
        rates,
        clamps,
    })
}

/// `a_s = -U''(ybar)/U'(ybar) - 1/(p ybar)`, from the utility derivatives.
pub fn compute_a_s(utility: &AlphaFair, params: &AlgorithmParams, ybar: f64) -> Result<f64> {
    if !(ybar > 0.0 && ybar.is_finite()) {
        return Err(Error::NonPositiveArgument(ybar));
    }
    let a = -utility.curvature(ybar) / utility.marginal(ybar) - 1.0 / (params.p() * ybar);
    if a > 0.0 {
        Ok(a)
    } else {
        Err(Error::AssumptionHViolated {
            source_index: usize::MAX,
            product: utility.alpha * params.p(),
        })
    }
}

/// Alpha-fair shortcut `(alpha p - 1) / (p ybar)`.
pub fn a_s_alpha_fair(alpha: f64, p: f64, ybar: f64) -> f64 {
    (alpha * p - 1.0) / (p * ybar)
}

/// Diagnostic `d/du [u^(q-1) U'(u^q)]`; negative under assumption H.
pub fn b_s(utility: &AlphaFair, params: &AlgorithmParams, u: f64) -> f64 {
    let q = params.q();
    let y = u.powf(q);
    (q - 1.0) * u.powf(q - 2.0) * utility.marginal(y)
        + q * u.powf(2.0 * q - 2.0) * utility.curvature(y)
}

/// Equilibrium point of the price dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub ybar: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Equilibrium {
    /// Builds the equilibrium from an oracle solution, zeroing prices on links
    /// with relative slack above [`SLACK_TOLERANCE`].
    pub fn from_solution(model: &NetworkModel, params: &AlgorithmParams, sol: &PrimalSolution) -> Self {
        let z = model.link_loads(&sol.x);
        let mu: Vec<f64> = sol
            .mu
            .iter()
            .zip(model.links())
            .zip(&z)
            .map(|((&m, l), &z)| {
                if (l.capacity - z) > SLACK_TOLERANCE * l.capacity {
                    0.0
                } else {
                    m
                }
            })
            .collect();
        let nu = if params.is_unit_gamma() {
            vec![0.0; model.num_sources()]
        } else {
            sol.nu.clone()
        };
        Self {
            lambda: aggregate_prices(model, &mu),
            ybar: sol.ybar(params),
            x: sol.x.clone(),
            y: sol.y.clone(),
            mu,
            nu,
        }
    }

    /// Equilibrium implied by converged prices through the closed-form laws.
    pub fn from_prices(model: &NetworkModel, params: &AlgorithmParams, mu: &[f64], nu: &[f64]) -> Result<Self> {
        let r = rates_from_prices(model, params, mu, nu)?;
        Ok(Self {
            mu: mu.to_vec(),
            nu: if params.is_unit_gamma() {
                vec![0.0; nu.len()]
            } else {
                nu.to_vec()
            },
            ybar: r.ybar,
            x: r.x,
            y: r.y,
            lambda: r.lambda,
        })
    }

    /// Initial state offset from the equilibrium: link prices and `ybar`
    /// scaled by `1 + offset`, source prices by `1 - offset`.
    pub fn perturbed_state(&self, offset: f64) -> DelayedState {
        DelayedState {
            mu: self.mu.iter().map(|m| m * (1.0 + offset)).collect(),
            nu: self.nu.iter().map(|n| n * (1.0 - offset)).collect(),
            ybar: self.ybar.iter().map(|v| v * (1.0 + offset)).collect(),
            time: 0.0,
        }
    }

    pub fn state(&self) -> DelayedState {
        self.perturbed_state(0.0)
    }

    /// Largest relative deviation from `x_r / (ybar^(1/p) U') =
    /// gamma x_r^(1/q) / (lambda_r - nu_s)` over all routes.
    pub fn route_identity_residual(&self, model: &NetworkModel, params: &AlgorithmParams) -> f64 {
        let p = params.p();
        let q = params.q();
        model
            .routes()
            .iter()
            .enumerate()
            .map(|(r, route)| {
                let s = route.source;
                let u = model.sources()[s].utility;
                let lhs = self.x[r] / (self.ybar[s].powf(1.0 / p) * u.marginal(self.ybar[s]));
                let rhs = params.gamma() * self.x[r].powf(1.0 / q) / (self.lambda[r] - self.nu[s]);
                ((lhs - rhs) / rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `2/gamma - (1 + (nu + lambda_r)/(lambda_r - nu))` per route; nonnegative
    /// at any equilibrium.
    pub fn route_price_ratio_slack(&self, model: &NetworkModel, params: &AlgorithmParams) -> Vec<f64> {
        model
            .routes()
            .iter()
            .enumerate()
            .map(|(r, route)| {
                let nu = self.nu[route.source];
                let gap = self.lambda[r] - nu;
                2.0 / params.gamma() - (1.0 + nu / gap + self.lambda[r] / gap)
            })
            .collect()
    }

    /// Links with zero price and load at capacity.
    pub fn almost_saturated_links(&self, model: &NetworkModel) -> Vec<usize> {
        let z = model.link_loads(&self.x);
        let mu_scale = self.mu.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        model
            .links()
            .iter()
            .enumerate()
            .filter(|&(j, l)| {
                self.mu[j] <= SLACK_TOLERANCE * mu_scale
                    && (z[j] - l.capacity).abs() <= SLACK_TOLERANCE * l.capacity
            })
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `kappa_j sum x_r T_r / (gamma pi/4)` per link.
    pub link_margins: Vec<f64>,
    /// `kappa_s sum x_r T_r / (gamma pi/4)` per source.
    pub source_margins: Vec<f64>,
    /// `rho_s a_s sum x_r^(1/q) T_r / (pi/4)` per source.
    pub relaxation_margins: Vec<f64>,
    pub almost_saturated: Vec<usize>,
    pub pass: bool,
}

impl StabilityReport {
    pub fn max_margin(&self) -> f64 {
        self.link_margins
            .iter()
            .chain(&self.source_margins)
            .chain(&self.relaxation_margins)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Evaluates the three sufficient local-stability conditions at an
/// equilibrium. Never fails; a non-positive `a_s` yields an infinite margin.
pub fn check_stability_conditions(
    model: &NetworkModel,
    params: &AlgorithmParams,
    gains: &DelayGains,
    eq: &Equilibrium,
) -> StabilityReport {
    let gamma = params.gamma();
    let q = params.q();
    let link_margins: Vec<f64> = (0..model.num_links())
        .map(|j| {
            let load: f64 = model
                .routes_on(j)
                .iter()
                .map(|&r| eq.x[r] * model.routes()[r].round_trip)
                .sum();
            gains.link[j] * load / (gamma * PI / 4.0)
        })
        .collect();
    let mut source_margins = Vec::new();
    let mut relaxation_margins = Vec::new();
    for (s, src) in model.sources().iter().enumerate() {
        let rt = |r: usize| model.routes()[r].round_trip;
        let weighted: f64 = src.routes.iter().map(|&r| eq.x[r] * rt(r)).sum();
        source_margins.push(gains.source[s] * weighted / (gamma * PI / 4.0));
        let powered: f64 = src.routes.iter().map(|&r| eq.x[r].powf(1.0 / q) * rt(r)).sum();
        let margin = match compute_a_s(&src.utility, params, eq.ybar[s]) {
            Ok(a) => gains.rho[s] * a * powered / (PI / 4.0),
            Err(_) => f64::INFINITY,
        };
        relaxation_margins.push(margin);
    }
    let almost_saturated = eq.almost_saturated_links(model);
    let pass = link_margins
        .iter()
        .chain(&source_margins)
        .chain(&relaxation_margins)
        .all(|&m| m < 1.0)
        && almost_saturated.is_empty();
    StabilityReport {
        link_margins,
        source_margins,
        relaxation_margins,
        almost_saturated,
        pass,
    }
}

/// Gains from the scalable scheme: `kappa_s = gamma kappa / (M_s Tbar_s)`,
/// `rho_s = p kappa / ((alpha p - 1) Tbar_s)`, `kappa_j = gamma kappa / (c_j Tbar_j)`.
///
/// `max_rates` defaults to [`NetworkModel::max_source_rate`]. A link without
/// traffic in `estimate` uses the largest round trip through it, and a link no
/// route crosses uses the largest round trip in the network.
pub fn scalable_gains(
    model: &NetworkModel,
    params: &AlgorithmParams,
    estimate: &[f64],
    kappa: f64,
    max_rates: Option<&[f64]>,
) -> Result<DelayGains> {
    if !(kappa > 0.0 && kappa < PI / 4.0) {
        return Err(Error::InvalidValue {
            what: "scalable gain kappa (must lie in (0, pi/4))",
            value: kappa,
        });
    }
    crate::dual::check_len(model.num_routes(), estimate.len())?;
    let gamma = params.gamma();
    let p = params.p();
    let rt = |r: usize| model.routes()[r].round_trip;
    let mut link = Vec::with_capacity(model.num_links());
    for (j, l) in model.links().iter().enumerate() {
        let on = model.routes_on(j);
        let load: f64 = on.iter().map(|&r| estimate[r]).sum();
        let tbar = if load > 0.0 {
            on.iter().map(|&r| estimate[r] * rt(r)).sum::<f64>() / load
        } else if !on.is_empty() {
            on.iter().map(|&r| rt(r)).fold(0.0, f64::max)
        } else {
            // No route crosses the link; its gain never enters the dynamics.
            model.max_round_trip()
        };
        if !(tbar > 0.0) {
            return Err(Error::UnloadedLink(j));
        }
        link.push(gamma * kappa / (l.capacity * tbar));
    }
    let mut source = Vec::with_capacity(model.num_sources());
    let mut rho = Vec::with_capacity(model.num_sources());
    for (s, src) in model.sources().iter().enumerate() {
        if !assumption_h_holds(src.utility.alpha, p) {
            return Err(Error::AssumptionHViolated {
                source_index: s,
                product: src.utility.alpha * p,
            });
        }
        let total: f64 = src.routes.iter().map(|&r| estimate[r]).sum();
        let tbar = src.routes.iter().map(|&r| estimate[r] * rt(r)).sum::<f64>() / total;
        if !(tbar > 0.0 && tbar.is_finite()) {
            return Err(Error::InvalidValue {
                what: "source mean round trip",
                value: tbar,
            });
        }
        let m = match max_rates {
            Some(v) => v[s],
            None => model.max_source_rate(s),
        };
        source.push(gamma * kappa / (m * tbar));
        rho.push(p * kappa / ((src.utility.alpha * p - 1.0) * tbar));
    }
    Ok(DelayGains { link, source, rho })
}

/// Peak-to-peak of each series over its final `fraction` divided by `scale`.
pub fn relative_peak_to_peak(series: &[Vec<f64>], scale: &[f64], fraction: f64) -> Vec<f64> {
    series
        .iter()
        .zip(scale)
        .map(|(v, &c)| {
            let start = ((1.0 - fraction) * v.len() as f64).floor() as usize;
            let tail = &v[start.min(v.len())..];
            let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
            if tail.is_empty() {
                0.0
            } else {
                (hi - lo) / c
            }
        })
        .collect()
}
