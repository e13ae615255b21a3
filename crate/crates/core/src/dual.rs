//! Closed-form rate laws and the undelayed price dynamics.
//!
//! Given link prices `mu` and source prices `nu`, each source computes the
//! relaxed aggregate `ybar` from its demand function and then the per-route
//! rates `x_r = ybar (gamma U'(ybar) / (lambda_r - nu))^p`. Prices follow a
//! projected gradient flow on the dual objective `W`, integrated with
//! explicit Euler.

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::params::AlgorithmParams;
use crate::utility::AlphaFair;

/// Minimum distance kept between source prices and both zero and the
/// cheapest route price.
pub const PRICE_EPSILON: f64 = 1e-9;

/// Default Euler step, seconds.
pub const DEFAULT_DT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceState {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub time: f64,
}

impl PriceState {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Self {
        Self { mu, nu, time: 0.0 }
    }

    /// `mu_j = 0.01` everywhere and `nu_s` halfway to the cheapest route price.
    pub fn default_initial(model: &NetworkModel, params: &AlgorithmParams) -> Self {
        let mu = vec![0.01; model.num_links()];
        let nu = initial_source_prices(model, params, &mu, 0.5);
        Self::new(mu, nu)
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.nu).all(|v| v.is_finite())
    }
}

/// `nu_s = fraction * min over r in s of lambda_r`, or zero when `gamma == 1`.
pub fn initial_source_prices(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &[f64],
    fraction: f64,
) -> Vec<f64> {
    if params.is_unit_gamma() {
        return vec![0.0; model.num_sources()];
    }
    let lambda = aggregate_prices(model, mu);
    model
        .sources()
        .iter()
        .map(|s| fraction * min_route_price(&lambda, &s.routes))
        .collect()
}

/// Rates implied by a price vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    /// Per-route rate.
    pub x: Vec<f64>,
    /// Per-source aggregate variable.
    pub y: Vec<f64>,
    /// Per-source relaxed aggregate `u_s^q`.
    pub ybar: Vec<f64>,
    /// Per-route aggregate price.
    pub lambda: Vec<f64>,
    /// Per-link load.
    pub z: Vec<f64>,
}

/// Constant positive gains `kappa_j`, `kappa_s`.
///
/// The dynamics admit any positive gain function of the current price; only
/// constants are modelled here. A price-dependent gain would replace the
/// lookups in [`step_undelayed`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainFunctions {
    pub link: Vec<f64>,
    pub source: Vec<f64>,
}

impl GainFunctions {
    pub fn uniform(model: &NetworkModel, link: f64, source: f64) -> Self {
        Self {
            link: vec![link; model.num_links()],
            source: vec![source; model.num_sources()],
        }
    }

    fn validate(&self, model: &NetworkModel) -> Result<()> {
        check_len(model.num_links(), self.link.len())?;
        check_len(model.num_sources(), self.source.len())?;
        for &k in self.link.iter().chain(&self.source) {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidValue {
                    what: "gain",
                    value: k,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

pub(crate) fn min_route_price(lambda: &[f64], routes: &[usize]) -> f64 {
    routes
        .iter()
        .map(|&r| lambda[r])
        .fold(f64::INFINITY, f64::min)
}

/// `lambda_r = sum over j in r of mu_j`.
pub fn aggregate_prices(model: &NetworkModel, mu: &[f64]) -> Vec<f64> {
    model
        .routes()
        .iter()
        .map(|r| r.links().map(|j| mu[j]).sum())
        .collect()
}

/// Relaxed aggregate for one source from its route prices and source price.
///
/// `ybar = D((gamma^p sum (lambda_r - nu)^(1-p) + (1-gamma)^p nu^(1-p))^(1/(1-p)))`.
/// With `gamma == 1` the source-price term is absent and `nu` is ignored.
pub fn ybar_from_prices(
    route_prices: &[f64],
    nu: f64,
    params: &AlgorithmParams,
    utility: &AlphaFair,
    source_index: usize,
) -> Result<f64> {
    let p = params.p();
    let gamma = params.gamma();
    let min_lambda = route_prices.iter().copied().fold(f64::INFINITY, f64::min);
    let violation = || Error::PriceDomainViolation {
        source_index,
        min_route_price: min_lambda,
        source_price: nu,
    };
    let nu = if params.is_unit_gamma() { 0.0 } else { nu };
    if !params.is_unit_gamma() && !(nu > 0.0) {
        return Err(violation());
    }
    if !(min_lambda - nu > 0.0) {
        return Err(violation());
    }
    let mut inner: f64 = route_prices
        .iter()
        .map(|&l| (l - nu).powf(1.0 - p))
        .sum::<f64>()
        * gamma.powf(p);
    if !params.is_unit_gamma() {
        inner += (1.0 - gamma).powf(p) * nu.powf(1.0 - p);
    }
    Ok(utility.demand(inner.powf(1.0 / (1.0 - p))))
}

/// Rates for given prices and per-source relaxed aggregates. Shared by the
/// undelayed law (where `ybar` is algebraic) and the delayed one (where it
/// is a state variable). Price domain must already hold.
pub(crate) fn rates_for_ybar(
    model: &NetworkModel,
    params: &AlgorithmParams,
    lambda: &[f64],
    nu: &[f64],
    ybar: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = params.p();
    let gamma = params.gamma();
    let mut x = vec![0.0; model.num_routes()];
    let mut y = vec![0.0; model.num_sources()];
    for (s, src) in model.sources().iter().enumerate() {
        let marginal = src.utility.marginal(ybar[s]);
        for &r in &src.routes {
            x[r] = ybar[s] * (gamma * marginal / (lambda[r] - nu[s])).powf(p);
        }
        y[s] = if params.is_unit_gamma() {
            src.routes.iter().map(|&r| x[r]).sum()
        } else {
            ybar[s] * ((1.0 - gamma) * marginal / nu[s]).powf(p)
        };
    }
    (x, y)
}

pub fn rates_from_prices(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &[f64],
    nu: &[f64],
) -> Result<RateVector> {
    check_len(model.num_links(), mu.len())?;
    check_len(model.num_sources(), nu.len())?;
    params.require_dynamics_range()?;
    let lambda = aggregate_prices(model, mu);
    let mut ybar = Vec::with_capacity(model.num_sources());
    let mut route_prices = Vec::new();
    for (s, src) in model.sources().iter().enumerate() {
        route_prices.clear();
        route_prices.extend(src.routes.iter().map(|&r| lambda[r]));
        ybar.push(ybar_from_prices(
            &route_prices,
            nu[s],
            params,
            &src.utility,
            s,
        )?);
    }
    let nu_eff: Vec<f64> = if params.is_unit_gamma() {
        vec![0.0; nu.len()]
    } else {
        nu.to_vec()
    };
    let (x, y) = rates_for_ybar(model, params, &lambda, &nu_eff, &ybar);
    let z = model.link_loads(&x);
    Ok(RateVector {
        x,
        y,
        ybar,
        lambda,
        z,
    })
}

/// `(b)^+_c`: `b` when `c > 0`, otherwise `max(0, b)`.
pub fn projected(b: f64, c: f64) -> f64 {
    if c > 0.0 {
        b
    } else {
        b.max(0.0)
    }
}

/// Clamps link prices to be nonnegative and each source price into
/// `[eps, min lambda - eps]`. Returns how many source prices were moved.
pub fn clamp_to_domain(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &mut [f64],
    nu: &mut [f64],
) -> Result<usize> {
    for m in mu.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    if params.is_unit_gamma() {
        nu.iter_mut().for_each(|n| *n = 0.0);
        return Ok(0);
    }
    let lambda = aggregate_prices(model, mu);
    let mut clamps = 0;
    for (s, src) in model.sources().iter().enumerate() {
        let hi = min_route_price(&lambda, &src.routes) - PRICE_EPSILON;
        let lo = PRICE_EPSILON;
        if hi <= lo {
            return Err(Error::PriceDomainViolation {
                source_index: s,
                min_route_price: hi + PRICE_EPSILON,
                source_price: nu[s],
            });
        }
        let clamped = nu[s].clamp(lo, hi);
        if clamped != nu[s] {
            clamps += 1;
            nu[s] = clamped;
        }
    }
    Ok(clamps)
}

/// One explicit-Euler step of the undelayed dynamics.
///
/// The projection is applied inside the derivative, then the state is clamped
/// back into the price domain. Returns the new state and the number of
/// source-price clamp events.
pub fn step_undelayed(
    model: &NetworkModel,
    params: &AlgorithmParams,
    gains: &GainFunctions,
    state: &PriceState,
    dt: f64,
) -> Result<(PriceState, usize)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidValue {
            what: "dt",
            value: dt,
        });
    }
    gains.validate(model)?;
    let rates = rates_from_prices(model, params, &state.mu, &state.nu)?;
    let time = state.time + dt;
    let mut mu: Vec<f64> = state
        .mu
        .iter()
        .zip(model.links())
        .enumerate()
        .map(|(j, (&m, link))| m + dt * gains.link[j] * projected(rates.z[j] - link.capacity, m))
        .collect();
    let mut nu = if params.is_unit_gamma() {
        vec![0.0; model.num_sources()]
    } else {
        model
            .sources()
            .iter()
            .enumerate()
            .map(|(s, src)| {
                let total: f64 = src.routes.iter().map(|&r| rates.x[r]).sum();
                state.nu[s] + dt * gains.source[s] * (rates.y[s] - total)
            })
            .collect()
    };
    if !mu.iter().chain(&nu).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { time });
    }
    let clamps = clamp_to_domain(model, params, &mut mu, &mut nu)?;
    Ok((PriceState { mu, nu, time }, clamps))
}

/// Dual objective `W = sum_s [U(ybar) - sum (lambda_r - nu) x_r - nu y] + c . mu`
/// evaluated at the closed-form subproblem maximiser.
pub fn dual_objective(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &[f64],
    nu: &[f64],
) -> Result<f64> {
    let rates = rates_from_prices(model, params, mu, nu)?;
    Ok(dual_objective_from_rates(model, params, mu, nu, &rates))
}

pub(crate) fn dual_objective_from_rates(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &[f64],
    nu: &[f64],
    rates: &RateVector,
) -> f64 {
    let mut w: f64 = model
        .links()
        .iter()
        .zip(mu)
        .map(|(l, m)| l.capacity * m)
        .sum();
    for (s, src) in model.sources().iter().enumerate() {
        let nu_s = if params.is_unit_gamma() { 0.0 } else { nu[s] };
        w += src.utility.value(rates.ybar[s]);
        for &r in &src.routes {
            w -= (rates.lambda[r] - nu_s) * rates.x[r];
        }
        if !params.is_unit_gamma() {
            w -= nu_s * rates.y[s];
        }
    }
    w
}

/// `dW/dmu_j = c_j - z_j` and `dW/dnu_s = sum_{r in s} x_r - y_s`.
pub fn dual_gradient(
    model: &NetworkModel,
    params: &AlgorithmParams,
    mu: &[f64],
    nu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rates = rates_from_prices(model, params, mu, nu)?;
    let d_mu = model
        .links()
        .iter()
        .zip(&rates.z)
        .map(|(l, z)| l.capacity - z)
        .collect();
    let d_nu = model
        .sources()
        .iter()
        .enumerate()
        .map(|(s, src)| {
            if params.is_unit_gamma() {
                0.0
            } else {
                src.routes.iter().map(|&r| rates.x[r]).sum::<f64>() - rates.y[s]
            }
        })
        .collect();
    Ok((d_mu, d_nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{sl1, two_route};

    fn half() -> AlgorithmParams {
        AlgorithmParams::new(2.0, 0.5).unwrap()
    }

    // Symmetric two-route equilibrium, solved by hand:
    // x = (1, 1), y = 2, u = 0.5 (1 + 1) + 0.5 sqrt(2), ybar = u^2,
    // lambda - nu = gamma U'(ybar) sqrt(ybar), nu = (1-gamma) U'(ybar) sqrt(ybar / 2).
    fn two_route_closed_form() -> (f64, f64, f64) {
        let u: f64 = 1.0 + 0.5 * 2f64.sqrt();
        let ybar = u * u;
        let marginal = 1.0 / ybar;
        let gap = 0.5 * marginal * ybar.sqrt();
        let nu = 0.5 * marginal * (ybar / 2.0).sqrt();
        (ybar, nu + gap, nu)
    }

    #[test]
    fn aggregate_price_cases() {
        let m = sl1(0.0);
        assert_eq!(aggregate_prices(&m, &[1.0]), vec![1.0]);
        assert_eq!(aggregate_prices(&m, &[0.0]), vec![0.0]);
        let m = crate::network::NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .link("b", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "s", &["a", "b"])
            .build()
            .unwrap();
        assert!((aggregate_prices(&m, &[0.2, 0.3])[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sl1_ybar_and_rates() {
        let m = sl1(0.0);
        let u = AlphaFair::default();
        assert_eq!(ybar_from_prices(&[1.0], 0.5, &half(), &u, 0).unwrap(), 1.0);
        let r = rates_from_prices(&m, &half(), &[1.0], &[0.5]).unwrap();
        assert_eq!(r.x, vec![1.0]);
        assert_eq!(r.y, vec![1.0]);
        assert_eq!(r.z, vec![1.0]);
    }

    #[test]
    fn unit_gamma_collapses_to_single_term() {
        let u = AlphaFair::default();
        let params = AlgorithmParams::new(2.0, 1.0).unwrap();
        let yb = ybar_from_prices(&[0.7], 0.0, &params, &u, 0).unwrap();
        assert!((yb - u.demand(0.7)).abs() < 1e-14);
        let r = rates_from_prices(&sl1(0.0), &params, &[1.0], &[0.0]).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_route_symmetric_equilibrium() {
        let (ybar, mu, nu) = two_route_closed_form();
        assert!((mu - 0.5).abs() < 1e-12);
        assert!((nu - 0.2071).abs() < 1e-4);
        assert!((ybar - 2.9142).abs() < 1e-3);
        let m = two_route(0.0);
        let r = rates_from_prices(&m, &half(), &[mu, mu], &[nu]).unwrap();
        assert!((r.ybar[0] - ybar).abs() < 1e-3);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3);
        assert!((r.y[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn domain_violations_reported() {
        let u = AlphaFair::default();
        assert!(matches!(
            ybar_from_prices(&[1.0], 1.0, &half(), &u, 0),
            Err(Error::PriceDomainViolation { .. })
        ));
        assert!(matches!(
            ybar_from_prices(&[1.0], 0.0, &half(), &u, 0),
            Err(Error::PriceDomainViolation { .. })
        ));
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let m = sl1(0.0);
        let g = GainFunctions::uniform(&m, 1.0, 1.0);
        let s = PriceState::new(vec![1.0], vec![0.5]);
        let (next, clamps) = step_undelayed(&m, &half(), &g, &s, 0.005).unwrap();
        assert_eq!(next.mu, s.mu);
        assert_eq!(next.nu, s.nu);
        assert_eq!(clamps, 0);
    }

    #[test]
    fn overpriced_link_price_falls() {
        let m = sl1(0.0);
        let g = GainFunctions::uniform(&m, 1.0, 1.0);
        let s = PriceState::new(vec![2.0], vec![0.5]);
        let r = rates_from_prices(&m, &half(), &s.mu, &s.nu).unwrap();
        assert!(r.z[0] < 1.0);
        let (next, _) = step_undelayed(&m, &half(), &g, &s, 0.005).unwrap();
        assert!(next.mu[0] < 2.0);
        let (d_mu, _) = dual_gradient(&m, &half(), &s.mu, &s.nu).unwrap();
        assert!(d_mu[0] > 0.0);
    }

    #[test]
    fn projection_keeps_zero_price_when_underloaded() {
        assert_eq!(projected(-0.3, 0.0), 0.0);
        assert_eq!(projected(0.3, 0.0), 0.3);
        assert_eq!(projected(-0.3, 0.1), -0.3);
        // Two links in series; the second is never the bottleneck.
        let m = crate::network::NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .link("b", 5.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "s", &["a", "b"])
            .build()
            .unwrap();
        let g = GainFunctions::uniform(&m, 1.0, 1.0);
        let s = PriceState::new(vec![1.0, 0.0], vec![0.5]);
        let (next, _) = step_undelayed(&m, &half(), &g, &s, 0.005).unwrap();
        assert_eq!(next.mu[1], 0.0);
    }

    #[test]
    fn dual_objective_sl1() {
        let m = sl1(0.0);
        let w = dual_objective(&m, &half(), &[1.0], &[0.5]).unwrap();
        assert!(w.abs() < 1e-14);
        let (d_mu, d_nu) = dual_gradient(&m, &half(), &[1.0], &[0.5]).unwrap();
        assert!(d_mu[0].abs() < 1e-14 && d_nu[0].abs() < 1e-14);
    }

    #[test]
    fn equilibrium_minimises_dual_on_random_prices() {
        use rand::{Rng, SeedableRng};
        let m = sl1(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mu: f64 = rng.gen_range(0.05..5.0);
            let nu = rng.gen_range(0.01..0.99) * mu;
            let w = dual_objective(&m, &half(), &[mu], &[nu]).unwrap();
            assert!(w >= -1e-12, "W({mu}, {nu}) = {w}");
        }
    }

    #[test]
    fn capacity_scaling_shifts_linear_term() {
        let m = sl1(0.0);
        let doubled = m.with_scaled_capacities(2.0);
        let (mu, nu) = (1.3, 0.4);
        let w1 = dual_objective(&m, &half(), &[mu], &[nu]).unwrap();
        let w2 = dual_objective(&doubled, &half(), &[mu], &[nu]).unwrap();
        assert!((w2 - w1 - 1.0 * mu).abs() < 1e-12);
    }

    #[test]
    fn clamping_keeps_source_price_inside_domain() {
        let m = sl1(0.0);
        let mut mu = vec![1.0];
        let mut nu = vec![1.5];
        assert_eq!(clamp_to_domain(&m, &half(), &mut mu, &mut nu).unwrap(), 1);
        assert!(nu[0] < 1.0);
        let mut nu = vec![-1.0];
        clamp_to_domain(&m, &half(), &mut mu, &mut nu).unwrap();
        assert_eq!(nu[0], PRICE_EPSILON);
    }

    #[test]
    fn non_finite_is_reported() {
        let m = sl1(0.0);
        let g = GainFunctions::uniform(&m, 1e308, 1.0);
        let s = PriceState::new(vec![0.01], vec![0.005]);
        let err = step_undelayed(&m, &half(), &g, &s, 1e10).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }
}
