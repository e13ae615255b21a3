//! Independent convex-programming reference for the two primal problems.
//!
//! Both the Kelly problem (maximise `sum U_s(y_s)` subject to `Ax <= c`) and
//! the generalised problem (maximise `sum U_s(u_s^q)` with
//! `u_s = gamma sum x_r^(1/q) + (1-gamma) y_s^(1/q)`) are solved by a
//! log-barrier method with damped Newton centring. The solver works on the
//! route rates only and never evaluates the closed-form rate laws used by the
//! dynamics, so agreement between the two is a genuine check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{NetworkBuilder, NetworkModel};
use crate::params::{assumption_h_holds, AlgorithmParams};

/// Default KKT tolerance for the oracle.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

const MAX_NEWTON_ITERATIONS: usize = 1_000_000;
const MAX_BARRIER_WEIGHT: f64 = 1e16;
const BARRIER_GROWTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub objective: f64,
    /// Link multipliers recovered from the barrier, `1 / (t (c_j - z_j))`.
    pub mu: Vec<f64>,
    /// Source multipliers recovered from the source-price stationarity
    /// condition (zero for the Kelly problem and for `gamma == 1`).
    pub nu: Vec<f64>,
    pub newton_iterations: usize,
    /// Largest KKT residual of the returned point (generalised problem) or
    /// the duality-gap bound (Kelly problem).
    pub residual: f64,
}

impl PrimalSolution {
    /// Relaxed aggregates `u_s^q`.
    pub fn ybar(&self, params: &AlgorithmParams) -> Vec<f64> {
        let q = params.q();
        self.u.iter().map(|u| u.powf(q)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KktResidual {
    /// Recovered `eta_s / q = U'(u^q) u^(q-1) = U'(ybar) ybar^(1/p)`.
    pub eta_over_q: Vec<f64>,
    /// Per route `gamma (eta/q) x_r^(-1/p) - (lambda_r - nu_s)`.
    pub route_stationarity: Vec<f64>,
    /// Per source `(1 - gamma)(eta/q) y_s^(-1/p) - nu_s`.
    pub source_stationarity: Vec<f64>,
    /// Per source `u_s - (gamma sum x_r^(1/q) + (1-gamma) y_s^(1/q))`.
    pub aggregate_gap: Vec<f64>,
    /// Per source `y_s - sum x_r`.
    pub flow_balance: Vec<f64>,
    /// Per link `mu_j (z_j - c_j)`.
    pub complementary_slackness: Vec<f64>,
    /// Per link `max(0, z_j - c_j)`.
    pub capacity_violation: Vec<f64>,
    /// Largest violation of `mu >= 0`, `nu >= 0`, `lambda_r > nu_s`.
    pub dual_infeasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.route_stationarity
            .iter()
            .chain(&self.source_stationarity)
            .chain(&self.aggregate_gap)
            .chain(&self.flow_balance)
            .chain(&self.complementary_slackness)
            .chain(&self.capacity_violation)
            .map(|v| v.abs())
            .fold(self.dual_infeasibility, f64::max)
    }
}

/// Residuals of the per-source KKT system plus link complementary slackness.
/// Residuals are reported, never turned into errors.
pub fn kkt_residual(
    model: &NetworkModel,
    params: &AlgorithmParams,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    mu: &[f64],
    nu: &[f64],
) -> KktResidual {
    let p = params.p();
    let q = params.q();
    let gamma = params.gamma();
    let lambda = crate::dual::aggregate_prices(model, mu);
    let z = model.link_loads(x);
    let mut out = KktResidual::default();
    let mut dual_bad: f64 = mu.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max);
    for (s, src) in model.sources().iter().enumerate() {
        let ybar = u[s].powf(q);
        let eta_q = src.utility.marginal(ybar) * ybar.powf(1.0 / p);
        out.eta_over_q.push(eta_q);
        dual_bad = dual_bad.max((-nu[s]).max(0.0));
        let mut sum_pow = 0.0;
        let mut total = 0.0;
        for &r in &src.routes {
            out.route_stationarity
                .push(gamma * eta_q * x[r].powf(-1.0 / p) - (lambda[r] - nu[s]));
            dual_bad = dual_bad.max((nu[s] - lambda[r]).max(0.0));
            sum_pow += x[r].powf(1.0 / q);
            total += x[r];
        }
        out.source_stationarity
            .push((1.0 - gamma) * eta_q * y[s].powf(-1.0 / p) - nu[s]);
        out.aggregate_gap
            .push(u[s] - (gamma * sum_pow + (1.0 - gamma) * y[s].powf(1.0 / q)));
        out.flow_balance.push(y[s] - total);
    }
    for (j, link) in model.links().iter().enumerate() {
        out.complementary_slackness
            .push(mu[j] * (z[j] - link.capacity));
        out.capacity_violation
            .push((z[j] - link.capacity).max(0.0));
    }
    out.dual_infeasibility = dual_bad;
    out
}

/// Concave objective in the route rates.
trait RateObjective {
    fn value(&self, x: &[f64]) -> f64;
    /// Adds `weight * grad` and `weight * hessian` into the buffers.
    fn accumulate(&self, x: &[f64], weight: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>);
}

struct KellyObjective<'a> {
    model: &'a NetworkModel,
}

impl RateObjective for KellyObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.model
            .sources()
            .iter()
            .map(|s| s.utility.value(s.routes.iter().map(|&r| x[r]).sum()))
            .sum()
    }

    fn accumulate(&self, x: &[f64], weight: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        for src in self.model.sources() {
            let y: f64 = src.routes.iter().map(|&r| x[r]).sum();
            let d1 = src.utility.marginal(y);
            let d2 = src.utility.curvature(y);
            for &r in &src.routes {
                grad[r] += weight * d1;
                for &k in &src.routes {
                    hess[(r, k)] += weight * d2;
                }
            }
        }
    }
}

struct GeneralizedObjective<'a> {
    model: &'a NetworkModel,
    params: AlgorithmParams,
}

impl GeneralizedObjective<'_> {
    fn aggregate(&self, x: &[f64], routes: &[usize]) -> (f64, f64) {
        let q = self.params.q();
        let gamma = self.params.gamma();
        let y: f64 = routes.iter().map(|&r| x[r]).sum();
        let u = gamma * routes.iter().map(|&r| x[r].powf(1.0 / q)).sum::<f64>()
            + (1.0 - gamma) * y.powf(1.0 / q);
        (y, u)
    }
}

impl RateObjective for GeneralizedObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let q = self.params.q();
        self.model
            .sources()
            .iter()
            .map(|s| s.utility.value(self.aggregate(x, &s.routes).1.powf(q)))
            .sum()
    }

    fn accumulate(&self, x: &[f64], weight: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        let p = self.params.p();
        let q = self.params.q();
        let gamma = self.params.gamma();
        for src in self.model.sources() {
            let (y, u) = self.aggregate(x, &src.routes);
            let ybar = u.powf(q);
            let m1 = src.utility.marginal(ybar);
            let m2 = src.utility.curvature(ybar);
            // g(u) = U(u^q)
            let g1 = q * u.powf(q - 1.0) * m1;
            let g2 = q * (q - 1.0) * u.powf(q - 2.0) * m1 + q * q * u.powf(2.0 * q - 2.0) * m2;
            let shared = (1.0 - gamma) * y.powf(-1.0 / p);
            let shared2 = -(1.0 - gamma) * y.powf(-1.0 / p - 1.0) / (q * p);
            let du: Vec<f64> = src
                .routes
                .iter()
                .map(|&r| (gamma * x[r].powf(-1.0 / p) + shared) / q)
                .collect();
            for (a, &r) in src.routes.iter().enumerate() {
                grad[r] += weight * g1 * du[a];
                for (b, &k) in src.routes.iter().enumerate() {
                    let mut d2u = shared2;
                    if r == k {
                        d2u -= gamma * x[r].powf(-1.0 / p - 1.0) / (q * p);
                    }
                    hess[(r, k)] += weight * (g2 * du[a] * du[b] + g1 * d2u);
                }
            }
        }
    }
}

struct BarrierPoint {
    x: Vec<f64>,
    t: f64,
    newton_iterations: usize,
}

fn strictly_feasible_start(model: &NetworkModel) -> Vec<f64> {
    model
        .routes()
        .iter()
        .map(|r| {
            r.links()
                .map(|j| model.links()[j].capacity / (2.0 * model.routes_on(j).len() as f64))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn slacks(model: &NetworkModel, x: &[f64]) -> Vec<f64> {
    model
        .link_loads(x)
        .iter()
        .zip(model.links())
        .map(|(z, l)| l.capacity - z)
        .collect()
}

fn barrier_value(obj: &dyn RateObjective, model: &NetworkModel, x: &[f64], t: f64) -> f64 {
    let s = slacks(model, x);
    if x.iter().any(|&v| v <= 0.0) || s.iter().any(|&v| v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    t * obj.value(x) + s.iter().map(|v| v.ln()).sum::<f64>() + x.iter().map(|v| v.ln()).sum::<f64>()
}

/// Damped Newton centring of `t f(x) + sum log(c - Ax) + sum log x`.
fn centre(
    obj: &dyn RateObjective,
    model: &NetworkModel,
    point: &mut BarrierPoint,
    budget: usize,
) -> Result<()> {
    let n = model.num_routes();
    let t = point.t;
    for _ in 0..50 {
        if point.newton_iterations >= budget {
            return Ok(());
        }
        point.newton_iterations += 1;
        let x = &point.x;
        let s = slacks(model, x);
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        obj.accumulate(x, t, &mut grad, &mut hess);
        for (j, _) in model.links().iter().enumerate() {
            let routes = model.routes_on(j);
            for &r in routes {
                grad[r] -= 1.0 / s[j];
                for &k in routes {
                    hess[(r, k)] -= 1.0 / (s[j] * s[j]);
                }
            }
        }
        for r in 0..n {
            grad[r] += 1.0 / x[r];
            hess[(r, r)] -= 1.0 / (x[r] * x[r]);
        }
        let step = solve_positive_definite(-hess, &grad).ok_or(Error::NonConvergence {
            iterations: point.newton_iterations,
            best_residual: f64::INFINITY,
        })?;
        let decrement = grad.dot(&step);
        if !decrement.is_finite() {
            return Err(Error::NonConvergence {
                iterations: point.newton_iterations,
                best_residual: f64::INFINITY,
            });
        }
        if decrement < 1e-18 {
            return Ok(());
        }
        let current = barrier_value(obj, model, x, t);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(v, d)| v + alpha * d).collect();
            let value = barrier_value(obj, model, &trial, t);
            if value.is_finite() {
                // Near the centre the improvement drops below the resolution
                // of the barrier value; accept feasible full steps there.
                let roundoff = 64.0 * f64::EPSILON * current.abs().max(1.0);
                if value >= current + 0.25 * alpha * decrement - roundoff {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(trial) => point.x = trial,
            None => return Ok(()),
        }
        if decrement < 1e-12 {
            return Ok(());
        }
    }
    Ok(())
}

/// Cholesky solve with a growing diagonal shift for nearly singular systems,
/// e.g. several routes sharing exactly the same links.
fn solve_positive_definite(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    while shift < scale {
        let shifted = &m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(rhs));
        }
        shift *= 10.0;
    }
    None
}

/// Newton iterations on the KKT system with the links that look binding
/// held at capacity. Barrier iterates lose accuracy as the weight grows;
/// this recovers full precision once the active set is identified.
fn polish_active_set(
    obj: &GeneralizedObjective,
    model: &NetworkModel,
    x0: &[f64],
    mu0: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = model.num_routes();
    let s0 = slacks(model, x0);
    let mu_max = mu0.iter().copied().fold(0.0, f64::max);
    let binding: Vec<usize> = (0..model.num_links())
        .filter(|&j| mu0[j] / mu_max > s0[j] / model.links()[j].capacity)
        .collect();
    // Links carrying exactly the same routes with the same capacity give
    // identical constraint rows; keep one and share its price afterwards.
    let mut active: Vec<usize> = Vec::new();
    let mut twins: Vec<Vec<usize>> = Vec::new();
    for &j in &binding {
        let same = active.iter().position(|&k| {
            model.routes_on(k) == model.routes_on(j)
                && model.links()[k].capacity == model.links()[j].capacity
        });
        match same {
            Some(a) => twins[a].push(j),
            None => {
                active.push(j);
                twins.push(vec![j]);
            }
        }
    }
    let m = active.len();
    let mut x = x0.to_vec();
    let mut mu_a: Vec<f64> = active.iter().map(|&j| mu0[j]).collect();
    for _ in 0..20 {
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        obj.accumulate(&x, 1.0, &mut grad, &mut hess);
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        for r in 0..n {
            rhs[r] = -grad[r];
        }
        let z = model.link_loads(&x);
        for (a, &j) in active.iter().enumerate() {
            for &r in model.routes_on(j) {
                kkt[(r, n + a)] = -1.0;
                kkt[(n + a, r)] = 1.0;
                rhs[r] += mu_a[a];
            }
            rhs[n + a] = model.links()[j].capacity - z[j];
        }
        let step = kkt.lu().solve(&rhs)?;
        let mut alpha = 1.0;
        while x.iter().enumerate().any(|(r, v)| v + alpha * step[r] <= 0.0) {
            alpha *= 0.5;
            if alpha < 1e-8 {
                return None;
            }
        }
        for r in 0..n {
            x[r] += alpha * step[r];
        }
        for a in 0..m {
            mu_a[a] += alpha * step[n + a];
        }
        if step.iter().all(|d| d.is_finite()) && step.amax() < 1e-15 * (1.0 + x.iter().copied().fold(0.0, f64::max)) {
            break;
        }
    }
    if mu_a.iter().any(|&v| !(v > 0.0)) || x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let s = slacks(model, &x);
    let mut mu = vec![0.0; model.num_links()];
    for (a, group) in twins.iter().enumerate() {
        for &j in group {
            mu[j] = mu_a[a] / group.len() as f64;
        }
    }
    for j in 0..model.num_links() {
        if !binding.contains(&j) && s[j] <= 0.0 {
            return None;
        }
    }
    Some((x, mu))
}

fn recover_multipliers(model: &NetworkModel, x: &[f64], t: f64) -> Vec<f64> {
    slacks(model, x).iter().map(|s| 1.0 / (t * s)).collect()
}

fn validate_tolerance(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue {
            what: "solver tolerance",
            value: tol,
        })
    }
}

/// Generalised multi-path problem. Returns the best iterate along the barrier
/// path, so tightening `tol` never increases the reported residual.
pub fn solve_generalized_primal(
    model: &NetworkModel,
    params: &AlgorithmParams,
    tol: f64,
) -> Result<PrimalSolution> {
    validate_tolerance(tol)?;
    params.require_dynamics_range()?;
    for (s, src) in model.sources().iter().enumerate() {
        if !assumption_h_holds(src.utility.alpha, params.p()) {
            return Err(Error::AssumptionHViolated {
                source_index: s,
                product: src.utility.alpha * params.p(),
            });
        }
    }
    let obj = GeneralizedObjective {
        model,
        params: *params,
    };
    let q = params.q();
    let p = params.p();
    let gamma = params.gamma();
    let mut point = BarrierPoint {
        x: strictly_feasible_start(model),
        t: 1.0,
        newton_iterations: 0,
    };
    let candidate = |x: Vec<f64>, mu: Vec<f64>, iterations: usize| {
        let y = model.source_totals(&x);
        let u: Vec<f64> = model
            .sources()
            .iter()
            .map(|s| obj.aggregate(&x, &s.routes).1)
            .collect();
        let nu: Vec<f64> = model
            .sources()
            .iter()
            .enumerate()
            .map(|(s, src)| {
                let ybar = u[s].powf(q);
                let eta_q = src.utility.marginal(ybar) * ybar.powf(1.0 / p);
                (1.0 - gamma) * eta_q * y[s].powf(-1.0 / p)
            })
            .collect();
        let residual = kkt_residual(model, params, &x, &y, &u, &mu, &nu).max();
        PrimalSolution {
            objective: obj.value(&x),
            x,
            y,
            u,
            mu,
            nu,
            newton_iterations: iterations,
            residual,
        }
    };
    let mut best: Option<PrimalSolution> = None;
    loop {
        centre(&obj, model, &mut point, MAX_NEWTON_ITERATIONS)?;
        let mu = recover_multipliers(model, &point.x, point.t);
        let mut found = vec![candidate(point.x.clone(), mu.clone(), point.newton_iterations)];
        if let Some((x, mu)) = polish_active_set(&obj, model, &point.x, &mu) {
            found.push(candidate(x, mu, point.newton_iterations));
        }
        for c in found {
            if best.as_ref().map_or(true, |b| c.residual < b.residual) {
                best = Some(c);
            }
        }
        let best_residual = best.as_ref().map_or(f64::INFINITY, |b| b.residual);
        if best_residual < tol {
            let mut sol = best.expect("set above");
            sol.newton_iterations = point.newton_iterations;
            return Ok(sol);
        }
        if point.t >= MAX_BARRIER_WEIGHT || point.newton_iterations >= MAX_NEWTON_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations: point.newton_iterations,
                best_residual,
            });
        }
        point.t *= BARRIER_GROWTH;
    }
}

/// Classical Kelly problem. The optimal value is certified to within `tol`
/// by the barrier duality-gap bound; the rate split is any optimal one.
pub fn solve_kelly_primal(
    model: &NetworkModel,
    params: &AlgorithmParams,
    tol: f64,
) -> Result<PrimalSolution> {
    validate_tolerance(tol)?;
    let obj = KellyObjective { model };
    let barrier_terms = (model.num_links() + model.num_routes()) as f64;
    let mut point = BarrierPoint {
        x: strictly_feasible_start(model),
        t: 1.0,
        newton_iterations: 0,
    };
    loop {
        centre(&obj, model, &mut point, MAX_NEWTON_ITERATIONS)?;
        let gap = barrier_terms / point.t;
        if gap < tol {
            let x = point.x.clone();
            let y = model.source_totals(&x);
            let q = params.q();
            return Ok(PrimalSolution {
                objective: obj.value(&x),
                u: y.iter().map(|v| v.powf(1.0 / q)).collect(),
                mu: recover_multipliers(model, &x, point.t),
                nu: vec![0.0; model.num_sources()],
                x,
                y,
                newton_iterations: point.newton_iterations,
                residual: gap,
            });
        }
        if point.t >= MAX_BARRIER_WEIGHT || point.newton_iterations >= MAX_NEWTON_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations: point.newton_iterations,
                best_residual: gap,
            });
        }
        point.t *= BARRIER_GROWTH;
    }
}

/// `e_gamma = (1 + gamma (n^(1/p) - 1))^q` for a source with `n` routes.
pub fn approx_error_factor(gamma: f64, p: f64, route_count: usize) -> f64 {
    let q = p / (p - 1.0);
    (1.0 + gamma * ((route_count as f64).powf(1.0 / p) - 1.0)).powf(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxBound {
    pub e_gamma: Vec<f64>,
    /// `sum U_s(y_s)` at the generalised optimum.
    pub lower: f64,
    /// `sum U_s(e_gamma y_s)` at the generalised optimum.
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub bound: ApproxBound,
    /// Optimal value of the Kelly problem.
    pub kelly_value: f64,
    /// `kelly_value - lower`; nonnegative when the first inequality holds.
    pub lower_slack: f64,
    /// `upper - kelly_value`; nonnegative when the second inequality holds.
    pub upper_slack: f64,
    pub pass: bool,
}

/// Checks `sum U(y') >= sum U(y)` and `sum U(e_gamma y) >= sum U(y')`, where
/// `y'` solves the Kelly problem and `y` the generalised one.
pub fn verify_lemma1(
    model: &NetworkModel,
    params: &AlgorithmParams,
    tol: f64,
) -> Result<Lemma1Report> {
    let inner_tol = (tol * 1e-2).max(1e-12);
    let generalized = solve_generalized_primal(model, params, inner_tol)?;
    let kelly = solve_kelly_primal(model, params, inner_tol)?;
    let e_gamma: Vec<f64> = model
        .sources()
        .iter()
        .map(|s| approx_error_factor(params.gamma(), params.p(), s.routes.len()))
        .collect();
    let lower: f64 = model
        .sources()
        .iter()
        .zip(&generalized.y)
        .map(|(s, &y)| s.utility.value(y))
        .sum();
    let upper: f64 = model
        .sources()
        .iter()
        .zip(&generalized.y)
        .zip(&e_gamma)
        .map(|((s, &y), &e)| s.utility.value(e * y))
        .sum();
    let lower_slack = kelly.objective - lower;
    let upper_slack = upper - kelly.objective;
    Ok(Lemma1Report {
        bound: ApproxBound {
            e_gamma,
            lower,
            upper,
        },
        kelly_value: kelly.objective,
        lower_slack,
        upper_slack,
        pass: lower_slack >= -tol && upper_slack >= -tol,
    })
}

/// Parameters a random instance was drawn with, kept for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstance {
    pub seed: u64,
    pub model: NetworkModel,
    pub params: AlgorithmParams,
    pub description: String,
}

/// Seeded random topology: up to four links, one to three sources, up to three
/// routes per source, capacities in `[0.5, 2]`, delays on a 1 ms grid.
pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links = rng.gen_range(1..=4usize);
    let sources = rng.gen_range(1..=3usize);
    let gamma = (rng.gen_range(0.1..=1.0f64) * 100.0).round() / 100.0;
    let params = AlgorithmParams::new(2.0, gamma).expect("gamma in range");
    let mut b = NetworkBuilder::new();
    let mut description = format!("seed={seed} gamma={gamma} p=2");
    for j in 0..links {
        let c = (rng.gen_range(0.5..=2.0f64) * 1000.0).round() / 1000.0;
        let d = rng.gen_range(1..=5u32) as f64 * 1e-3;
        b.add_link(&format!("l{j}"), c, d);
        description.push_str(&format!(" l{j}=({c},{d})"));
    }
    for s in 0..sources {
        let alpha = [0.75, 1.0, 2.0][rng.gen_range(0..3)];
        let weight = (rng.gen_range(0.5..=2.0f64) * 100.0).round() / 100.0;
        b.add_source(&format!("s{s}"), weight, alpha);
        description.push_str(&format!(" s{s}=(w={weight},a={alpha})"));
        let n_routes = rng.gen_range(1..=3usize);
        for k in 0..n_routes {
            let mut path: Vec<String> = (0..links)
                .filter(|_| rng.gen_bool(0.4))
                .map(|j| format!("l{j}"))
                .collect();
            if path.is_empty() {
                path.push(format!("l{}", rng.gen_range(0..links)));
            }
            description.push_str(&format!(" s{s}r{k}={}", path.join("+")));
            b.add_route(&format!("s{s}r{k}"), &format!("s{s}"), path);
        }
    }
    RandomInstance {
        seed,
        model: b.build().expect("generator produces valid topologies"),
        params,
        description,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{sl1, two_route};

    fn half() -> AlgorithmParams {
        AlgorithmParams::new(2.0, 0.5).unwrap()
    }

    #[test]
    fn sl1_generalized() {
        let sol = solve_generalized_primal(&sl1(0.0), &half(), 1e-6).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.y[0] - 1.0).abs() < 1e-6);
        assert!((sol.u[0] - 1.0).abs() < 1e-6);
        assert!((sol.mu[0] - 1.0).abs() < 1e-5);
        assert!((sol.nu[0] - 0.5).abs() < 1e-5);
        assert!(sol.residual < 1e-6);
    }

    #[test]
    fn two_route_generalized() {
        let sol = solve_generalized_primal(&two_route(0.0), &half(), 1e-8).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-3 && (sol.x[1] - 1.0).abs() < 1e-3);
        assert!((sol.y[0] - 2.0).abs() < 1e-3);
        assert!((sol.ybar(&half())[0] - 2.9142).abs() < 1e-3);
    }

    #[test]
    fn tighter_tolerance_never_worse() {
        for m in [sl1(0.0), two_route(0.0), crate::presets::asymmetric(0.0)] {
            let loose = solve_generalized_primal(&m, &half(), 1e-6).unwrap();
            let tight = solve_generalized_primal(&m, &half(), 1e-7).unwrap();
            assert!(tight.residual <= loose.residual);
        }
    }

    #[test]
    fn kelly_values() {
        let sol = solve_kelly_primal(&sl1(0.0), &half(), 1e-8).unwrap();
        assert!(sol.objective.abs() < 1e-7);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);

        let sol = solve_kelly_primal(&two_route(0.0), &half(), 1e-8).unwrap();
        assert!((sol.objective - 2f64.ln()).abs() < 1e-7);

        // Two routes through one shared unit link: value unique, split not.
        let shared = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r1", "s", &["a"])
            .route("r2", "s", &["a"])
            .build()
            .unwrap();
        let sol = solve_kelly_primal(&shared, &half(), 1e-8).unwrap();
        assert!(sol.objective.abs() < 1e-7);
    }

    #[test]
    fn kkt_at_closed_form_point() {
        let m = sl1(0.0);
        let k = kkt_residual(&m, &half(), &[1.0], &[1.0], &[1.0], &[1.0], &[0.5]);
        assert!(k.max() < 1e-10);
        assert!((k.eta_over_q[0] - 1.0).abs() < 1e-15);
        let k = kkt_residual(&m, &half(), &[1.0], &[1.0], &[1.0], &[1.1], &[0.5]);
        assert!(k.route_stationarity[0].abs() >= 0.09);
    }

    #[test]
    fn error_factor_endpoints() {
        assert_eq!(approx_error_factor(0.0, 2.0, 5), 1.0);
        assert!((approx_error_factor(1.0, 2.0, 2) - 2.0).abs() < 1e-14);
        assert!((approx_error_factor(1.0, 3.0, 4) - 4f64.powf(0.5)).abs() < 1e-12);
        let expected = (1.0 + 0.5 * (2f64.sqrt() - 1.0)).powi(2);
        assert!((approx_error_factor(0.5, 2.0, 2) - expected).abs() < 1e-15);
        assert!((expected - 1.4571).abs() < 1e-4);
    }

    #[test]
    fn lemma1_tight_for_single_route() {
        let r = verify_lemma1(&sl1(0.0), &half(), 1e-6).unwrap();
        assert!(r.pass);
        assert_eq!(r.bound.e_gamma, vec![1.0]);
        assert!((r.bound.lower - r.bound.upper).abs() < 1e-12);
        assert!(r.lower_slack.abs() < 1e-6);
    }

    #[test]
    fn lemma1_two_route() {
        let r = verify_lemma1(&two_route(0.0), &half(), 1e-6).unwrap();
        assert!(r.pass);
        assert!((r.bound.lower - 2f64.ln()).abs() < 1e-6);
        assert!((r.kelly_value - 2f64.ln()).abs() < 1e-6);
        assert!(r.bound.upper > 2f64.ln());
    }

    #[test]
    fn rejects_assumption_h_violation() {
        let m = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .source("s", 1.0, 0.4)
            .route("r", "s", &["a"])
            .build()
            .unwrap();
        assert!(matches!(
            solve_generalized_primal(&m, &half(), 1e-6),
            Err(Error::AssumptionHViolated { .. })
        ));
    }

    #[test]
    fn random_instances_are_reproducible() {
        let a = random_instance(11);
        let b = random_instance(11);
        assert_eq!(a.description, b.description);
        assert!(a.model.num_links() <= 4);
        for s in a.model.sources() {
            assert!(s.routes.len() <= 3);
        }
    }
}
