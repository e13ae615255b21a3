//! Linearisation of the delayed system and the return-ratio Nyquist test.
//!
//! State perturbations are ordered `[ybar_1..ybar_S, nu_1..nu_S, mu_1..mu_J]`.
//! The return ratio `G(i theta)` maps them to themselves around the loop;
//! local stability follows when no eigenvalue locus of `G` crosses the
//! real axis at or left of `-1`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use crate::delay::{compute_a_s, DelayGains, Equilibrium};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::params::AlgorithmParams;

pub type C64 = Complex<f64>;

/// Coefficients of the delayed system linearised about an equilibrium.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub model: NetworkModel,
    pub params: AlgorithmParams,
    pub gains: DelayGains,
    pub equilibrium: Equilibrium,
    /// `-U''/U' - 1/(p ybar)` per source.
    pub a: Vec<f64>,
    /// `rho_s ybar_s^(-1/p) / p` per source.
    pub sigma: Vec<f64>,
    /// `1 / (lambda_r - nu_s)` per route.
    pub inv_gap: Vec<f64>,
    /// `kappa_j mu_j / p` per link.
    pub link_coeff: Vec<f64>,
    /// `kappa_s nu_s / p` per source.
    pub source_coeff: Vec<f64>,
    /// `rho_s / p` per source.
    pub relax_coeff: Vec<f64>,
}

pub fn linearize(
    model: &NetworkModel,
    params: &AlgorithmParams,
    gains: &DelayGains,
    eq: &Equilibrium,
) -> Result<LinearizedModel> {
    gains.validate(model)?;
    if let Some(&j) = eq.almost_saturated_links(model).first() {
        return Err(Error::AlmostSaturatedLink(j));
    }
    let p = params.p();
    let mut a = Vec::with_capacity(model.num_sources());
    for (s, src) in model.sources().iter().enumerate() {
        a.push(compute_a_s(&src.utility, params, eq.ybar[s]).map_err(|_| {
            Error::AssumptionHViolated {
                source_index: s,
                product: src.utility.alpha * p,
            }
        })?);
    }
    let sigma = (0..model.num_sources())
        .map(|s| gains.rho[s] * eq.ybar[s].powf(-1.0 / p) / p)
        .collect();
    let inv_gap = model
        .routes()
        .iter()
        .enumerate()
        .map(|(r, route)| 1.0 / (eq.lambda[r] - eq.nu[route.source]))
        .collect();
    Ok(LinearizedModel {
        model: model.clone(),
        params: *params,
        gains: gains.clone(),
        equilibrium: eq.clone(),
        a,
        sigma,
        inv_gap,
        link_coeff: (0..model.num_links())
            .map(|j| gains.link[j] * eq.mu[j] / p)
            .collect(),
        source_coeff: (0..model.num_sources())
            .map(|s| gains.source[s] * eq.nu[s] / p)
            .collect(),
        relax_coeff: gains.rho.iter().map(|r| r / p).collect(),
    })
}

impl LinearizedModel {
    pub fn dimension(&self) -> usize {
        2 * self.model.num_sources() + self.model.num_links()
    }

    fn delay_phase(omega: C64, delay: f64) -> C64 {
        (-omega * delay).exp()
    }
}

/// `G(i theta)`, assembled entry by entry. `theta` must be nonzero.
pub fn return_ratio(lin: &LinearizedModel, theta: f64) -> DMatrix<C64> {
    let m = &lin.model;
    let eq = &lin.equilibrium;
    let gamma = lin.params.gamma();
    let q = lin.params.q();
    let ns = m.num_sources();
    let n = lin.dimension();
    let omega = C64::new(0.0, theta);
    let mut g = DMatrix::<C64>::zeros(n, n);
    for (s, src) in m.sources().iter().enumerate() {
        let rho = lin.gains.rho[s];
        let a = lin.a[s];
        let kappa_s = lin.gains.source[s];
        let nu = eq.nu[s];
        let y_pow = eq.y[s].powf(1.0 / q);
        let relax = C64::from(rho) / (omega + lin.sigma[s]);
        let mut diag = C64::from((1.0 - gamma) * y_pow);
        let mut cross = if lin.params.is_unit_gamma() {
            C64::from(0.0)
        } else {
            C64::from((1.0 - gamma) * y_pow / nu)
        };
        let mut echo = C64::from(0.0);
        let mut echo_gap = C64::from(0.0);
        for &r in &src.routes {
            let route = &m.routes()[r];
            let x = eq.x[r];
            let xw = gamma * x.powf(1.0 / q);
            let rt = LinearizedModel::delay_phase(omega, route.round_trip);
            diag += xw * rt;
            cross -= xw * lin.inv_gap[r] * rt;
            echo += x * rt;
            echo_gap += x * lin.inv_gap[r] * rt;
            for hop in &route.hops {
                let j = hop.link;
                let back = LinearizedModel::delay_phase(omega, route.round_trip + hop.backward);
                g[(s, 2 * ns + j)] += relax * xw * lin.inv_gap[r] * back;
                g[(ns + s, 2 * ns + j)] -= kappa_s * nu / omega * x * lin.inv_gap[r] * back;

                let kappa_mu = lin.gains.link[j] * eq.mu[j];
                let fwd = LinearizedModel::delay_phase(omega, hop.forward);
                g[(2 * ns + j, s)] += kappa_mu * a / omega * x * fwd;
                g[(2 * ns + j, ns + s)] -= kappa_mu / omega * x * lin.inv_gap[r] * fwd;
                for other in &route.hops {
                    let loop_phase =
                        LinearizedModel::delay_phase(omega, hop.forward + other.backward);
                    g[(2 * ns + j, 2 * ns + other.link)] +=
                        kappa_mu / omega * x * lin.inv_gap[r] * loop_phase;
                }
            }
        }
        g[(s, s)] = relax * a * diag;
        g[(s, ns + s)] = relax * cross;
        g[(ns + s, s)] = kappa_s * a * nu / omega * (eq.y[s] - echo);
        g[(ns + s, ns + s)] = if lin.params.is_unit_gamma() {
            C64::from(0.0)
        } else {
            kappa_s * nu / omega * (eq.y[s] / nu + echo_gap)
        };
    }
    g
}

/// `R(omega)`, `R x (2S+J)`.
fn r_matrix(lin: &LinearizedModel, omega: C64) -> DMatrix<C64> {
    let m = &lin.model;
    let eq = &lin.equilibrium;
    let ns = m.num_sources();
    let q = lin.params.q();
    let gamma = lin.params.gamma();
    let mut r_mat = DMatrix::<C64>::zeros(m.num_routes(), lin.dimension());
    for (r, route) in m.routes().iter().enumerate() {
        let s = route.source;
        let x = eq.x[r];
        let t = route.round_trip;
        r_mat[(r, s)] = C64::from((gamma * x.powf(1.0 / q) * t * lin.gains.rho[s] * lin.a[s]).sqrt());
        let base = x * t * lin.inv_gap[r];
        r_mat[(r, ns + s)] = C64::from(-(base * lin.gains.source[s] * eq.nu[s]).sqrt());
        for hop in &route.hops {
            let j = hop.link;
            r_mat[(r, 2 * ns + j)] = (base * lin.gains.link[j] * eq.mu[j]).sqrt()
                * LinearizedModel::delay_phase(omega, hop.backward);
        }
    }
    r_mat
}

/// `Gbar(omega)`: the part of `G` that does not pass through a route delay.
fn g_bar(lin: &LinearizedModel, omega: C64) -> DMatrix<C64> {
    let m = &lin.model;
    let eq = &lin.equilibrium;
    let ns = m.num_sources();
    let q = lin.params.q();
    let gamma = lin.params.gamma();
    let mut g = DMatrix::<C64>::zeros(lin.dimension(), lin.dimension());
    if lin.params.is_unit_gamma() {
        return g;
    }
    for s in 0..ns {
        let y_pow = eq.y[s].powf(1.0 / q);
        let relax = C64::from(lin.gains.rho[s]) / (omega + lin.sigma[s]);
        g[(s, s)] = relax * lin.a[s] * (1.0 - gamma) * y_pow;
        g[(s, ns + s)] = relax * (1.0 - gamma) * y_pow / eq.nu[s];
        g[(ns + s, s)] = lin.gains.source[s] * eq.nu[s] * lin.a[s] / omega * eq.y[s];
        g[(ns + s, ns + s)] = lin.gains.source[s] / omega * eq.y[s];
    }
    g
}

/// Diagonal of `P`.
fn p_diagonal(lin: &LinearizedModel) -> Vec<f64> {
    let m = &lin.model;
    let eq = &lin.equilibrium;
    let p = lin.params.p();
    let mut d = Vec::with_capacity(lin.dimension());
    for (s, src) in m.sources().iter().enumerate() {
        let scale = eq.ybar[s].powf(1.0 / p) * src.utility.marginal(eq.ybar[s]);
        d.push((lin.gains.rho[s] / (lin.a[s] * scale)).sqrt());
    }
    for s in 0..m.num_sources() {
        d.push((lin.gains.source[s] * eq.nu[s]).sqrt());
    }
    for j in 0..m.num_links() {
        d.push((lin.gains.link[j] * eq.mu[j]).sqrt());
    }
    d
}

/// `Y R(-omega)^T X R(omega) + P^-1 Gbar P`, which is similar to `G` and so
/// has the same eigenvalues. Needs no inverse of `P`, so zero-price links
/// are allowed.
pub fn return_ratio_similar(lin: &LinearizedModel, theta: f64) -> DMatrix<C64> {
    let omega = C64::new(0.0, theta);
    let ns = lin.model.num_sources();
    let r_pos = r_matrix(lin, omega);
    let r_neg = r_matrix(lin, -omega);
    let mut xr = r_pos.clone();
    for (r, route) in lin.model.routes().iter().enumerate() {
        let t = route.round_trip;
        let x_rr = LinearizedModel::delay_phase(omega, t) / (omega * t);
        for c in 0..xr.ncols() {
            xr[(r, c)] *= x_rr;
        }
    }
    let mut core = r_neg.transpose() * xr;
    for s in 0..ns {
        let y = omega / (omega + lin.sigma[s]);
        for c in 0..core.ncols() {
            core[(s, c)] *= y;
        }
    }
    let pd = p_diagonal(lin);
    let gb = g_bar(lin, omega);
    for a in 0..2 * ns {
        for b in 0..2 * ns {
            if gb[(a, b)] != C64::from(0.0) {
                core[(a, b)] += gb[(a, b)] * pd[b] / pd[a];
            }
        }
    }
    core
}

/// `P Y R(-omega)^T X R(omega) P^-1 + Gbar`; equal to [`return_ratio`] at an
/// equilibrium with every link price positive.
pub fn return_ratio_decomposed(lin: &LinearizedModel, theta: f64) -> Result<DMatrix<C64>> {
    let pd = p_diagonal(lin);
    if let Some(j) = pd.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidValue {
            what: "decomposition needs positive prices (zero entry in P)",
            value: j as f64,
        });
    }
    let omega = C64::new(0.0, theta);
    let similar = return_ratio_similar(lin, theta);
    let gb = g_bar(lin, omega);
    let ns = lin.model.num_sources();
    let n = lin.dimension();
    let mut out = similar;
    for a in 0..n {
        for b in 0..n {
            let mut v = out[(a, b)];
            if a < 2 * ns && b < 2 * ns {
                v -= gb[(a, b)] * pd[b] / pd[a];
            }
            out[(a, b)] = v * pd[a] / pd[b] + gb[(a, b)];
        }
    }
    Ok(out)
}

/// `||Q^-1 |R|^T |R| Q||_inf` over the links with positive price. Using
/// moduli makes the value an upper bound for every `theta`.
pub fn k_bound(lin: &LinearizedModel) -> f64 {
    let m = &lin.model;
    let eq = &lin.equilibrium;
    let ns = m.num_sources();
    let p = lin.params.p();
    let r_abs = r_matrix(lin, C64::from(0.0)).map(|v| v.norm());
    let mut keep: Vec<usize> = (0..2 * ns).collect();
    if lin.params.is_unit_gamma() {
        keep.retain(|&i| i < ns);
    }
    keep.extend((0..m.num_links()).filter(|&j| eq.mu[j] > 0.0).map(|j| 2 * ns + j));
    let mut qd = vec![0.0; lin.dimension()];
    for (s, src) in m.sources().iter().enumerate() {
        let scale = eq.ybar[s].powf(1.0 / p) * src.utility.marginal(eq.ybar[s]);
        qd[s] = (scale / (lin.gains.rho[s] * lin.a[s])).sqrt();
        qd[ns + s] = (eq.nu[s] / lin.gains.source[s]).sqrt();
    }
    for j in 0..m.num_links() {
        qd[2 * ns + j] = (eq.mu[j] / lin.gains.link[j]).sqrt();
    }
    let gram = r_abs.transpose() * &r_abs;
    keep.iter()
        .map(|&a| {
            keep.iter()
                .map(|&b| gram[(a, b)] * qd[b] / qd[a])
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Positive half of a log-spaced frequency grid, `points_per_decade` per
/// decade from `theta_min` to `theta_max` inclusive.
pub fn theta_grid(theta_min: f64, theta_max: f64, points_per_decade: usize) -> Vec<f64> {
    let decades = (theta_max / theta_min).log10();
    let n = (decades * points_per_decade as f64).round() as usize;
    (0..=n)
        .map(|i| theta_min * 10f64.powf(decades * i as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NyquistOptions {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points_per_decade: usize,
    /// Crossings must lie strictly right of `-1 + margin`.
    pub margin: f64,
    /// Relative `|Im|` under which a locus without a sign change counts as
    /// touching the real axis.
    pub tangency_tolerance: f64,
}

impl Default for NyquistOptions {
    fn default() -> Self {
        Self {
            theta_min: 1e-4,
            theta_max: 1e4,
            points_per_decade: 2000,
            margin: 0.0,
            tangency_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NyquistVerdict {
    Pass,
    Fail,
    /// A locus touches the real axis at or left of `-1` without crossing.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub theta: f64,
    pub real: f64,
    pub locus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NyquistResult {
    /// Symmetric grid, negative half first.
    pub theta: Vec<f64>,
    /// Eigenvalues per grid point, ordered by tracked locus.
    pub eigenvalues: Vec<Vec<C64>>,
    pub crossings: Vec<Crossing>,
    pub tangencies: Vec<Crossing>,
    pub min_crossing: Option<f64>,
    /// Largest step of any locus between neighbouring grid points, relative
    /// to `1 + |lambda|`.
    pub max_jump: f64,
    pub k_bound: f64,
    pub verdict: NyquistVerdict,
}

fn eigenvalues(m: DMatrix<C64>) -> Vec<C64> {
    let n = m.nrows();
    match nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 10_000) {
        Some(schur) => {
            let (_, t) = schur.unpack();
            (0..n).map(|i| t[(i, i)]).collect()
        }
        None => vec![C64::new(f64::NAN, f64::NAN); n],
    }
}

/// Reorders `next` so entry `k` continues locus `k` of `prev`, greedily by
/// smallest distance.
fn match_loci(prev: &[C64], next: &[C64]) -> Vec<C64> {
    let n = prev.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            pairs.push(((a - b).norm(), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![C64::new(f64::NAN, f64::NAN); n];
    let mut used_prev = vec![false; n];
    let mut used_next = vec![false; n];
    for (_, i, j) in pairs {
        if !used_prev[i] && !used_next[j] {
            out[i] = next[j];
            used_prev[i] = true;
            used_next[j] = true;
        }
    }
    out
}

/// Sweeps `G(i theta)` over a sign-symmetric grid and inspects where the
/// eigenvalue loci meet the real axis.
pub fn nyquist_check(lin: &LinearizedModel, options: &NyquistOptions) -> NyquistResult {
    let positive = theta_grid(options.theta_min, options.theta_max, options.points_per_decade);
    let raw: Vec<Vec<C64>> = positive
        .par_iter()
        .map(|&th| eigenvalues(return_ratio(lin, th)))
        .collect();
    let mut tracked: Vec<Vec<C64>> = Vec::with_capacity(raw.len());
    for ev in raw {
        let next = match tracked.last() {
            Some(prev) => match_loci(prev, &ev),
            None => ev,
        };
        tracked.push(next);
    }

    let mut crossings = Vec::new();
    let mut tangencies = Vec::new();
    let mut max_jump: f64 = 0.0;
    let n = lin.dimension();
    for k in 0..n {
        for i in 0..tracked.len() {
            let cur = tracked[i][k];
            let scale = 1.0 + cur.norm();
            if cur.im.abs() <= options.tangency_tolerance * scale {
                let is_crossing = i > 0
                    && i + 1 < tracked.len()
                    && tracked[i - 1][k].im * tracked[i + 1][k].im < 0.0;
                let c = Crossing {
                    theta: positive[i],
                    real: cur.re,
                    locus: k,
                };
                // Exactly real loci (zero rows) and genuine crossings count as
                // crossings; a touch without a sign change is a tangency.
                if is_crossing || cur.im == 0.0 {
                    crossings.push(c);
                } else {
                    tangencies.push(c);
                }
            }
            if i + 1 < tracked.len() {
                let nxt = tracked[i + 1][k];
                max_jump = max_jump.max((nxt - cur).norm() / (1.0 + cur.norm().max(nxt.norm())));
                if cur.im * nxt.im < 0.0 {
                    let w = cur.im / (cur.im - nxt.im);
                    crossings.push(Crossing {
                        theta: positive[i] + w * (positive[i + 1] - positive[i]),
                        real: cur.re + w * (nxt.re - cur.re),
                        locus: k,
                    });
                }
            }
        }
    }
    crossings.sort_by(|a, b| a.locus.cmp(&b.locus).then(a.theta.total_cmp(&b.theta)));
    let min_crossing = crossings.iter().map(|c| c.real).reduce(f64::min);
    let threshold = -1.0 + options.margin;
    let nan = tracked.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite());
    let verdict = if crossings.iter().any(|c| c.real <= threshold) {
        NyquistVerdict::Fail
    } else if nan || tangencies.iter().any(|c| c.real <= threshold) {
        NyquistVerdict::Inconclusive
    } else {
        NyquistVerdict::Pass
    };

    // Mirror: G(-i theta) = conj(G(i theta)), so loci are conjugates.
    let mut theta: Vec<f64> = positive.iter().rev().map(|t| -t).collect();
    theta.extend(&positive);
    let mut eigenvalues: Vec<Vec<C64>> = tracked
        .iter()
        .rev()
        .map(|ev| ev.iter().map(|v| v.conj()).collect())
        .collect();
    eigenvalues.extend(tracked);
    let mirrored: Vec<Crossing> = crossings
        .iter()
        .map(|c| Crossing {
            theta: -c.theta,
            ..*c
        })
        .collect();
    crossings.extend(mirrored);
    let mirrored: Vec<Crossing> = tangencies
        .iter()
        .map(|c| Crossing {
            theta: -c.theta,
            ..*c
        })
        .collect();
    tangencies.extend(mirrored);

    NyquistResult {
        theta,
        eigenvalues,
        crossings,
        tangencies,
        min_crossing,
        max_jump,
        k_bound: k_bound(lin),
        verdict,
    }
}

/// `theta, re_0, im_0, re_1, im_1, ...`, one row per grid point.
pub fn write_loci_csv<W: Write>(result: &NyquistResult, mut out: W) -> std::io::Result<()> {
    let n = result.eigenvalues.first().map_or(0, |v| v.len());
    let mut header = String::from("theta");
    for k in 0..n {
        header.push_str(&format!(",re_{k},im_{k}"));
    }
    writeln!(out, "{header}")?;
    for (th, ev) in result.theta.iter().zip(&result.eigenvalues) {
        let mut line = format!("{th:e}");
        for v in ev {
            line.push_str(&format!(",{:e},{:e}", v.re, v.im));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Minimum of `Re(e^{-i phi} / (i phi)) = -sin(phi)/phi` on a log grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseBound {
    pub min_value: f64,
    pub at_phase: f64,
    pub holds: bool,
}

fn delay_kernel(phi: f64) -> C64 {
    C64::new(0.0, -phi).exp() / C64::new(0.0, phi)
}

/// Checks `Re(e^{-i phi}/(i phi)) >= -2/pi` at every grid point.
pub fn phase_bound_pointwise(phi_min: f64, phi_max: f64, points_per_decade: usize) -> PhaseBound {
    let mut best = (f64::INFINITY, f64::NAN);
    for phi in theta_grid(phi_min, phi_max, points_per_decade) {
        let v = delay_kernel(phi).re;
        if v < best.0 {
            best = (v, phi);
        }
    }
    PhaseBound {
        min_value: best.0,
        at_phase: best.1,
        holds: best.0 >= -2.0 / PI,
    }
}

/// Checks the same bound only where the curve `e^{-i phi}/(i phi)` meets the
/// real axis, the form the crossing argument relies on.
pub fn phase_bound_at_crossings(phi_min: f64, phi_max: f64, points_per_decade: usize) -> PhaseBound {
    let grid = theta_grid(phi_min, phi_max, points_per_decade);
    let mut best = (f64::INFINITY, f64::NAN);
    for w in grid.windows(2) {
        let (a, b) = (delay_kernel(w[0]), delay_kernel(w[1]));
        if a.im * b.im < 0.0 {
            let t = a.im / (a.im - b.im);
            let re = a.re + t * (b.re - a.re);
            if re < best.0 {
                best = (re, w[0] + t * (w[1] - w[0]));
            }
        }
    }
    // Linear interpolation of a concave arc is within O(h^2) of the curve.
    let h = 10f64.powf(1.0 / points_per_decade as f64) - 1.0;
    PhaseBound {
        min_value: best.0,
        at_phase: best.1,
        holds: best.0 >= -2.0 / PI - h * h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::scalable_gains;
    use crate::presets::{sl1, two_route};

    fn half() -> AlgorithmParams {
        AlgorithmParams::new(2.0, 0.5).unwrap()
    }

    fn sl1_lin(link_gain: Option<f64>) -> LinearizedModel {
        let m = sl1(0.005);
        let eq = Equilibrium::from_prices(&m, &half(), &[1.0], &[0.5]).unwrap();
        let mut g = scalable_gains(&m, &half(), &eq.x, 0.4, None).unwrap();
        if let Some(k) = link_gain {
            g.link = vec![k];
        }
        linearize(&m, &half(), &g, &eq).unwrap()
    }

    #[test]
    fn sl1_coefficients() {
        let lin = sl1_lin(None);
        assert!((lin.a[0] - 0.5).abs() < 1e-12);
        assert!((lin.sigma[0] - lin.gains.rho[0] / 2.0).abs() < 1e-12);
        assert!((lin.inv_gap[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decays_at_high_frequency() {
        let m = sl1(0.005);
        let eq = Equilibrium::from_prices(&m, &half(), &[1.0], &[0.5]).unwrap();
        let g = DelayGains::uniform(&m, 0.1, 0.1, 0.1);
        let lin = linearize(&m, &half(), &g, &eq).unwrap();
        assert!(return_ratio(&lin, 1e6).norm() < 1e-6);
        // Every entry carries a 1/omega or 1/(omega + sigma) factor.
        let scalable = sl1_lin(None);
        let ratio = return_ratio(&scalable, 1e7).norm() / return_ratio(&scalable, 1e6).norm();
        assert!(ratio < 0.11);
    }

    #[test]
    fn conjugate_symmetry() {
        let lin = sl1_lin(None);
        let a = return_ratio(&lin, 3.0);
        let b = return_ratio(&lin, -3.0);
        assert!((a.map(|v| v.conj()) - b).norm() < 1e-14);
    }

    #[test]
    fn decomposition_reproduces_entries() {
        for m in [sl1(0.005), two_route(0.003)] {
            let sol = crate::oracle::solve_generalized_primal(&m, &half(), 1e-10).unwrap();
            let eq = Equilibrium::from_solution(&m, &half(), &sol);
            let g = scalable_gains(&m, &half(), &eq.x, 0.3, None).unwrap();
            let lin = linearize(&m, &half(), &g, &eq).unwrap();
            for th in [0.1, 2.0, 77.0] {
                let direct = return_ratio(&lin, th);
                let dec = return_ratio_decomposed(&lin, th).unwrap();
                assert!((&direct - &dec).norm() <= 1e-9 * direct.norm());
            }
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = theta_grid(1e-2, 1e2, 10);
        assert_eq!(g.len(), 41);
        assert!((g[0] - 1e-2).abs() < 1e-15 && (g[40] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn locus_matching_follows_nearest() {
        let prev = [C64::new(0.0, 0.0), C64::new(5.0, 0.0)];
        let next = [C64::new(5.1, 0.0), C64::new(0.1, 0.0)];
        let m = match_loci(&prev, &next);
        assert_eq!(m, vec![next[1], next[0]]);
    }

    #[test]
    fn kernel_real_part() {
        let phi = 0.7;
        assert!((delay_kernel(phi).re + phi.sin() / phi).abs() < 1e-15);
        let at = phase_bound_at_crossings(1e-3, 1e3, 2000);
        assert!((at.min_value + 2.0 / PI).abs() < 1e-5);
        assert!((at.at_phase - PI / 2.0).abs() < 1e-3);
    }

    #[test]
    fn sl1_verdicts() {
        let opts = NyquistOptions {
            points_per_decade: 200,
            ..Default::default()
        };
        let ok = nyquist_check(&sl1_lin(None), &opts);
        assert_eq!(ok.verdict, NyquistVerdict::Pass);
        assert!(ok.k_bound < PI / 2.0);
        let bound = 0.5 * PI / 4.0 / 0.01;
        let bad = nyquist_check(&sl1_lin(Some(100.0 * bound)), &opts);
        assert_eq!(bad.verdict, NyquistVerdict::Fail);
        assert!(bad.min_crossing.unwrap() <= -1.0);
    }
}
