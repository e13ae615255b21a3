use proptest::prelude::*;

use mpdual::delay::{check_stability_conditions, scalable_gains};
use mpdual::dual::{
    aggregate_prices, dual_gradient, dual_objective, rates_from_prices, step_undelayed,
    GainFunctions, PriceState, PRICE_EPSILON,
};
use mpdual::oracle::{
    approx_error_factor, kkt_residual, random_instance, solve_generalized_primal, verify_lemma1,
};
use mpdual::presets::sl1;
use mpdual::{AlgorithmParams, AlphaFair, Equilibrium, NetworkModel};

/// Interior prices: the first `num_links` entries of `link` as link prices,
/// each source price a fraction of its cheapest route.
fn interior(model: &NetworkModel, link: &[f64], frac: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mu: Vec<f64> = link.iter().take(model.num_links()).copied().collect();
    let lambda = aggregate_prices(model, &mu);
    let nu = model
        .sources()
        .iter()
        .enumerate()
        .map(|(s, src)| {
            let m = src.routes.iter().map(|&r| lambda[r]).fold(f64::INFINITY, f64::min);
            frac[s] * m
        })
        .collect();
    (mu, nu)
}

fn prices() -> impl Strategy<Value = (u64, Vec<f64>, Vec<f64>)> {
    (
        0u64..10_000,
        prop::collection::vec(0.05f64..3.0, 4),
        prop::collection::vec(0.05f64..0.95, 3),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demand_inverts_marginal(w in 0.1f64..10.0, alpha in 0.3f64..4.0, y in 1e-3f64..1e3) {
        let u = AlphaFair::new(w, alpha).unwrap();
        let back = u.demand(u.marginal(y));
        prop_assert!((back - y).abs() <= 1e-10 * y);
    }

    #[test]
    fn route_identity_at_interior_prices((seed, link, frac) in prices()) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let (mu, nu) = interior(m, &link, &frac);
        let r = rates_from_prices(m, p, &mu, &nu).unwrap();
        let (pe, q, g) = (p.p(), p.q(), p.gamma());
        for (ri, route) in m.routes().iter().enumerate() {
            let s = route.source;
            let nu_s = if p.is_unit_gamma() { 0.0 } else { nu[s] };
            let u = &m.sources()[s].utility;
            let lhs = r.x[ri] / (r.ybar[s].powf(1.0 / pe) * u.marginal(r.ybar[s]));
            let rhs = g * r.x[ri].powf(1.0 / q) / (r.lambda[ri] - nu_s);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300), "{}", inst.description);
        }
    }

    #[test]
    fn relaxed_aggregate_is_blended_power_mean((seed, link, frac) in prices()) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let (mu, nu) = interior(m, &link, &frac);
        let r = rates_from_prices(m, p, &mu, &nu).unwrap();
        let (q, g) = (p.q(), p.gamma());
        for (s, src) in m.sources().iter().enumerate() {
            let blend = g * src.routes.iter().map(|&i| r.x[i].powf(1.0 / q)).sum::<f64>()
                + (1.0 - g) * r.y[s].powf(1.0 / q);
            let lhs = r.ybar[s].powf(1.0 / q);
            prop_assert!((lhs - blend).abs() <= 1e-10 * lhs, "{}", inst.description);
            // Away from equilibrium only the blended lower bounds survive.
            prop_assert!(r.ybar[s] >= (1.0 - g).powf(q) * r.y[s] * (1.0 - 1e-12));
            for &i in &src.routes {
                prop_assert!(r.ybar[s] >= g.powf(q) * r.x[i] * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences((seed, link, frac) in prices()) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let (mu, nu) = interior(m, &link, &frac);
        let (gm, gn) = dual_gradient(m, p, &mu, &nu).unwrap();
        let h = 1e-6;
        for j in 0..mu.len() {
            let (mut a, mut b) = (mu.clone(), mu.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (dual_objective(m, p, &a, &nu).unwrap() - dual_objective(m, p, &b, &nu).unwrap()) / (2.0 * h);
            prop_assert!((fd - gm[j]).abs() / (1.0 + gm[j].abs()) < 1e-4, "link {j}: {fd} vs {}", gm[j]);
        }
        if !p.is_unit_gamma() {
            for s in 0..nu.len() {
                let (mut a, mut b) = (nu.clone(), nu.clone());
                a[s] += h;
                b[s] -= h;
                let fd = (dual_objective(m, p, &mu, &a).unwrap() - dual_objective(m, p, &mu, &b).unwrap()) / (2.0 * h);
                prop_assert!((fd - gn[s]).abs() / (1.0 + gn[s].abs()) < 1e-4, "source {s}: {fd} vs {}", gn[s]);
            }
        }
    }

    #[test]
    fn undelayed_step_stays_in_domain((seed, link, frac) in prices(), gain in 0.01f64..10.0) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let (mu, nu) = interior(m, &link, &frac);
        let g = GainFunctions::uniform(m, gain, gain);
        if let Ok((next, _)) = step_undelayed(m, p, &g, &PriceState::new(mu, nu), 0.005) {
            prop_assert!(next.mu.iter().all(|&v| v >= 0.0));
            if !p.is_unit_gamma() {
                prop_assert!(next.nu.iter().all(|&v| v >= PRICE_EPSILON));
            }
        }
    }

    #[test]
    fn small_steps_do_not_increase_objective((seed, link, frac) in prices()) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let (mu, nu) = interior(m, &link, &frac);
        let g = GainFunctions::uniform(m, 1.0, 1.0);
        let w0 = dual_objective(m, p, &mu, &nu).unwrap();
        let (next, clamps) = step_undelayed(m, p, &g, &PriceState::new(mu, nu), 1e-6).unwrap();
        prop_assume!(clamps == 0);
        let w1 = dual_objective(m, p, &next.mu, &next.nu).unwrap();
        prop_assert!(w1 <= w0 + 1e-9 * (1.0 + w0.abs()), "{w0} -> {w1}");
    }

    #[test]
    fn error_factor_monotone_in_gamma(n in 1usize..6, p in 1.2f64..4.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(approx_error_factor(lo, p, n) <= approx_error_factor(hi, p, n) * (1.0 + 1e-15));
        prop_assert_eq!(approx_error_factor(0.0, p, n), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_solutions_satisfy_kkt(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let sol = solve_generalized_primal(m, p, 1e-9).unwrap();
        let r = kkt_residual(m, p, &sol.x, &sol.y, &sol.u, &sol.mu, &sol.nu);
        prop_assert!(r.max() < 1e-6, "{}: {:?}", inst.description, r);
    }

    #[test]
    fn lemma1_sandwich_holds(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let rep = verify_lemma1(&inst.model, &inst.params, 1e-6).unwrap();
        prop_assert!(rep.pass, "{}: {:?}", inst.description, rep);
    }

    #[test]
    fn route_identity_at_oracle_points(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let sol = solve_generalized_primal(m, p, 1e-10).unwrap();
        let eq = Equilibrium::from_solution(m, p, &sol);
        prop_assert!(eq.route_identity_residual(m, p) < 1e-6, "{}", inst.description);
    }

    #[test]
    fn relaxed_aggregate_dominates_at_equilibrium(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let (m, p) = (&inst.model, &inst.params);
        let sol = solve_generalized_primal(m, p, 1e-10).unwrap();
        let eq = Equilibrium::from_solution(m, p, &sol);
        for (s, src) in m.sources().iter().enumerate() {
            prop_assert!(eq.ybar[s] >= eq.y[s] * (1.0 - 1e-6), "{}", inst.description);
            for &r in &src.routes {
                prop_assert!(eq.ybar[s] >= eq.x[r] * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn scalable_gains_meet_conditions(
        seed in 0u64..10_000,
        kappa in 0.05f64..0.78,
        pads in prop::collection::vec(0.0f64..0.5, 9),
    ) {
        let inst = random_instance(seed);
        let p = &inst.params;
        // The relaxation bound needs x^(1/q) <= x, i.e. every rate at least
        // one unit; rates scale linearly with capacity.
        let sol = solve_generalized_primal(&inst.model, p, 1e-10).unwrap();
        let smallest = sol.x.iter().copied().fold(f64::INFINITY, f64::min);
        let m = inst.model.with_scaled_capacities(2.0 / smallest);
        let sol = solve_generalized_primal(&m, p, 1e-10).unwrap();
        let eq = Equilibrium::from_solution(&m, p, &sol);
        prop_assume!(eq.almost_saturated_links(&m).is_empty());
        let estimate: Vec<f64> = eq.x.iter().zip(&pads).map(|(x, d)| x * (1.0 + d)).collect();
        let gains = scalable_gains(&m, p, &estimate, kappa, None).unwrap();
        let report = check_stability_conditions(&m, p, &gains, &eq);
        prop_assert!(report.pass, "{}: {:?}", inst.description, report);
    }
}

#[test]
fn relaxed_aggregate_can_trail_source_rate_off_equilibrium() {
    // Cheap source price, expensive route: y dominates and the blend
    // (1 - gamma) sqrt(y) + gamma sqrt(x) sits below sqrt(y).
    let m = sl1(0.0);
    let p = AlgorithmParams::new(2.0, 0.5).unwrap();
    let r = rates_from_prices(&m, &p, &[1.0], &[0.1]).unwrap();
    assert!(r.ybar[0] < r.y[0], "ybar {} y {}", r.ybar[0], r.y[0]);
}

#[test]
fn scalable_relaxation_bound_needs_unit_rates() {
    // Sub-unit rates make sum x^(1/q) exceed ybar, so the relaxation margin
    // can pass 1 even with an exact rate estimate.
    let inst = random_instance(2044);
    let (m, p) = (&inst.model, &inst.params);
    let sol = solve_generalized_primal(m, p, 1e-10).unwrap();
    assert!(sol.x.iter().any(|&x| x < 1.0));
    let eq = Equilibrium::from_solution(m, p, &sol);
    let gains = scalable_gains(m, p, &eq.x, 0.656, None).unwrap();
    let report = check_stability_conditions(m, p, &gains, &eq);
    assert!(report.relaxation_margins.iter().any(|&v| v > 1.0), "{report:?}");
    assert!(report.link_margins.iter().all(|&v| v < 1.0));
}
