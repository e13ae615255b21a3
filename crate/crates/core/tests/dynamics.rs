use mpdual::delay::step_delayed;
use mpdual::presets::{sl1, two_route};
use mpdual::scenario::{bundled_names, bundled_scenario, Mode};
use mpdual::sim::{run, scenario_equilibrium};
use mpdual::{AlgorithmParams, DelayGains, DelayedState, Equilibrium, HistoryBuffer, NetworkModel};

/// Zero-delay system written out by hand: gains `kappa mu / p`,
/// `kappa nu / p` and a relaxed `ybar`, integrated with explicit Euler.
struct Reference<'a> {
    model: &'a NetworkModel,
    p: f64,
    gamma: f64,
    gains: &'a DelayGains,
}

impl Reference<'_> {
    fn rates(&self, mu: &[f64], nu: &[f64], ybar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let routes = self.model.routes();
        let mut x = vec![0.0; routes.len()];
        let mut y = vec![0.0; nu.len()];
        for (s, src) in self.model.sources().iter().enumerate() {
            let w = src.utility.weight;
            let a = src.utility.alpha;
            let marginal = w * ybar[s].powf(-a);
            for &r in &src.routes {
                let lambda: f64 = routes[r].hops.iter().map(|h| mu[h.link]).sum();
                x[r] = ybar[s] * (self.gamma * marginal / (lambda - nu[s])).powf(self.p);
            }
            y[s] = ybar[s] * ((1.0 - self.gamma) * marginal / nu[s]).powf(self.p);
        }
        (x, y)
    }

    fn step(&self, mu: &[f64], nu: &[f64], ybar: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (p, q) = (self.p, self.p / (self.p - 1.0));
        let (x, y) = self.rates(mu, nu, ybar);
        let mut next_mu = mu.to_vec();
        for (j, link) in self.model.links().iter().enumerate() {
            let z: f64 = self
                .model
                .routes()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.hops.iter().any(|h| h.link == j))
                .map(|(i, _)| x[i])
                .sum();
            let mut drift = z - link.capacity;
            if mu[j] <= 0.0 {
                drift = drift.max(0.0);
            }
            next_mu[j] = (mu[j] + dt * self.gains.link[j] * mu[j] / p * drift).max(0.0);
        }
        let mut next_nu = nu.to_vec();
        let mut next_ybar = ybar.to_vec();
        for (s, src) in self.model.sources().iter().enumerate() {
            let total: f64 = src.routes.iter().map(|&r| x[r]).sum();
            next_nu[s] = nu[s] + dt * self.gains.source[s] * nu[s] / p * (y[s] - total);
            let blend = self.gamma * src.routes.iter().map(|&r| x[r].powf(1.0 / q)).sum::<f64>()
                + (1.0 - self.gamma) * y[s].powf(1.0 / q);
            next_ybar[s] = ybar[s] + dt * q * self.gains.rho[s] / p * (blend - ybar[s].powf(1.0 / q));
        }
        (next_mu, next_nu, next_ybar)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn delay_free_matches_reference(model: &NetworkModel) {
    let params = AlgorithmParams::new(2.0, 0.5).unwrap();
    let gains = DelayGains::uniform(model, 2.0, 1.5, 3.0);
    let dt = 1e-3;
    let mu0 = vec![0.8; model.num_links()];
    let mut state = DelayedState::from_prices(model, &params, mu0.clone(), vec![0.3; model.num_sources()]).unwrap();
    state.ybar.iter_mut().for_each(|v| *v *= 1.2);
    let reference = Reference {
        model,
        p: 2.0,
        gamma: 0.5,
        gains: &gains,
    };
    let (x0, _) = reference.rates(&state.mu, &state.nu, &state.ybar);
    let mut history = HistoryBuffer::new(model, dt, &x0, &mu0).unwrap();
    let (mut mu, mut nu, mut ybar) = (state.mu.clone(), state.nu.clone(), state.ybar.clone());
    for k in 0..2000 {
        let step = step_delayed(model, &params, &gains, &state, &mut history, dt).unwrap();
        assert_eq!(step.clamps, 0);
        let (m2, n2, y2) = reference.step(&mu, &nu, &ybar, dt);
        for (a, b) in step.state.mu.iter().zip(&m2).chain(step.state.nu.iter().zip(&n2)).chain(step.state.ybar.iter().zip(&y2)) {
            assert!(rel(*a, *b) < 1e-8, "step {k}: {a} vs {b}");
        }
        state = step.state;
        (mu, nu, ybar) = (m2, n2, y2);
    }
}

#[test]
fn delay_free_reduction_sl1() {
    delay_free_matches_reference(&sl1(0.0));
}

#[test]
fn delay_free_reduction_two_route() {
    delay_free_matches_reference(&two_route(0.0));
}

#[test]
fn delay_free_and_undelayed_runs_share_equilibrium() {
    for name in ["two_route", "asymmetric"] {
        let base = bundled_scenario(name).unwrap().unwrap();
        let undelayed = run(&base).unwrap().summary;
        let mut sc = base.clone();
        sc.mode = Mode::Delayed;
        sc.model = zero_delay(&base.model);
        sc.gains.link = 2.0;
        sc.gains.source = 2.0;
        sc.gains.rho = 200.0;
        sc.dt = 1e-3;
        let delayed = run(&sc).unwrap().summary;
        assert!(delayed.truncated.is_none(), "{name}: {:?}", delayed.truncated);
        for (a, b) in delayed.final_x.iter().zip(&undelayed.final_x) {
            assert!((a - b).abs() <= 0.01 * b, "{name}: {a} vs {b}");
        }
    }
}

fn zero_delay(model: &NetworkModel) -> NetworkModel {
    let mut b = mpdual::NetworkBuilder::new();
    for l in model.links() {
        b.add_link(&l.id, l.capacity, 0.0);
    }
    for s in model.sources() {
        b.add_source(&s.id, s.utility.weight, s.utility.alpha);
    }
    for r in model.routes() {
        let links = r.hops.iter().map(|h| model.links()[h.link].id.clone()).collect();
        b.add_route(&r.id, &model.sources()[r.source].id, links);
    }
    b.build().unwrap()
}

#[test]
fn runs_agree_with_oracle() {
    // The bundled Abilene gains are deliberately small and still drifting at
    // 50 s, so it is checked separately with a looser band.
    for (name, band) in [("two_route", 5e-3), ("asymmetric", 5e-3), ("triangle", 5e-3), ("abilene", 3e-2)] {
        let sc = bundled_scenario(name).unwrap().unwrap();
        let eq = scenario_equilibrium(&sc).unwrap();
        let out = run(&sc).unwrap();
        assert!(out.summary.truncated.is_none());
        for (a, b) in out.summary.final_x.iter().zip(&eq.x) {
            assert!((a - b).abs() <= band * b, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn delayed_equilibrium_is_fixed_point() {
    let sc = bundled_scenario("triangle").unwrap().unwrap();
    let eq = scenario_equilibrium(&sc).unwrap();
    let gains = mpdual::sim::delay_gains(&sc, Some(&eq)).unwrap();
    let mut history = HistoryBuffer::new(&sc.model, sc.dt, &eq.x, &eq.mu).unwrap();
    let mut state = eq.state();
    for _ in 0..50 {
        state = step_delayed(&sc.model, &sc.params, &gains, &state, &mut history, sc.dt)
            .unwrap()
            .state;
    }
    for (a, b) in state.mu.iter().zip(&eq.mu).chain(state.ybar.iter().zip(&eq.ybar)) {
        assert!(rel(*a, *b) < 1e-7, "{a} vs {b}");
    }
}

#[test]
fn sl1_equilibrium_step_is_exact() {
    let m = sl1(0.005);
    let p = AlgorithmParams::new(2.0, 0.5).unwrap();
    let eq = Equilibrium::from_prices(&m, &p, &[1.0], &[0.5]).unwrap();
    let gains = DelayGains::uniform(&m, 10.0, 10.0, 10.0);
    let mut h = HistoryBuffer::new(&m, 1e-3, &eq.x, &eq.mu).unwrap();
    let next = step_delayed(&m, &p, &gains, &eq.state(), &mut h, 1e-3).unwrap().state;
    assert!((next.mu[0] - 1.0).abs() < 1e-15);
    assert!((next.nu[0] - 0.5).abs() < 1e-15);
    assert!((next.ybar[0] - 1.0).abs() < 1e-15);
}

#[test]
fn bundled_runs_are_deterministic() {
    for name in bundled_names() {
        let mut sc = bundled_scenario(name).unwrap().unwrap();
        sc.duration = sc.duration.min(5.0);
        sc.initial.perturb = 0.05;
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.trace.write_csv(&mut ca).unwrap();
        b.trace.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb, "{name}");
    }
}

#[test]
fn seed_changes_jittered_start() {
    let mut sc = bundled_scenario("two_route").unwrap().unwrap();
    sc.duration = 0.1;
    sc.initial.perturb = 0.1;
    let a = run(&sc).unwrap();
    sc.seed += 1;
    let b = run(&sc).unwrap();
    assert_ne!(a.trace.samples[0].mu, b.trace.samples[0].mu);
}
