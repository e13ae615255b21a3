//! Experiment orchestration: runs, sweeps and stability checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::delay::{
    check_stability_conditions, relative_peak_to_peak, scalable_gains, step_delayed, DelayGains,
    DelayedState, Equilibrium, HistoryBuffer, StabilityReport, DEFAULT_OSCILLATION_THRESHOLD,
};
use crate::dual::{
    aggregate_prices, dual_objective_from_rates, initial_source_prices, rates_for_ybar,
    rates_from_prices, step_undelayed, GainFunctions, PriceState, RateVector,
};
use crate::error::{Error, Result};
use crate::linear::{linearize, nyquist_check, NyquistOptions, NyquistResult, NyquistVerdict};
use crate::oracle::{solve_generalized_primal, solve_kelly_primal, DEFAULT_TOLERANCE};
use crate::scenario::{Mode, Scenario};

/// Relative band used for the convergence-time detector.
pub const CONVERGENCE_BAND: f64 = 0.01;

/// Fraction of the run averaged to define the settled value.
pub const FINAL_WINDOW: f64 = 0.1;

/// Lyapunov tolerance per step, relative to `1 + |W|`.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub ybar: Vec<f64>,
    /// Dual objective; undelayed runs only.
    pub w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub route_ids: Vec<String>,
    pub source_ids: Vec<String>,
    pub link_ids: Vec<String>,
    pub with_objective: bool,
    pub samples: Vec<Sample>,
}

impl Trace {
    fn new(scenario: &Scenario) -> Self {
        let m = &scenario.model;
        Self {
            route_ids: m.routes().iter().map(|r| r.id.clone()).collect(),
            source_ids: m.sources().iter().map(|s| s.id.clone()).collect(),
            link_ids: m.links().iter().map(|l| l.id.clone()).collect(),
            with_objective: scenario.mode == Mode::Undelayed,
            samples: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        let prefixed = |p: &str, ids: &[String]| -> Vec<String> {
            ids.iter().map(|id| format!("{p}.{id}")).collect()
        };
        h.extend(prefixed("x", &self.route_ids));
        h.extend(prefixed("y", &self.source_ids));
        h.extend(prefixed("z", &self.link_ids));
        h.extend(prefixed("mu", &self.link_ids));
        h.extend(prefixed("nu", &self.source_ids));
        h.extend(prefixed("ybar", &self.source_ids));
        if self.with_objective {
            h.push("W".to_string());
        }
        h
    }

    /// Values in header order. Floats are written with Rust's shortest
    /// round-trip formatting so the CSV is bit-exact.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            line.push_str(&format!("{:?}", s.t));
            for v in s
                .x
                .iter()
                .chain(&s.y)
                .chain(&s.z)
                .chain(&s.mu)
                .chain(&s.nu)
                .chain(&s.ybar)
                .chain(s.w.iter())
            {
                line.push(',');
                line.push_str(&format!("{v:?}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Route-rate series, one vector per route.
    pub fn route_series(&self) -> Vec<Vec<f64>> {
        (0..self.route_ids.len())
            .map(|r| self.samples.iter().map(|s| s.x[r]).collect())
            .collect()
    }

    pub fn link_load_series(&self) -> Vec<Vec<f64>> {
        (0..self.link_ids.len())
            .map(|j| self.samples.iter().map(|s| s.z[j]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_x: Vec<f64>,
    pub final_y: Vec<f64>,
    pub final_mu: Vec<f64>,
    pub final_nu: Vec<f64>,
    pub final_ybar: Vec<f64>,
    /// First time after which every route rate stays within the band around
    /// its final-window mean.
    pub convergence_time: Option<f64>,
    pub clamp_events: usize,
    /// Steps where `W` rose by more than the tolerance; undelayed only.
    pub lyapunov_violations: Option<usize>,
    /// Peak-to-peak link load over the final quarter, relative to capacity.
    pub oscillation: Vec<f64>,
    /// Time and cause when the run stopped early.
    pub truncated: Option<(f64, String)>,
}

impl RunSummary {
    /// Diverged, or link loads still swinging by more than the threshold.
    pub fn is_unstable(&self, threshold: f64) -> bool {
        self.truncated.is_some() || self.oscillation.iter().any(|&a| a > threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub summary: RunSummary,
}

/// First sample time after which every series stays within `band` of its
/// final-window mean. `None` when the last sample is outside the band.
pub fn convergence_time(times: &[f64], series: &[Vec<f64>], band: f64, window: f64) -> Option<f64> {
    let n = times.len();
    if n == 0 {
        return None;
    }
    let start = (((1.0 - window) * n as f64).floor() as usize).min(n - 1);
    let mut last_out: Option<usize> = None;
    for v in series {
        let tail = &v[start..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let tol = band * mean.abs();
        if let Some(i) = v.iter().rposition(|x| (x - mean).abs() > tol) {
            last_out = Some(last_out.map_or(i, |k: usize| k.max(i)));
        }
    }
    match last_out {
        None => Some(times[0]),
        Some(i) if i + 1 < n => Some(times[i + 1]),
        Some(_) => None,
    }
}

/// Oracle equilibrium of the scenario's generalised problem.
pub fn scenario_equilibrium(scenario: &Scenario) -> Result<Equilibrium> {
    let sol = solve_generalized_primal(&scenario.model, &scenario.params, DEFAULT_TOLERANCE)?;
    Ok(Equilibrium::from_solution(&scenario.model, &scenario.params, &sol))
}

fn apply_overrides(values: &mut [f64], overrides: &[(usize, f64)]) {
    for &(i, v) in overrides {
        values[i] = v;
    }
}

pub fn undelayed_gains(scenario: &Scenario) -> GainFunctions {
    let mut g = GainFunctions::uniform(&scenario.model, scenario.gains.link, scenario.gains.source);
    apply_overrides(&mut g.link, &scenario.gains.link_overrides);
    apply_overrides(&mut g.source, &scenario.gains.source_overrides);
    g
}

/// Gains for the delayed system. The scalable scheme uses the oracle
/// equilibrium as its rate estimate.
pub fn delay_gains(scenario: &Scenario, eq: Option<&Equilibrium>) -> Result<DelayGains> {
    let mut g = match scenario.gains.scalable {
        Some(kappa) => {
            let owned;
            let eq = match eq {
                Some(e) => e,
                None => {
                    owned = scenario_equilibrium(scenario)?;
                    &owned
                }
            };
            scalable_gains(
                &scenario.model,
                &scenario.params,
                &eq.x,
                kappa,
                Some(&scenario.max_rates()),
            )?
        }
        None => DelayGains::uniform(
            &scenario.model,
            scenario.gains.link,
            scenario.gains.source,
            scenario.gains.rho,
        ),
    };
    apply_overrides(&mut g.link, &scenario.gains.link_overrides);
    apply_overrides(&mut g.source, &scenario.gains.source_overrides);
    apply_overrides(&mut g.rho, &scenario.gains.rho_overrides);
    Ok(g)
}

/// Initial prices: explicit values, or an offset from the oracle point, then
/// the seeded multiplicative jitter. The offset start also fixes `ybar`;
/// otherwise it starts on its algebraic value.
pub fn initial_state(scenario: &Scenario, eq: Option<&Equilibrium>) -> Result<DelayedState> {
    let m = &scenario.model;
    let init = &scenario.initial;
    let (mut mu, mut nu, ybar) = match init.from_equilibrium {
        Some(offset) => {
            let owned;
            let eq = match eq {
                Some(e) => e,
                None => {
                    owned = scenario_equilibrium(scenario)?;
                    &owned
                }
            };
            let s = eq.perturbed_state(offset);
            (s.mu, s.nu, Some(s.ybar))
        }
        None => {
            let mut mu = vec![init.mu; m.num_links()];
            apply_overrides(&mut mu, &init.link_overrides);
            let nu = initial_source_prices(m, &scenario.params, &mu, init.nu_fraction);
            (mu, nu, None)
        }
    };
    if init.from_equilibrium.is_some() {
        apply_overrides(&mut mu, &init.link_overrides);
    }
    apply_overrides(&mut nu, &init.source_overrides);
    if init.perturb > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        for v in mu.iter_mut().chain(nu.iter_mut()) {
            *v *= 1.0 + init.perturb * rng.gen_range(-1.0..=1.0);
        }
    }
    let mut state = DelayedState::from_prices(m, &scenario.params, mu, nu)?;
    if let Some(ybar) = ybar {
        state.ybar = ybar;
    }
    Ok(state)
}

fn sample(t: f64, rates: &RateVector, mu: &[f64], nu: &[f64], ybar: &[f64], w: Option<f64>) -> Sample {
    Sample {
        t,
        x: rates.x.clone(),
        y: rates.y.clone(),
        z: rates.z.clone(),
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        ybar: ybar.to_vec(),
        w,
    }
}

fn summarize(scenario: &Scenario, trace: Trace, clamps: usize, lyapunov: Option<usize>, truncated: Option<(f64, String)>) -> RunOutput {
    if let Some((t, e)) = &truncated {
        log::warn!("{}: run truncated at t = {t}: {e}", scenario.name);
    }
    let last = trace.samples.last().cloned();
    let times: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let convergence = if truncated.is_some() {
        None
    } else {
        convergence_time(&times, &trace.route_series(), CONVERGENCE_BAND, FINAL_WINDOW)
    };
    let oscillation = relative_peak_to_peak(&trace.link_load_series(), &scenario.model.capacities(), 0.25);
    let pick = |f: fn(&Sample) -> &Vec<f64>| last.as_ref().map(|s| f(s).clone()).unwrap_or_default();
    let summary = RunSummary {
        final_x: pick(|s| &s.x),
        final_y: pick(|s| &s.y),
        final_mu: pick(|s| &s.mu),
        final_nu: pick(|s| &s.nu),
        final_ybar: pick(|s| &s.ybar),
        convergence_time: convergence,
        clamp_events: clamps,
        lyapunov_violations: lyapunov,
        oscillation,
        truncated,
    };
    RunOutput { trace, summary }
}

fn run_undelayed(scenario: &Scenario, start: DelayedState) -> Result<RunOutput> {
    let m = &scenario.model;
    let p = &scenario.params;
    let gains = undelayed_gains(scenario);
    let mut trace = Trace::new(scenario);
    let mut state = PriceState::new(start.mu, start.nu);
    let mut clamps = 0;
    let mut violations = 0;
    let mut truncated = None;
    let mut previous_w: Option<f64> = None;
    let steps = scenario.steps();
    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        let rates = match rates_from_prices(m, p, &state.mu, &state.nu) {
            Ok(r) => r,
            Err(e) if k > 0 => {
                truncated = Some((t, e.to_string()));
                break;
            }
            Err(e) => return Err(e),
        };
        let w = dual_objective_from_rates(m, p, &state.mu, &state.nu, &rates);
        if let Some(prev) = previous_w {
            if w > prev + LYAPUNOV_TOLERANCE * (1.0 + prev.abs()) {
                violations += 1;
            }
        }
        previous_w = Some(w);
        let step = if k == steps {
            None
        } else {
            Some(step_undelayed(m, p, &gains, &state, scenario.dt))
        };
        let failed = matches!(step, Some(Err(_)));
        if k % scenario.record_every == 0 || k == steps || failed {
            trace
                .samples
                .push(sample(t, &rates, &state.mu, &state.nu, &rates.ybar, Some(w)));
        }
        match step {
            None => break,
            Some(Ok((next, c))) => {
                clamps += c;
                state = PriceState {
                    time: (k + 1) as f64 * scenario.dt,
                    ..next
                };
            }
            Some(Err(e)) => {
                truncated = Some(((k + 1) as f64 * scenario.dt, e.to_string()));
                break;
            }
        }
    }
    Ok(summarize(scenario, trace, clamps, Some(violations), truncated))
}

fn run_delayed(scenario: &Scenario, start: DelayedState, gains: &DelayGains) -> Result<RunOutput> {
    let m = &scenario.model;
    let p = &scenario.params;
    let lambda = aggregate_prices(m, &start.mu);
    let (x0, _) = rates_for_ybar(m, p, &lambda, &start.nu, &start.ybar);
    let mut history = HistoryBuffer::new(m, scenario.dt, &x0, &start.mu)?;
    let mut state = start;
    let mut trace = Trace::new(scenario);
    let mut clamps = 0;
    let mut truncated = None;
    let steps = scenario.steps();
    let mut skipped: Option<Sample> = None;
    // Step k produces the rates at t_k, so one extra step yields the final
    // sample; its advanced state is discarded.
    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        match step_delayed(m, p, gains, &state, &mut history, scenario.dt) {
            Ok(step) => {
                clamps += step.clamps;
                let s = sample(t, &step.rates, &state.mu, &state.nu, &state.ybar, None);
                if k % scenario.record_every == 0 || k == steps {
                    trace.samples.push(s);
                    skipped = None;
                } else {
                    skipped = Some(s);
                }
                state = DelayedState {
                    time: (k + 1) as f64 * scenario.dt,
                    ..step.state
                };
            }
            Err(e) => {
                trace.samples.extend(skipped.take());
                truncated = Some((t, e.to_string()));
                break;
            }
        }
    }
    Ok(summarize(scenario, trace, clamps, None, truncated))
}

/// Runs the scenario. Setup errors are returned; failures mid-run truncate
/// the trace and are recorded in the summary.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let needs_eq = scenario.initial.from_equilibrium.is_some()
        || (scenario.mode == Mode::Delayed && scenario.gains.scalable.is_some());
    let eq = if needs_eq {
        Some(scenario_equilibrium(scenario)?)
    } else {
        None
    };
    let start = initial_state(scenario, eq.as_ref())?;
    match scenario.mode {
        Mode::Undelayed => run_undelayed(scenario, start),
        Mode::Delayed => {
            let gains = delay_gains(scenario, eq.as_ref())?;
            run_delayed(scenario, start, &gains)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// `sum_s y_s` at the end of the run.
    pub aggregate_rate: Option<f64>,
    /// `sum_s U_s(sum_r x_r)` at the end of the run.
    pub utility: Option<f64>,
    /// Optimal value of the Kelly problem.
    pub optimum: f64,
    pub gap: Option<f64>,
    pub convergence_time: Option<f64>,
    pub unstable: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},aggregate_rate,utility,optimum,gap,convergence_time,unstable,error",
            self.parameter
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{:?},{},{},{:?},{},{},{},{}",
                r.value,
                opt(r.aggregate_rate),
                opt(r.utility),
                r.optimum,
                opt(r.gap),
                opt(r.convergence_time),
                r.unstable.map(|b| b.to_string()).unwrap_or_default(),
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            )?;
        }
        Ok(())
    }
}

fn sweep_point(scenario: &Scenario, value: f64, optimum: f64) -> SweepRow {
    let failed = |e: Error| SweepRow {
        value,
        aggregate_rate: None,
        utility: None,
        optimum,
        gap: None,
        convergence_time: None,
        unstable: None,
        error: Some(e.to_string()),
    };
    match run(scenario) {
        Ok(out) => {
            let s = &out.summary;
            let totals = scenario.model.source_totals(&s.final_x);
            let utility: f64 = scenario
                .model
                .sources()
                .iter()
                .zip(&totals)
                .map(|(src, &y)| src.utility.value(y))
                .sum();
            SweepRow {
                value,
                aggregate_rate: Some(s.final_y.iter().sum()),
                utility: Some(utility),
                optimum,
                gap: Some(optimum - utility),
                convergence_time: s.convergence_time,
                unstable: Some(s.is_unstable(DEFAULT_OSCILLATION_THRESHOLD)),
                error: s.truncated.as_ref().map(|(t, e)| format!("truncated at {t}: {e}")),
            }
        }
        Err(e) => failed(e),
    }
}

/// One run per `gamma`, in parallel, reported in input order.
pub fn sweep_gamma(scenario: &Scenario, gammas: &[f64]) -> Result<SweepReport> {
    let kelly = solve_kelly_primal(&scenario.model, &scenario.params, DEFAULT_TOLERANCE)?;
    let rows = gammas
        .par_iter()
        .map(|&g| {
            let mut sc = scenario.clone();
            match scenario.params.with_gamma(g) {
                Ok(p) => {
                    sc.params = p;
                    sweep_point(&sc, g, kelly.objective)
                }
                Err(e) => SweepRow {
                    value: g,
                    aggregate_rate: None,
                    utility: None,
                    optimum: kelly.objective,
                    gap: None,
                    convergence_time: None,
                    unstable: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepReport {
        parameter: "gamma".into(),
        rows,
    })
}

/// One run per gain multiplier applied to every configured gain.
pub fn sweep_gains(scenario: &Scenario, factors: &[f64]) -> Result<SweepReport> {
    let kelly = solve_kelly_primal(&scenario.model, &scenario.params, DEFAULT_TOLERANCE)?;
    let base = match scenario.mode {
        Mode::Delayed => Some(delay_gains(scenario, None)?),
        Mode::Undelayed => None,
    };
    let rows = factors
        .par_iter()
        .map(|&f| {
            let mut sc = scenario.clone();
            match &base {
                Some(g) => {
                    let g = g.scaled(f);
                    sc.gains.scalable = None;
                    sc.gains.link_overrides = g.link.iter().copied().enumerate().collect();
                    sc.gains.source_overrides = g.source.iter().copied().enumerate().collect();
                    sc.gains.rho_overrides = g.rho.iter().copied().enumerate().collect();
                }
                None => {
                    sc.gains.link *= f;
                    sc.gains.source *= f;
                    sc.gains.rho *= f;
                    for list in [&mut sc.gains.link_overrides, &mut sc.gains.source_overrides, &mut sc.gains.rho_overrides] {
                        list.iter_mut().for_each(|(_, v)| *v *= f);
                    }
                }
            }
            sweep_point(&sc, f, kelly.objective)
        })
        .collect();
    Ok(SweepReport {
        parameter: "gain_factor".into(),
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub equilibrium: Equilibrium,
    pub gains: DelayGains,
    pub stability: StabilityReport,
    pub nyquist: Option<NyquistResult>,
    pub nyquist_error: Option<String>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.stability.pass
            && self
                .nyquist
                .as_ref()
                .is_some_and(|n| n.verdict == NyquistVerdict::Pass)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let s = &self.stability;
        writeln!(out, "link_margins = {:?}", s.link_margins)?;
        writeln!(out, "source_margins = {:?}", s.source_margins)?;
        writeln!(out, "relaxation_margins = {:?}", s.relaxation_margins)?;
        writeln!(out, "almost_saturated = {:?}", s.almost_saturated)?;
        writeln!(out, "conditions = {}", if s.pass { "pass" } else { "fail" })?;
        match (&self.nyquist, &self.nyquist_error) {
            (Some(n), _) => {
                writeln!(out, "nyquist = {:?}", n.verdict)?;
                writeln!(out, "min_crossing = {:?}", n.min_crossing)?;
                writeln!(out, "k_bound = {:?}", n.k_bound)?;
                writeln!(out, "max_locus_jump = {:?}", n.max_jump)?;
            }
            (None, Some(e)) => writeln!(out, "nyquist = error: {e}")?,
            (None, None) => {}
        }
        writeln!(out, "verdict = {}", if self.pass() { "pass" } else { "fail" })
    }
}

/// Stability conditions and the Nyquist sweep at the oracle equilibrium.
pub fn check(scenario: &Scenario, options: &NyquistOptions) -> Result<CheckReport> {
    let eq = scenario_equilibrium(scenario)?;
    let gains = delay_gains(scenario, Some(&eq))?;
    let stability = check_stability_conditions(&scenario.model, &scenario.params, &gains, &eq);
    let (nyquist, nyquist_error) = match linearize(&scenario.model, &scenario.params, &gains, &eq) {
        Ok(lin) => (Some(nyquist_check(&lin, options)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CheckReport {
        equilibrium: eq,
        gains,
        stability,
        nyquist,
        nyquist_error,
    })
}

impl RunSummary {
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "final_x = {:?}", self.final_x)?;
        writeln!(out, "final_y = {:?}", self.final_y)?;
        writeln!(out, "final_mu = {:?}", self.final_mu)?;
        writeln!(out, "final_nu = {:?}", self.final_nu)?;
        writeln!(out, "final_ybar = {:?}", self.final_ybar)?;
        writeln!(out, "convergence_time = {:?}", self.convergence_time)?;
        writeln!(out, "clamp_events = {}", self.clamp_events)?;
        if let Some(v) = self.lyapunov_violations {
            writeln!(out, "lyapunov_violations = {v}")?;
        }
        writeln!(out, "oscillation = {:?}", self.oscillation)?;
        match &self.truncated {
            Some((t, e)) => writeln!(out, "truncated = {t:?}: {e}"),
            None => writeln!(out, "truncated = no"),
        }
    }
}
