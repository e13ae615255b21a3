//! Plain-text scenario files.
//!
//! ```text
//! # comment
//! name = sl1
//! mode = delayed            # or undelayed
//! p = 2
//! gamma = 0.5
//! dt = 0.001
//! duration = 50
//! seed = 7
//! record_every = 1          # keep every n-th step in the trace
//!
//! [links]                   # id capacity one-way-delay
//! l1 1 0.005
//!
//! [sources]                 # id weight alpha [max-rate]
//! s1 1 1
//!
//! [routes]                  # id source link...
//! r1 s1 l1
//!
//! [gains]
//! kappa_link = 1
//! kappa_source = 1
//! rho = 1
//! scalable = 0.4            # delayed mode: scalable scheme with this kappa
//! link l1 2                 # per-link kappa override
//! source s1 0.5             # per-source kappa override
//! relax s1 30               # per-source rho override
//!
//! [initial]
//! mu = 0.01
//! nu_fraction = 0.5
//! from_equilibrium = 0.1    # start relative offset from the oracle point
//! perturb = 0.05            # seeded multiplicative jitter
//! link l1 0.3
//! source s1 0.1
//! ```

use std::path::Path;

use crate::delay::validate_delay_grid;
use crate::error::{Error, Result};
use crate::network::{NetworkBuilder, NetworkModel};
use crate::params::AlgorithmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Undelayed,
    Delayed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSpec {
    pub link: f64,
    pub source: f64,
    pub rho: f64,
    /// `kappa` of the scalable scheme; replaces the uniform values.
    pub scalable: Option<f64>,
    pub link_overrides: Vec<(usize, f64)>,
    pub source_overrides: Vec<(usize, f64)>,
    pub rho_overrides: Vec<(usize, f64)>,
}

impl Default for GainSpec {
    fn default() -> Self {
        Self {
            link: 1.0,
            source: 1.0,
            rho: 1.0,
            scalable: None,
            link_overrides: Vec::new(),
            source_overrides: Vec::new(),
            rho_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub mu: f64,
    pub nu_fraction: f64,
    pub from_equilibrium: Option<f64>,
    pub perturb: f64,
    pub link_overrides: Vec<(usize, f64)>,
    pub source_overrides: Vec<(usize, f64)>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            mu: 0.01,
            nu_fraction: 0.5,
            from_equilibrium: None,
            perturb: 0.0,
            link_overrides: Vec::new(),
            source_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub model: NetworkModel,
    pub params: AlgorithmParams,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Trace decimation: every `record_every`-th step is kept, plus the last.
    pub record_every: usize,
    pub gains: GainSpec,
    pub initial: InitialSpec,
    /// Per-source `M_s`; `None` entries use the sum of route bottlenecks.
    pub max_rates: Vec<Option<f64>>,
}

impl Scenario {
    /// Re-checks the invariants after fields were edited in place.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= self.dt) {
            problems.push(format!(
                "duration {} must be at least dt {}",
                self.duration, self.dt
            ));
        }
        if self.record_every == 0 {
            problems.push("record_every must be at least 1".to_string());
        }
        if !(self.params.gamma() > 0.0) {
            problems.push("gamma must lie in (0, 1] for dynamics".to_string());
        }
        if let Some(k) = self.gains.scalable {
            if !(k > 0.0 && k < std::f64::consts::FRAC_PI_4) {
                problems.push(format!("scalable kappa must lie in (0, pi/4), got {k}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        if self.mode == Mode::Delayed {
            validate_delay_grid(&self.model, self.dt)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn max_rates(&self) -> Vec<f64> {
        self.max_rates
            .iter()
            .enumerate()
            .map(|(s, m)| m.unwrap_or_else(|| self.model.max_source_rate(s)))
            .collect()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_scenario(&text)
}

const BUNDLED: &[(&str, &str)] = &[
    ("sl1", include_str!("../scenarios/sl1.scn")),
    ("two_route", include_str!("../scenarios/two_route.scn")),
    ("asymmetric", include_str!("../scenarios/asymmetric.scn")),
    ("triangle", include_str!("../scenarios/triangle.scn")),
    ("abilene", include_str!("../scenarios/abilene.scn")),
];

/// Names of the scenarios compiled into the library.
pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Text of a bundled scenario, by name with or without `.scn`.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".scn").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled_scenario(name: &str) -> Option<Result<Scenario>> {
    bundled_text(name).map(parse_scenario)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Links,
    Sources,
    Routes,
    Gains,
    Initial,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number(line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| parse_err(line, format!("{field}: expected a number, found `{raw}`")))
}

struct Pending {
    line: usize,
    kind: &'static str,
    id: String,
    value: f64,
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut section = Section::Top;
    let mut name = String::from("unnamed");
    let mut mode = Mode::Undelayed;
    let mut p = 2.0;
    let mut gamma = 0.5;
    let mut dt = crate::dual::DEFAULT_DT;
    let mut duration = 50.0;
    let mut seed = 0u64;
    let mut record_every = 1usize;
    let mut gains = GainSpec::default();
    let mut initial = InitialSpec::default();
    let mut builder = NetworkBuilder::new();
    let mut source_ids: Vec<String> = Vec::new();
    let mut max_rates: Vec<Option<f64>> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[links]" => Section::Links,
                "[sources]" => Section::Sources,
                "[routes]" => Section::Routes,
                "[gains]" => Section::Gains,
                "[initial]" => Section::Initial,
                other => return Err(parse_err(line, format!("unknown section `{other}`"))),
            };
            continue;
        }
        if let Some((key, value)) = content.split_once('=') {
            let key = key.trim();
            let value = value.trim();
            match (section, key) {
                (Section::Top, "name") => name = value.to_string(),
                (Section::Top, "mode") => {
                    mode = match value {
                        "undelayed" => Mode::Undelayed,
                        "delayed" => Mode::Delayed,
                        _ => {
                            return Err(parse_err(
                                line,
                                format!("mode: expected `undelayed` or `delayed`, found `{value}`"),
                            ))
                        }
                    }
                }
                (Section::Top, "p") => p = number(line, "p", value)?,
                (Section::Top, "gamma") => gamma = number(line, "gamma", value)?,
                (Section::Top, "dt") => dt = number(line, "dt", value)?,
                (Section::Top, "duration") => duration = number(line, "duration", value)?,
                (Section::Top, "seed") => {
                    seed = value
                        .parse()
                        .map_err(|_| parse_err(line, format!("seed: expected an integer, found `{value}`")))?
                }
                (Section::Top, "record_every") => {
                    record_every = value.parse().map_err(|_| {
                        parse_err(line, format!("record_every: expected an integer, found `{value}`"))
                    })?
                }
                (Section::Gains, "kappa_link") => gains.link = number(line, key, value)?,
                (Section::Gains, "kappa_source") => gains.source = number(line, key, value)?,
                (Section::Gains, "rho") => gains.rho = number(line, key, value)?,
                (Section::Gains, "scalable") => gains.scalable = Some(number(line, key, value)?),
                (Section::Initial, "mu") => initial.mu = number(line, key, value)?,
                (Section::Initial, "nu_fraction") => initial.nu_fraction = number(line, key, value)?,
                (Section::Initial, "from_equilibrium") => {
                    initial.from_equilibrium = Some(number(line, key, value)?)
                }
                (Section::Initial, "perturb") => initial.perturb = number(line, key, value)?,
                _ => return Err(parse_err(line, format!("unknown key `{key}` here"))),
            }
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::Links => {
                if fields.len() != 3 {
                    return Err(parse_err(line, "link rows are `id capacity one-way-delay`"));
                }
                let c = number(line, "capacity", fields[1])?;
                let d = number(line, "delay", fields[2])?;
                builder.add_link(fields[0], c, d);
            }
            Section::Sources => {
                if !(3..=4).contains(&fields.len()) {
                    return Err(parse_err(line, "source rows are `id weight alpha [max-rate]`"));
                }
                let w = number(line, "weight", fields[1])?;
                let a = number(line, "alpha", fields[2])?;
                builder.add_source(fields[0], w, a);
                source_ids.push(fields[0].to_string());
                max_rates.push(match fields.get(3) {
                    Some(m) => Some(number(line, "max-rate", m)?),
                    None => None,
                });
            }
            Section::Routes => {
                if fields.len() < 3 {
                    return Err(parse_err(line, "route rows are `id source link...`"));
                }
                builder.add_route(
                    fields[0],
                    fields[1],
                    fields[2..].iter().map(|s| s.to_string()).collect(),
                );
            }
            Section::Gains | Section::Initial => {
                if fields.len() != 3 {
                    return Err(parse_err(line, "override rows are `link|source|relax id value`"));
                }
                let kind = match (section, fields[0]) {
                    (Section::Gains, "link") => "gain.link",
                    (Section::Gains, "source") => "gain.source",
                    (Section::Gains, "relax") => "gain.relax",
                    (Section::Initial, "link") => "initial.link",
                    (Section::Initial, "source") => "initial.source",
                    (_, other) => return Err(parse_err(line, format!("unknown override `{other}`"))),
                };
                pending.push(Pending {
                    line,
                    kind,
                    id: fields[1].to_string(),
                    value: number(line, fields[0], fields[2])?,
                });
            }
            Section::Top => return Err(parse_err(line, "expected `key = value`")),
        }
    }

    let params = AlgorithmParams::new(p, gamma)?;
    let model = builder.build()?;
    for pd in pending {
        let index = if pd.kind.ends_with("link") {
            model.link_index(&pd.id)
        } else {
            model.source_index(&pd.id)
        }
        .ok_or_else(|| parse_err(pd.line, format!("unknown id `{}`", pd.id)))?;
        let entry = (index, pd.value);
        match pd.kind {
            "gain.link" => gains.link_overrides.push(entry),
            "gain.source" => gains.source_overrides.push(entry),
            "gain.relax" => gains.rho_overrides.push(entry),
            "initial.link" => initial.link_overrides.push(entry),
            _ => initial.source_overrides.push(entry),
        }
    }
    // Builder sorts nothing, so source order matches file order.
    debug_assert!(source_ids
        .iter()
        .enumerate()
        .all(|(i, id)| model.source_index(id) == Some(i)));
    let scenario = Scenario {
        name,
        mode,
        model,
        params,
        dt,
        duration,
        seed,
        record_every,
        gains,
        initial,
        max_rates,
    };
    scenario.validate()?;
    Ok(scenario)
}
