//! `mpdual` command-line front-end.
//!
//! Exit status: 0 when the verdict passes, 1 when it fails, 2 on errors.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use mpdual::delay::DEFAULT_OSCILLATION_THRESHOLD;
use mpdual::linear::{linearize, nyquist_check, write_loci_csv, NyquistOptions, NyquistVerdict};
use mpdual::oracle::{kkt_residual, solve_generalized_primal, solve_kelly_primal, verify_lemma1};
use mpdual::scenario::{bundled_names, bundled_scenario, load_scenario, Scenario};
use mpdual::sim;

/// KKT residual under which `solve` reports success.
const SOLVE_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "mpdual", version, about = "Multi-path dual congestion-control fluid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, global = true)]
    scenario: Option<String>,

    /// Directory for traces and reports.
    #[arg(long, global = true, env = "MPDUAL_OUT_DIR", default_value = "mpdual-out")]
    out_dir: PathBuf,

    /// Override the scenario step size in seconds.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Override the simulated duration in seconds.
    #[arg(long, global = true)]
    duration: Option<f64>,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and write the trace.
    Run,
    /// Re-run the scenario for each gamma.
    SweepGamma {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        values: Vec<f64>,
    },
    /// Re-run the scenario with every gain multiplied by each factor.
    SweepGains {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,5,10,100")]
        values: Vec<f64>,
    },
    /// Decentralised stability conditions plus the Nyquist sweep.
    Check(NyquistArgs),
    /// Solve the convex programs only.
    Solve,
    /// Eigenvalue loci of the return ratio.
    Nyquist(NyquistArgs),
    /// List the bundled scenarios.
    List,
}

#[derive(Args)]
struct NyquistArgs {
    #[arg(long, default_value_t = 1e-4)]
    theta_min: f64,
    #[arg(long, default_value_t = 1e4)]
    theta_max: f64,
    #[arg(long, default_value_t = 2000)]
    points_per_decade: usize,
}

impl NyquistArgs {
    fn options(&self) -> NyquistOptions {
        NyquistOptions {
            theta_min: self.theta_min,
            theta_max: self.theta_max,
            points_per_decade: self.points_per_decade,
            ..NyquistOptions::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_scenario(cli: &Cli) -> Result<Scenario> {
    let Some(spec) = cli.scenario.as_deref() else {
        bail!("--scenario is required (bundled: {})", bundled_names().join(", "));
    };
    let mut sc = if Path::new(spec).exists() {
        load_scenario(spec).with_context(|| format!("loading {spec}"))?
    } else if let Some(sc) = bundled_scenario(spec) {
        sc?
    } else {
        bail!(
            "no scenario file or bundled scenario named `{spec}` (bundled: {})",
            bundled_names().join(", ")
        );
    };
    if let Some(dt) = cli.dt {
        sc.dt = dt;
    }
    if let Some(d) = cli.duration {
        sc.duration = d;
    }
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

fn create(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(name);
    info!("writing {}", path.display());
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes the report to stdout and to `out_dir/name`.
fn emit(out_dir: &Path, name: &str, text: &[u8]) -> Result<()> {
    let mut f = create(out_dir, name)?;
    f.write_all(text)?;
    f.flush()?;
    std::io::stdout().write_all(text)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Command::List = cli.command {
        for name in bundled_names() {
            println!("{name}");
        }
        return Ok(true);
    }
    let sc = resolve_scenario(cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Run => run(&sc, out),
        Command::SweepGamma { values } => {
            let report = sim::sweep_gamma(&sc, values)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            emit(out, "sweep_gamma.csv", &buf)?;
            Ok(report.rows.iter().all(|r| r.error.is_none()))
        }
        Command::SweepGains { values } => {
            let report = sim::sweep_gains(&sc, values)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            emit(out, "sweep_gains.csv", &buf)?;
            // Divergence at large factors is the expected measurement here.
            Ok(true)
        }
        Command::Check(args) => {
            let report = sim::check(&sc, &args.options())?;
            let mut buf = Vec::new();
            report.write_text(&mut buf)?;
            emit(out, "check.txt", &buf)?;
            Ok(report.pass())
        }
        Command::Solve => solve(&sc, out),
        Command::Nyquist(args) => nyquist(&sc, out, &args.options()),
        Command::List => unreachable!(),
    }
}

fn run(sc: &Scenario, out: &Path) -> Result<bool> {
    let output = sim::run(sc)?;
    let mut trace = create(out, "trace.csv")?;
    output.trace.write_csv(&mut trace)?;
    trace.flush()?;
    let s = &output.summary;
    let mut buf = Vec::new();
    s.write_text(&mut buf)?;
    emit(out, "summary.txt", &buf)?;
    let pass = !s.is_unstable(DEFAULT_OSCILLATION_THRESHOLD)
        && s.convergence_time.is_some()
        && s.lyapunov_violations.unwrap_or(0) == 0;
    Ok(pass)
}

fn solve(sc: &Scenario, out: &Path) -> Result<bool> {
    let m = &sc.model;
    let p = &sc.params;
    let sol = solve_generalized_primal(m, p, SOLVE_TOLERANCE * 1e-2)?;
    let kelly = solve_kelly_primal(m, p, SOLVE_TOLERANCE * 1e-2)?;
    let kkt = kkt_residual(m, p, &sol.x, &sol.y, &sol.u, &sol.mu, &sol.nu);
    let lemma = verify_lemma1(m, p, SOLVE_TOLERANCE)?;
    let mut b = Vec::new();
    writeln!(b, "objective = {:?}", sol.objective)?;
    writeln!(b, "x = {:?}", sol.x)?;
    writeln!(b, "y = {:?}", sol.y)?;
    writeln!(b, "ybar = {:?}", sol.ybar(p))?;
    writeln!(b, "mu = {:?}", sol.mu)?;
    writeln!(b, "nu = {:?}", sol.nu)?;
    writeln!(b, "newton_iterations = {}", sol.newton_iterations)?;
    writeln!(b, "kkt_residual = {:?}", kkt.max())?;
    writeln!(b, "kelly_objective = {:?}", kelly.objective)?;
    writeln!(b, "kelly_x = {:?}", kelly.x)?;
    writeln!(b, "e_gamma = {:?}", lemma.bound.e_gamma)?;
    writeln!(b, "lemma1_lower_slack = {:?}", lemma.lower_slack)?;
    writeln!(b, "lemma1_upper_slack = {:?}", lemma.upper_slack)?;
    let pass = kkt.max() < SOLVE_TOLERANCE && lemma.pass;
    writeln!(b, "verdict = {}", if pass { "pass" } else { "fail" })?;
    emit(out, "solution.txt", &b)?;
    Ok(pass)
}

fn nyquist(sc: &Scenario, out: &Path, opts: &NyquistOptions) -> Result<bool> {
    let eq = sim::scenario_equilibrium(sc)?;
    let gains = sim::delay_gains(sc, Some(&eq))?;
    let lin = linearize(&sc.model, &sc.params, &gains, &eq)?;
    let result = nyquist_check(&lin, opts);
    let mut loci = create(out, "loci.csv")?;
    write_loci_csv(&result, &mut loci)?;
    loci.flush()?;
    let mut b = Vec::new();
    writeln!(b, "grid_points = {}", result.theta.len())?;
    writeln!(b, "crossings = {}", result.crossings.len())?;
    for c in &result.crossings {
        writeln!(b, "  theta = {:?} real = {:?} locus = {}", c.theta, c.real, c.locus)?;
    }
    writeln!(b, "tangencies = {}", result.tangencies.len())?;
    writeln!(b, "min_crossing = {:?}", result.min_crossing)?;
    writeln!(b, "k_bound = {:?}", result.k_bound)?;
    writeln!(b, "max_locus_jump = {:?}", result.max_jump)?;
    writeln!(b, "verdict = {:?}", result.verdict)?;
    emit(out, "nyquist.txt", &b)?;
    Ok(result.verdict == NyquistVerdict::Pass)
}
