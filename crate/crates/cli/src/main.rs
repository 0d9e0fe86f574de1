//! Command-line driver: solves mean-field and N-player equilibria from
//! JSON configs and runs the verification suite, writing CSV/JSON
//! artifacts.
//!
//! Exit codes: 0 success, 2 config/validation error, 3 verification
//! failure (`verify.json` is still written).

mod checks;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use ezmfg_core::model::{validate, Population, Regime};
use ezmfg_core::nplayer::solve_nplayer;
use ezmfg_core::simulate::{path_summary, SimConfig, SimulationReport};

#[derive(Parser)]
#[command(name = "ezmfg", version, about = "Epstein-Zin mean-field portfolio game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field equilibrium and write equilibrium.csv.
    SolveMfg(CommonArgs),
    /// Solve the N-player equilibrium and write nplayer.csv.
    SolveNplayer(CommonArgs),
    /// Run one verification check and write verify.json.
    Verify {
        #[arg(value_enum)]
        check: CheckKind,
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Run every check applicable to the config and write verify.json.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the grid resolution with a uniform step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Perturbation sizes for the best-response check.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps: Option<Vec<f64>>,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum CheckKind {
    Riccati,
    FixedPoint,
    BestResponse,
    Recursion,
    NplayerLimit,
    PowerReduction,
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// `EZMFG_THREADS` caps the simulation worker pool.
fn configure_threads() {
    if let Ok(raw) = std::env::var("EZMFG_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

struct Loaded {
    config: RunConfig,
    raw_bytes: Vec<u8>,
    sim: SimConfig,
    eps: Vec<f64>,
}

fn load(args: &CommonArgs) -> Result<Loaded> {
    let raw_bytes = std::fs::read(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut config = RunConfig::load(&args.config)?;
    if let Some(dt) = args.dt {
        if !(dt.is_finite() && dt > 0.0 && dt <= config.horizon) {
            bail!("--dt must lie in (0, T]");
        }
        config.grid.n_cells = (config.horizon / dt).round().max(1.0) as usize;
    }
    if let Some(paths) = args.paths {
        config.sim.n_paths = paths;
    }
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    let config = config.normalized()?;
    let sim = config.sim_config();
    let eps = args.eps.clone().unwrap_or_else(|| checks::DEFAULT_EPS.to_vec());
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;
    Ok(Loaded { config, raw_bytes, sim, eps })
}

fn validated_population(config: &RunConfig) -> Result<Population> {
    let population = config.to_population()?;
    let report = validate(&population, config.regime);
    if !report.is_ok() {
        bail!("invalid population: {}", report.violations.join("; "));
    }
    Ok(population)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SolveMfg(args) => {
            let loaded = load(&args)?;
            let population = validated_population(&loaded.config)?;
            let eq = checks::solved(&population)?;
            output::write_equilibrium_csv(&args.out.join("equilibrium.csv"), &eq)?;
            output::write_meta_json(
                &args.out.join("meta.json"),
                &loaded.raw_bytes,
                loaded.sim.seed,
            )?;
            println!("wrote {}", args.out.join("equilibrium.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveNplayer(args) => {
            let loaded = load(&args)?;
            let game = loaded.config.to_game()?;
            let report = game.validate(loaded.config.regime);
            if !report.is_ok() {
                bail!("invalid game: {}", report.violations.join("; "));
            }
            let eq = solve_nplayer(&game).map_err(|e| anyhow!("{e}"))?;
            output::write_nplayer_csv(&args.out.join("nplayer.csv"), &eq)?;
            output::write_meta_json(
                &args.out.join("meta.json"),
                &loaded.raw_bytes,
                loaded.sim.seed,
            )?;
            println!("wrote {}", args.out.join("nplayer.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { check, args } => {
            let loaded = load(&args)?;
            let population = validated_population(&loaded.config)?;
            let eq = checks::solved(&population)?;
            let entries = match check {
                CheckKind::Riccati => checks::riccati_check(&population, &eq)?,
                CheckKind::FixedPoint => {
                    checks::fixed_point_check(&population, &eq, &loaded.sim)?
                }
                CheckKind::BestResponse => {
                    checks::best_response_check(&population, &eq, &loaded.eps)?
                }
                CheckKind::Recursion => checks::recursion_check(&population, &eq, &loaded.sim)?,
                CheckKind::NplayerLimit => checks::nplayer_limit_check(&population)?,
                CheckKind::PowerReduction => checks::power_reduction_check(&population, &eq)?,
            };
            let report = SimulationReport { checks: entries, path_summary: Vec::new() };
            finish_verification(&args, &loaded, report)
        }
        Command::Report(args) => {
            let loaded = load(&args)?;
            let population = validated_population(&loaded.config)?;
            let eq = checks::solved(&population)?;
            let mut entries = checks::riccati_check(&population, &eq)?;
            entries.extend(checks::fixed_point_check(&population, &eq, &loaded.sim)?);
            entries.extend(checks::recursion_check(&population, &eq, &loaded.sim)?);
            entries.extend(checks::best_response_check(&population, &eq, &loaded.eps)?);
            entries.extend(checks::nplayer_limit_check(&population)?);
            let all_power = population
                .types()
                .all(|(_, a)| (a.prefs.psi * a.prefs.gamma - 1.0).abs() <= 1e-9);
            if loaded.config.regime == Regime::Alternative && all_power {
                entries.extend(checks::power_reduction_check(&population, &eq)?);
            }
            let summary = path_summary(&population, &eq, &loaded.sim)?;
            let report = SimulationReport { checks: entries, path_summary: summary };
            finish_verification(&args, &loaded, report)
        }
    }
}

fn finish_verification(
    args: &CommonArgs,
    loaded: &Loaded,
    report: SimulationReport,
) -> Result<ExitCode> {
    output::write_verify_json(&args.out.join("verify.json"), &report)?;
    output::write_meta_json(&args.out.join("meta.json"), &loaded.raw_bytes, loaded.sim.seed)?;
    for check in &report.checks {
        println!(
            "{:60} estimate {:>14.6e}  {}",
            check.name,
            check.estimate,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failed; see {}", args.out.join("verify.json").display());
        Ok(ExitCode::from(3))
    }
}
