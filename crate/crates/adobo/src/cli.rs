//! The experiment command-line interface.
//!
//! Three subcommands: `run` executes a method on a plant for one or more
//! seeds and persists run directories; `oracle` computes and caches the
//! best achievable cost; `compare` aggregates finished runs into regret
//! tables and plot-ready CSV.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig, Method};
use crate::oracle::compute_oracle;
use crate::rng::{stream_rng, RngStream};
use crate::runio::{
    compare, oracle_cache_key, oracle_cache_load, oracle_cache_store, write_run,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "adobo",
    version,
    about = "Tune linear dynamics models for closed-loop performance on benchmark plants"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment method for one or more seeds.
    Run(RunArgs),
    /// Compute (and cache) the best achievable cost for a setup.
    Oracle(OracleArgs),
    /// Aggregate finished run directories into comparison tables.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config file (TOML). Mutually exclusive with --plant.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Benchmark preset to run instead of a config file.
    #[arg(long)]
    pub plant: Option<String>,
    /// Method override: adobo|qr|klearn|ls|useq.
    #[arg(long)]
    pub method: Option<String>,
    /// Evaluation budget override.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Single seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed fan-out: "1..5" (inclusive) or "1,2,3".
    #[arg(long)]
    pub seeds: Option<String>,
    /// Cost warping override: on|off.
    #[arg(long)]
    pub warp: Option<String>,
    /// Base output directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub plant: Option<String>,
    /// Multistart count override for the nonlinear oracle.
    #[arg(long)]
    pub multistarts: Option<usize>,
    /// RNG seed for the oracle multistarts.
    #[arg(long)]
    pub oracle_seed: Option<u64>,
    /// Base output directory (holds the oracle cache).
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Finished run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Iteration checkpoints, e.g. "200,400,600". Default: the shortest
    /// budget across runs.
    #[arg(long)]
    pub checkpoints: Option<String>,
    /// Directory for comparison.csv and eta_curves.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_main() -> i32 {
    main_with_args(std::env::args())
}

/// Testable entry point.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return EXIT_CONFIG;
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn base_config(config: &Option<PathBuf>, plant: &Option<String>) -> Result<ExperimentConfig> {
    match (config, plant) {
        (Some(path), None) => ConfigFile::load(path)?.resolve(),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (Some(_), Some(_)) => Err(Error::Config(
            "pass either --config or --plant, not both".into(),
        )),
        (None, None) => Err(Error::Config("one of --config or --plant is required".into())),
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        if hi < lo {
            return Err(Error::Config(format!("empty seed range '{spec}'")));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed '{s}'")))
        })
        .collect()
}

/// Look up the oracle value for `config`, computing and caching on miss.
fn cached_oracle_value(config: &ExperimentConfig, out: &std::path::Path) -> Result<f64> {
    if let Some(v) = config.oracle_value {
        return Ok(v);
    }
    let cache_dir = out.join("oracle_cache");
    let key = oracle_cache_key(config);
    if let Some(entry) = oracle_cache_load(&cache_dir, &key) {
        return Ok(entry.value);
    }
    let mut rng = stream_rng(config.oracle_seed, RngStream::Oracle);
    let outcome = compute_oracle(
        &config.plant,
        &config.cost,
        &config.x0,
        config.horizon,
        config.oracle_multistarts,
        &config.input_bounds,
        &mut rng,
    )?;
    oracle_cache_store(&cache_dir, &key, config, &outcome)?;
    Ok(outcome.value)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = base_config(&args.config, &args.plant)?;
    if let Some(m) = &args.method {
        config.method = Method::from_name(m)?;
    }
    if let Some(b) = args.budget {
        config.budget = b;
    }
    if let Some(w) = &args.warp {
        config.warp = match w.as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(Error::Config(format!("--warp takes on|off, got '{other}'")))
            }
        };
    }
    if args.seed.is_some() && args.seeds.is_some() {
        return Err(Error::Config("pass either --seed or --seeds, not both".into()));
    }
    let seeds = match (&args.seeds, args.seed) {
        (Some(spec), _) => parse_seeds(spec)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![config.seed],
    };
    config.validate()?;

    let j_star = cached_oracle_value(&config, &args.out)?;
    config.oracle_value = Some(j_star);

    for &seed in &seeds {
        let mut run_config = config.clone();
        run_config.seed = seed;
        let dir = args.out.join(format!(
            "{}-{}-seed{}",
            run_config.plant.name(),
            run_config.method.name(),
            seed
        ));
        let start = Instant::now();
        let records = run_experiment(&run_config)?;
        let wall = start.elapsed().as_secs_f64();
        write_run(&dir, &run_config, j_star, &records, wall)?;
        let last = records.last().expect("budget >= 1");
        println!(
            "{} method={} seed={} best_cost={:.6} eta={:.3}% ({} iterations, {:.1}s)",
            dir.display(),
            run_config.method.name(),
            seed,
            last.best_cost,
            last.eta,
            records.len(),
            wall
        );
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let mut config = base_config(&args.config, &args.plant)?;
    if let Some(k) = args.multistarts {
        config.oracle_multistarts = k;
    }
    if let Some(s) = args.oracle_seed {
        config.oracle_seed = s;
    }
    config.oracle_value = None;
    config.validate()?;

    let cache_dir = args.out.join("oracle_cache");
    let key = oracle_cache_key(&config);
    if let Some(entry) = oracle_cache_load(&cache_dir, &key) {
        println!(
            "J_star = {} (plant={}, method={}, certificate={:e}, cached)",
            entry.value, entry.plant, entry.method, entry.certificate
        );
        return Ok(());
    }
    let mut rng = stream_rng(config.oracle_seed, RngStream::Oracle);
    let outcome = compute_oracle(
        &config.plant,
        &config.cost,
        &config.x0,
        config.horizon,
        config.oracle_multistarts,
        &config.input_bounds,
        &mut rng,
    )?;
    oracle_cache_store(&cache_dir, &key, &config, &outcome)?;
    println!(
        "J_star = {} (plant={}, method={}, certificate={:e})",
        outcome.value,
        config.plant.name(),
        outcome.method.name(),
        outcome.certificate
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let checkpoints = match &args.checkpoints {
        Some(spec) => spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad checkpoint '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    // Default checkpoint: the shortest budget across the runs.
    let report = if checkpoints.is_empty() {
        let probe = compare(&args.runs, &[])?;
        let min_budget = probe.methods.iter().map(|m| m.min_budget).min().unwrap_or(1);
        compare(&args.runs, &[min_budget])?
    } else {
        compare(&args.runs, &checkpoints)?
    };
    print!("{}", report.table());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("comparison.csv"), report.checkpoint_csv())?;
        std::fs::write(out.join("eta_curves.csv"), report.curve_csv())?;
        println!("wrote {}/comparison.csv and eta_curves.csv", out.display());
    }
    Ok(())
}
