//! Batch front-end: configure, run, and serialize rolling simulations,
//! round-trip and holonomy checks, convergence studies, stochastic
//! integrals and Monte Carlo martingale tests.
//!
//! All options live in a TOML config file and/or command-line flags; flags
//! override the file. Every output file embeds the hash of the resolved
//! configuration, and re-running a command with the same config and seed
//! reproduces outputs bit-identically regardless of `--threads`.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "manifold-roller", version, about)]
struct Cli {
    /// TOML configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Monte Carlo path count.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Grid steps over the horizon.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Time horizon T.
    #[arg(long, global = true)]
    horizon: Option<f64>,

    /// Geometry: flat:<d> or sphere:<d>.
    #[arg(long, global = true)]
    manifold: Option<String>,

    /// Connection rule: euclid, proj or geo.
    #[arg(long, global = true)]
    rule: Option<String>,

    /// Stepping scheme: euler or heun.
    #[arg(long, global = true)]
    scheme: Option<String>,

    /// Output directory (default "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; default: MANIFOLD_ROLLER_THREADS or all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Martingale-test pass threshold on |z|.
    #[arg(long, global = true)]
    z_threshold: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a driver path and write it as JSON-lines and CSV.
    GenDriver,
    /// Develop a driver onto the manifold (from file or generated).
    Develop {
        /// Driver JSON-lines file; generated from the config when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Horizontal lift: rebuild frames above a rolled path.
    Lift {
        /// Rolled-path JSON-lines file (frames not required).
        #[arg(long)]
        input: PathBuf,
    },
    /// Anti-develop a rolled path (frames required) back to a driver.
    Antidevelop {
        /// Rolled-path JSON-lines file with frames.
        #[arg(long)]
        input: PathBuf,
    },
    /// Develop then anti-develop across refinement levels and report the
    /// driver reconstruction error.
    Roundtrip {
        /// Number of dyadic refinement levels (default 3).
        #[arg(long)]
        levels: Option<usize>,
        /// Pass threshold on the finest-level sup error (default 1e-2).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Transport a frame around the sphere octant loop and compare the
    /// holonomy angle against the enclosed area.
    Holonomy {
        /// Subdivisions per leg; 0 uses exact single-geodesic legs.
        #[arg(long, default_value_t = 0)]
        loop_steps: usize,
        /// Pass threshold on the angle deviation (default 1e-6 exact,
        /// 2e-3 discretized).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Self-convergence of development under grid refinement.
    Convergence {
        /// Number of levels including the base grid (default 4).
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Ito/Stratonovich integrals and quadratic variation along a
    /// developed (or loaded) path.
    Integrate {
        /// Rolled-path JSON-lines file with frames; developed from the
        /// config when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Monte Carlo martingale test of the sphere construction.
    MartingaleTest {
        /// Skip jump compensation (drifting negative control).
        #[arg(long)]
        no_compensate: bool,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.paths = paths;
    }
    if let Some(steps) = cli.steps {
        cfg.steps = steps;
    }
    if let Some(horizon) = cli.horizon {
        cfg.horizon = horizon;
    }
    if let Some(manifold) = &cli.manifold {
        cfg.manifold = manifold.clone();
    }
    if let Some(rule) = &cli.rule {
        cfg.rule = rule.clone();
    }
    if let Some(scheme) = &cli.scheme {
        cfg.scheme = scheme.clone();
    }
    if let Some(z) = cli.z_threshold {
        cfg.z_threshold = z;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        if n == 0 {
            anyhow::bail!("--threads must be positive");
        }
        return Ok(n);
    }
    if let Ok(value) = std::env::var("MANIFOLD_ROLLER_THREADS") {
        let n: usize = value
            .parse()
            .context("MANIFOLD_ROLLER_THREADS must be a positive integer")?;
        if n == 0 {
            anyhow::bail!("MANIFOLD_ROLLER_THREADS must be positive");
        }
        return Ok(n);
    }
    Ok(std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1))
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("cannot build thread pool")?;

    let ctx = runner::Ctx::new(cfg, out)?;
    pool.install(|| match &cli.command {
        Command::GenDriver => ctx.gen_driver().map(|_| true),
        Command::Develop { input } => ctx.develop(input.as_deref()).map(|_| true),
        Command::Lift { input } => ctx.lift(input).map(|_| true),
        Command::Antidevelop { input } => ctx.antidevelop(input).map(|_| true),
        Command::Roundtrip { levels, tol } => ctx.roundtrip(levels.unwrap_or(3), *tol),
        Command::Holonomy { loop_steps, tol } => ctx.holonomy(*loop_steps, *tol),
        Command::Convergence { levels } => ctx.convergence(levels.unwrap_or(4)).map(|_| true),
        Command::Integrate { input } => ctx.integrate(input.as_deref()).map(|_| true),
        Command::MartingaleTest { no_compensate } => ctx.martingale_test(*no_compensate),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
