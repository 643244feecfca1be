use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use landau_cli::commands::{self, RateOptions};
use landau_cli::config::{self, ExperimentConfig};
use landau_cli::manifest::{RunManifest, MANIFEST};
use landau_cli::verify::{self, Fault};
use landau_cli::CliError;

#[derive(Parser)]
#[command(name = "landau", version, about = "Neural particle solver for the homogeneous Landau equation")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "LANDAU_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset; overrides a `preset` key in the file.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the flow and score networks.
    Train(Common),
    /// Run the configured solver and store snapshots.
    Simulate(Common),
    /// Compute metrics for a simulate run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory of the simulate run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Run the invariant suite.
    Verify {
        /// Print per-check timings.
        #[arg(long)]
        verbose: bool,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// KDE error against sample size.
    RateStudy {
        #[command(flatten)]
        common: Common,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        /// Bandwidth prefactor.
        #[arg(long, default_value_t = 0.8)]
        scale: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    KernelSign,
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let text = match (&common.config, fallback) {
        (Some(p), _) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        // evaluate falls back to the config recorded by the run
        (None, Some(run)) if common.preset.is_none() => {
            let p = run.join(MANIFEST);
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            RunManifest::parse(&text)?.config
        }
        (None, _) => String::new(),
    };
    let mut cfg = config::parse(&text, common.preset.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(config::ConfigError::new(format!("threads: {e}"))))?;
    }
    match cli.command {
        Command::Train(c) => {
            let cfg = load_config(&c, None)?;
            commands::train(&cfg, &c.out)?;
        }
        Command::Simulate(c) => {
            let cfg = load_config(&c, None)?;
            commands::simulate(&cfg, &c.out)?;
        }
        Command::Evaluate { common, run } => {
            let cfg = load_config(&common, Some(&run))?;
            commands::evaluate(&cfg, &run, &common.out)?;
        }
        Command::Verify { verbose, inject_fault } => {
            let fault = inject_fault.map(|FaultArg::KernelSign| Fault::KernelSign);
            let results = verify::run(fault);
            if verbose {
                println!("{:<20} {:>9}  {:<6} detail", "check", "seconds", "status");
            }
            for r in &results {
                let status = if r.passed { "ok" } else { "FAIL" };
                if verbose {
                    println!("{:<20} {:>9.3}  {:<6} {}", r.name, r.seconds, status, r.detail);
                } else {
                    println!("{status} {} ({})", r.name, r.detail);
                }
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::Numeric(format!("{failed} check(s) failed")));
            }
        }
        Command::RateStudy { common, ns, replicates, scale } => {
            let cfg = load_config(&common, None)?;
            let mut opts = RateOptions { replicates, scale, ..RateOptions::default() };
            if let Some(ns) = ns {
                opts.ns = ns;
            }
            commands::rate_study(&cfg, &opts, &common.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
