use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedaot_cli::config::{parse_config, DEFAULTS_REFERENCE};
use fedaot_cli::{cmd_run, cmd_sweep, parse_aggregators, parse_fractions, plot, CliError, Overrides};

#[derive(Parser)]
#[command(name = "fedaot", version, about = "Deterministic federated-learning simulator with meta-learned aggregation")]
struct Cli {
    /// Worker threads for local training (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// Run an attack-fraction sweep for one or more aggregators.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated attacker fractions, e.g. 0.2,0.5,0.9.
        #[arg(long)]
        fractions: Option<String>,
        /// Comma-separated aggregators, e.g. fedavg,krum:2,fedaot.
        #[arg(long)]
        aggregators: Option<String>,
    },
    /// Render SVG charts for a run or sweep directory.
    Plot {
        /// Run or sweep directory.
        dir: PathBuf,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print every config key with its default.
    Defaults,
}

fn load(args: &RunArgs) -> Result<fedaot_core::engine::FederationConfig, CliError> {
    let mut config = parse_config(&args.config)?;
    Overrides { seed: args.seed }.apply(&mut config)?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Run(args) => {
            let config = load(&args)?;
            let dir = cmd_run(&config, &args.out)?;
            println!("{}", dir.display());
        }
        Command::Sweep {
            run,
            fractions,
            aggregators,
        } => {
            let config = load(&run)?;
            let fractions = match fractions {
                Some(s) => parse_fractions(&s)?,
                None => config.sweep.fractions.clone(),
            };
            let aggregators = match aggregators {
                Some(s) => parse_aggregators(&s)?,
                None => config.sweep.aggregators.clone(),
            };
            let dir = cmd_sweep(&config, &fractions, &aggregators, &run.out)?;
            println!("{}", dir.display());
        }
        Command::Plot { dir } => {
            for path in plot::plot_dir(&dir)? {
                println!("{}", path.display());
            }
        }
        Command::Validate { config } => {
            let c = parse_config(&config)?;
            println!(
                "ok: {} clients, {} rounds, aggregator {}, hash {}",
                c.num_clients,
                c.rounds,
                c.aggregator,
                fedaot_cli::config::config_hash(&c)
            );
        }
        Command::Defaults => print!("{DEFAULTS_REFERENCE}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) | CliError::Engine(fedaot_core::FlError::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
