//! Command implementations behind the `fedaot` binary: strict config parsing,
//! experiment and sweep runners that write run directories, and SVG plotting.

pub mod config;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use fedaot_core::aggregators::AggregatorChoice;
use fedaot_core::engine::{intensity_label, run_experiment, run_sweep, FederationConfig};
use fedaot_core::FlError;

use crate::output::{create_run_dir, write_bundle, write_sweep_table, SweepRow, SWEEP_FILE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] FlError),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("{failed} of {total} sweep experiments failed; see {table}")]
    SweepFailed { failed: usize, total: usize, table: PathBuf },
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut FederationConfig) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(())
    }
}

/// Runs one experiment and writes its bundle into a fresh run directory.
pub fn cmd_run(config: &FederationConfig, out: &Path) -> Result<PathBuf, CliError> {
    config.validate()?;
    let result = run_experiment(config)?;
    let dir = create_run_dir(out, config)?;
    write_bundle(&dir, &result)?;
    log::info!(
        "final accuracy {:.4}, macro-F1 {:.4}",
        result.final_accuracy,
        result.final_f1
    );
    Ok(dir)
}

/// Runs every aggregator at every fraction. The run directory holds
/// `accuracy_vs_attack.csv` plus `<aggregator>/<A..>/` bundles. Failed
/// experiments are kept as `failed` rows and turn the result into an error
/// once everything else is written.
pub fn cmd_sweep(
    config: &FederationConfig,
    fractions: &[f64],
    aggregators: &[AggregatorChoice],
    out: &Path,
) -> Result<PathBuf, CliError> {
    if fractions.is_empty() {
        return Err(CliError::Config(
            "no attack fractions: pass --fractions or set sweep.fractions".into(),
        ));
    }
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config(format!("fraction {f} is out of range; accepted [0, 1]")));
        }
    }
    let aggregators = if aggregators.is_empty() {
        vec![config.aggregator]
    } else {
        aggregators.to_vec()
    };
    let dir = create_run_dir(out, config)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for &agg in &aggregators {
        let mut base = config.clone();
        base.aggregator = agg;
        let agg_dir = dir.join(agg.to_string().replace(':', "-"));
        for outcome in run_sweep(&base, fractions) {
            let row = match &outcome.result {
                Ok(result) => {
                    let sub = agg_dir.join(intensity_label(outcome.fraction));
                    std::fs::create_dir_all(&sub).map_err(output::io_err(&sub))?;
                    write_bundle(&sub, result)?;
                    SweepRow {
                        fraction: outcome.fraction,
                        aggregator: agg.to_string(),
                        final_accuracy: Some(result.final_accuracy),
                        final_f1: Some(result.final_f1),
                    }
                }
                Err(_) => {
                    failed += 1;
                    SweepRow {
                        fraction: outcome.fraction,
                        aggregator: agg.to_string(),
                        final_accuracy: None,
                        final_f1: None,
                    }
                }
            };
            rows.push(row);
        }
    }
    let table = dir.join(SWEEP_FILE);
    write_sweep_table(&table, &rows)?;
    if failed > 0 {
        return Err(CliError::SweepFailed {
            failed,
            total: rows.len(),
            table,
        });
    }
    Ok(dir)
}

/// Parses a comma-separated list such as `0.2,0.5,0.9`.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("--fractions: '{p}' is not a number")))
        })
        .collect()
}

/// Parses a comma-separated list of aggregator names.
pub fn parse_aggregators(s: &str) -> Result<Vec<AggregatorChoice>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|e: FlError| CliError::Config(format!("--aggregators: {e}"))))
        .collect()
}
