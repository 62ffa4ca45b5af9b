//! Run directories and the CSV/JSON files written into them.

use std::fs;
use std::path::{Path, PathBuf};

use fedaot_core::engine::{ExperimentResult, FederationConfig};
use serde::Serialize;

use crate::config::config_hash;
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const K_HISTORY_FILE: &str = "k_history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "accuracy_vs_attack.csv";

/// Formats with 6 significant digits, `%g` style, independent of locale.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Creates `<out>/<config hash>-<UTC timestamp>`, adding a counter suffix if
/// that name is taken.
pub fn create_run_dir(out: &Path, config: &FederationConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{}-{stamp}", config_hash(config));
    let mut dir = out.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = out.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

pub fn write_metrics(path: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["round", "accuracy", "macro_f1", "meta_loss"]).map_err(csv_err(path))?;
    for r in &result.records {
        w.write_record([
            r.round.to_string(),
            fmt_sig(r.accuracy),
            fmt_sig(r.macro_f1),
            fmt_sig(r.meta_loss),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_k_history(path: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["round", "client", "k", "malicious"]).map_err(csv_err(path))?;
    for r in &result.records {
        for (client, (k, m)) in r.k.iter().zip(&r.malicious).enumerate() {
            w.write_record([r.round.to_string(), client.to_string(), fmt_sig(*k), m.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: String,
    created: String,
    config: &'a FederationConfig,
    attackers: &'a [usize],
    final_accuracy: f64,
    final_macro_f1: f64,
    final_mean_k_honest: Option<f64>,
    final_mean_k_malicious: Option<f64>,
    degenerate_resets: usize,
    final_model_digest: Option<String>,
    wall_time_secs: f64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn write_summary(path: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    let last = result.mean_k_trajectory.last().copied().unwrap_or((f64::NAN, f64::NAN));
    let summary = Summary {
        config_hash: config_hash(&result.config),
        created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config: &result.config,
        attackers: &result.attackers,
        final_accuracy: result.final_accuracy,
        final_macro_f1: result.final_f1,
        final_mean_k_honest: finite(last.0),
        final_mean_k_malicious: finite(last.1),
        degenerate_resets: result.degenerate_resets,
        final_model_digest: result.records.last().map(|r| format!("{:016x}", r.model_digest)),
        wall_time_secs: result.records.iter().map(|r| r.wall_time_secs).sum(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes metrics, k history and summary into `dir`.
pub fn write_bundle(dir: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    write_metrics(&dir.join(METRICS_FILE), result)?;
    write_k_history(&dir.join(K_HISTORY_FILE), result)?;
    write_summary(&dir.join(SUMMARY_FILE), result)
}

/// One row of `accuracy_vs_attack.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub aggregator: String,
    pub final_accuracy: Option<f64>,
    pub final_f1: Option<f64>,
}

pub fn write_sweep_table(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["fraction", "aggregator", "final_accuracy", "final_f1", "status"])
        .map_err(csv_err(path))?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        let status = if r.final_accuracy.is_some() { "ok" } else { "failed" };
        w.write_record([
            fmt_sig(r.fraction),
            r.aggregator.clone(),
            opt(r.final_accuracy),
            opt(r.final_f1),
            status.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.123456789), "0.123457");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig(0.05), "0.05");
        assert_eq!(fmt_sig(-2.5e-7), "-2.5e-07");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(0.999_999_9), "1");
        assert_eq!(fmt_sig(f64::NAN), "nan");
    }
}
