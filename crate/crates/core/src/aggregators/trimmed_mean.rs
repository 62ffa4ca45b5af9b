use super::check_round;
use crate::client::ClientUpdate;
use crate::tensor::ParamVector;
use crate::{FlError, Result};

/// Coordinate-wise mean after dropping the `trim_count` smallest and largest values.
pub fn trimmed_mean(updates: &[ClientUpdate], trim_count: usize) -> Result<ParamVector> {
    trimmed_mean_with_usage(updates, trim_count).map(|(v, _)| v)
}

/// Trimmed mean plus, per update, the fraction of coordinates where its value
/// survived trimming (normalised to sum to one).
pub(crate) fn trimmed_mean_with_usage(updates: &[ClientUpdate], trim_count: usize) -> Result<(ParamVector, Vec<f64>)> {
    let len = check_round(updates)?;
    let n = updates.len();
    if 2 * trim_count >= n {
        return Err(FlError::config(format!(
            "trim count {trim_count} leaves nothing to average over {n} updates"
        )));
    }
    let kept = (n - 2 * trim_count) as f64;
    let mut usage = vec![0usize; n];
    let mut column: Vec<(f64, usize)> = vec![(0.0, 0); n];
    let out = (0..len)
        .map(|j| {
            for (i, (c, u)) in column.iter_mut().zip(updates).enumerate() {
                *c = (u.params[j], i);
            }
            column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let middle = &column[trim_count..n - trim_count];
            for &(_, i) in middle {
                usage[i] += 1;
            }
            middle.iter().map(|(v, _)| v).sum::<f64>() / kept
        })
        .collect();
    let total: usize = usage.iter().sum();
    let share = usage
        .iter()
        .map(|&u| if total == 0 { 1.0 / n as f64 } else { u as f64 / total as f64 })
        .collect();
    Ok((ParamVector::new(out), share))
}
