use super::check_round;
use crate::client::ClientUpdate;
use crate::tensor::{squared_distance, ParamVector};
use crate::{FlError, Result};

/// Krum score of every update: the sum of squared distances to its
/// `n − f − 2` nearest neighbours.
pub fn krum_scores(updates: &[ClientUpdate], assumed_attackers: usize) -> Result<Vec<f64>> {
    check_round(updates)?;
    let n = updates.len();
    if n < 2 * assumed_attackers + 3 {
        return Err(FlError::config(format!(
            "krum with f = {assumed_attackers} needs at least {} updates, got {n}",
            2 * assumed_attackers + 3
        )));
    }
    let neighbours = n - assumed_attackers - 2;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&updates[i].params, &updates[j].params);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            row.swap_remove(i);
            row.sort_unstable_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect())
}

/// Position (within `updates`) of the Krum winner; ties go to the lowest position.
pub fn krum_select(updates: &[ClientUpdate], assumed_attackers: usize) -> Result<usize> {
    let scores = krum_scores(updates, assumed_attackers)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn krum(updates: &[ClientUpdate], assumed_attackers: usize) -> Result<ParamVector> {
    let i = krum_select(updates, assumed_attackers)?;
    Ok(updates[i].params.clone())
}
