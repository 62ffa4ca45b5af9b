//! Baseline aggregation rules. Each consumes one round's client updates and
//! produces the next global model.

mod foolsgold;
mod geomed;
mod krum;
mod trimmed_mean;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use foolsgold::{foolsgold, FoolsGoldParams, FoolsGoldState};
pub use geomed::{geomed, geomed_objective, GeoMedParams};
pub(crate) use geomed::geomed_weights;
pub use krum::{krum, krum_scores, krum_select};
pub use trimmed_mean::trimmed_mean;
pub(crate) use trimmed_mean::trimmed_mean_with_usage;

use crate::client::ClientUpdate;
use crate::tensor::{weighted_sum, ParamVector};
use crate::{FlError, Result};

/// Which rule the server applies. Serialized as a compact string:
/// `fedavg`, `geomed`, `trimmed_mean:<trim>`, `krum:<f>`, `foolsgold`, `fedaot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregatorChoice {
    FedAvg,
    GeoMed,
    TrimmedMean { trim_count: usize },
    Krum { assumed_attackers: usize },
    FoolsGold,
    FedAot,
}

impl AggregatorChoice {
    /// Checks the rule's constraints for a round of `n` participants.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        match *self {
            AggregatorChoice::TrimmedMean { trim_count } if 2 * trim_count >= n => Err(FlError::config(format!(
                "trimmed_mean:{trim_count} needs 2*trim < participants ({n})"
            ))),
            AggregatorChoice::Krum { assumed_attackers } if n < 2 * assumed_attackers + 3 => {
                Err(FlError::config(format!(
                    "krum:{assumed_attackers} needs at least {} participants, got {n}",
                    2 * assumed_attackers + 3
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorChoice::FedAvg => "fedavg",
            AggregatorChoice::GeoMed => "geomed",
            AggregatorChoice::TrimmedMean { .. } => "trimmed_mean",
            AggregatorChoice::Krum { .. } => "krum",
            AggregatorChoice::FoolsGold => "foolsgold",
            AggregatorChoice::FedAot => "fedaot",
        }
    }
}

impl fmt::Display for AggregatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregatorChoice::TrimmedMean { trim_count } => write!(f, "trimmed_mean:{trim_count}"),
            AggregatorChoice::Krum { assumed_attackers } => write!(f, "krum:{assumed_attackers}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for AggregatorChoice {
    type Err = FlError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let count = |what: &str| -> Result<usize> {
            arg.ok_or_else(|| FlError::config(format!("{name} needs a {what}, e.g. {name}:2")))?
                .parse()
                .map_err(|_| FlError::config(format!("{name}: {what} must be a non-negative integer")))
        };
        let choice = match name {
            "fedavg" => AggregatorChoice::FedAvg,
            "geomed" => AggregatorChoice::GeoMed,
            "foolsgold" => AggregatorChoice::FoolsGold,
            "fedaot" => AggregatorChoice::FedAot,
            "trimmed_mean" => AggregatorChoice::TrimmedMean {
                trim_count: count("trim count")?,
            },
            "krum" => AggregatorChoice::Krum {
                assumed_attackers: count("assumed attacker count")?,
            },
            other => {
                return Err(FlError::config(format!(
                    "unknown aggregator `{other}`; accepted fedavg, geomed, trimmed_mean:<trim>, krum:<f>, foolsgold, fedaot"
                )))
            }
        };
        if arg.is_some() && !matches!(name, "trimmed_mean" | "krum") {
            return Err(FlError::config(format!("{name} takes no argument")));
        }
        Ok(choice)
    }
}

impl Serialize for AggregatorChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AggregatorChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) fn check_round(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| FlError::Protocol("no client updates in round".into()))?;
    let len = first.params.len();
    if let Some(bad) = updates.iter().find(|u| u.params.len() != len) {
        return Err(FlError::Protocol(format!(
            "client {} sent {} parameters, expected {len}",
            bad.client_id,
            bad.params.len()
        )));
    }
    Ok(len)
}

/// `Σ p_i ω_i` with `p_i = n_i / Σ n_j`.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let len = check_round(updates)?;
    let total: usize = updates.iter().map(|u| u.num_samples).sum();
    let coeffs: Vec<f64> = if total == 0 {
        vec![1.0 / updates.len() as f64; updates.len()]
    } else {
        updates
            .iter()
            .map(|u| u.num_samples as f64 / total as f64)
            .collect()
    };
    Ok(weighted_sum(updates.iter().map(|u| u.params.as_slice()), &coeffs, len))
}

/// Unweighted mean of the updates.
pub fn mean(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let len = check_round(updates)?;
    let coeffs = vec![1.0 / updates.len() as f64; updates.len()];
    Ok(weighted_sum(updates.iter().map(|u| u.params.as_slice()), &coeffs, len))
}

#[cfg(test)]
pub(crate) fn updates_from(vectors: &[Vec<f64>]) -> Vec<ClientUpdate> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| ClientUpdate::new(i, ParamVector::new(v.clone()), 10))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fedavg_examples() {
        let u = updates_from(&[vec![0.0, 0.0], vec![2.0, 4.0]]);
        assert_eq!(fedavg(&u).unwrap().as_slice(), &[1.0, 2.0]);

        let mut u = updates_from(&[vec![0.0], vec![4.0]]);
        u[0].num_samples = 1;
        u[1].num_samples = 3;
        assert_eq!(fedavg(&u).unwrap().as_slice(), &[3.0]);

        let single = updates_from(&[vec![1.5, -2.0]]);
        assert_eq!(fedavg(&single).unwrap().as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn empty_round_is_protocol_error() {
        assert!(matches!(fedavg(&[]), Err(FlError::Protocol(_))));
        let ragged = updates_from(&[vec![0.0], vec![1.0, 2.0]]);
        assert!(matches!(fedavg(&ragged), Err(FlError::Protocol(_))));
    }

    #[test]
    fn choice_string_round_trip() {
        for s in ["fedavg", "geomed", "trimmed_mean:2", "krum:1", "foolsgold", "fedaot"] {
            let c: AggregatorChoice = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert!("krum".parse::<AggregatorChoice>().is_err());
        assert!("fedavg:3".parse::<AggregatorChoice>().is_err());
        assert!("median".parse::<AggregatorChoice>().is_err());
    }

    #[test]
    fn choice_constraints() {
        assert!(AggregatorChoice::TrimmedMean { trim_count: 2 }.validate_for(5).is_ok());
        assert!(AggregatorChoice::TrimmedMean { trim_count: 3 }.validate_for(6).is_err());
        assert!(AggregatorChoice::Krum { assumed_attackers: 1 }.validate_for(5).is_ok());
        assert!(AggregatorChoice::Krum { assumed_attackers: 2 }.validate_for(6).is_err());
    }
}
