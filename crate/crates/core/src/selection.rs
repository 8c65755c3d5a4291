//! Shapley-threshold training-data selection per validation task.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::gain::Gain;
use crate::market::{CoalitionGains, Party};
use crate::shapley::{shapley_exact_capped, CharacteristicFunction, EXACT_CAP};

/// Shapley values `φ(u, j)` of every party's data for the task `v`, where
/// `u(S) = G(v, f(⊕_{j∈S} T_j))` and `u(∅) = 0`.
pub fn data_value(g: &dyn Gain, v: &LabeledDataset, parties: &[Party]) -> Result<Vec<f64>> {
    data_value_capped(g, v, parties, EXACT_CAP)
}

pub fn data_value_capped(g: &dyn Gain, v: &LabeledDataset, parties: &[Party], cap: usize) -> Result<Vec<f64>> {
    let gains = CoalitionGains::new(g, v, parties);
    let u = CharacteristicFunction::new(parties.len(), |s| gains.get(s))?;
    shapley_exact_capped(&u, cap)
}

/// Roster positions `j` with `values[j] ≥ tau`, plus `owner` regardless of
/// its value. Sorted ascending.
pub fn select_relevant(values: &[f64], tau: f64, owner: Option<usize>) -> Result<Vec<usize>> {
    if !tau.is_finite() {
        return Err(Error::invalid(format!("threshold {tau} is not finite")));
    }
    if let Some(j) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("data value of party at position {j} is not finite")));
    }
    if let Some(o) = owner {
        if o >= values.len() {
            return Err(Error::invalid(format!("owner position {o} out of range")));
        }
    }
    Ok((0..values.len())
        .filter(|&j| values[j] >= tau || Some(j) == owner)
        .collect())
}
