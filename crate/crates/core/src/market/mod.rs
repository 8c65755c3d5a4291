//! Market clearing: fees, prices, Shapley payment division and settlement.
//!
//! Every party pays a fee `α_i = c·(1 − G_i)` up front, is charged
//! `c·a′_i` for the improvement `a′_i` the market model gives it over its
//! standalone model, and receives `b_i = c·a·φ̂_i` where `a = Σ a′_j` and
//! `φ̂` are normalized Shapley values of the market's characteristic
//! function. The unused part of the fee is returned.

pub mod multi;
pub mod single;

use std::collections::{HashMap, HashSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::gain::Gain;
use crate::shapley::{self, CharacteristicFunction, Coalition, EXACT_CAP};

pub use multi::{char_multi, clear_multi, clear_multi_with, distinct_tasks, prepare_multi, MultiSetup, TaskIndex};
pub use single::{char_single, clear_single, clear_single_with, fee, participation_check, ParticipationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Party {
    pub id: u32,
    pub training: LabeledDataset,
    pub validation: LabeledDataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_of: Option<u32>,
}

impl Party {
    pub fn new(id: u32, training: LabeledDataset, validation: LabeledDataset) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::EmptyDataset("party training data"));
        }
        Ok(Self {
            id,
            training,
            validation,
            replica_of: None,
        })
    }

    /// The id of the party this one copies, or its own id.
    pub fn family(&self) -> u32 {
        self.replica_of.unwrap_or(self.id)
    }
}

/// Rejects empty rosters, duplicate ids and parties without training data.
pub fn validate_roster(parties: &[Party]) -> Result<()> {
    if parties.is_empty() {
        return Err(Error::invalid("market needs at least one party"));
    }
    let mut seen = HashSet::new();
    for p in parties {
        if !seen.insert(p.id) {
            return Err(Error::DuplicateParty(p.id));
        }
        if p.training.is_empty() {
            return Err(Error::EmptyDataset("party training data"));
        }
    }
    Ok(())
}

/// Roster position of the party with `id`.
pub fn position(parties: &[Party], id: u32) -> Result<usize> {
    parties.iter().position(|p| p.id == id).ok_or(Error::UnknownParty(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub unit_price: f64,
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub exact_cap: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            unit_price: 1.0,
            tau: 0.0,
            lambda: 1.0,
            epsilon: 0.05,
            exact_cap: EXACT_CAP,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.unit_price > 0.0 && self.unit_price.is_finite()) {
            return Err(Error::invalid(format!("unit_price must be positive, got {}", self.unit_price)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.exact_cap == 0 || self.exact_cap > shapley::MAX_PLAYERS {
            return Err(Error::invalid(format!(
                "exact_cap must lie in 1..={}, got {}",
                shapley::MAX_PLAYERS,
                self.exact_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ShapleyMethod {
    #[default]
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClearOptions {
    pub method: ShapleyMethod,
    /// Include the full characteristic-function table in the outcome.
    pub audit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyOutcome {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_of: Option<u32>,
    pub fee: f64,
    pub standalone_gain: f64,
    pub market_gain: f64,
    pub price: f64,
    pub shapley_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapley_std_error: Option<f64>,
    pub share: f64,
    pub payout: f64,
    pub returned: f64,
    pub net: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionValue {
    pub coalition: Coalition,
    pub members: Vec<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub representative: u32,
    pub parties: Vec<u32>,
    /// `φ(u_t, j)` for every party `j`, in roster order.
    pub data_values: Vec<f64>,
    /// Parties passing the threshold, before owners are force-included.
    pub selected: Vec<u32>,
    /// Gain of the task model trained on all relevant data.
    pub market_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantSet {
    pub party: u32,
    pub relevant: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasksSection {
    pub tasks: Vec<TaskOutcome>,
    pub relevance: Vec<RelevantSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub unit_price: f64,
    pub parties: Vec<PartyOutcome>,
    /// Total price `a = Σ a′_i`.
    pub pool: f64,
    /// Characteristic value of the grand coalition.
    pub total_value: f64,
    /// Gain of the market model trained on everyone's data (single task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_gain: Option<f64>,
    /// True when no party gained anything and all fees were returned.
    pub refunded: bool,
    pub method: ShapleyMethod,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characteristic: Option<Vec<CoalitionValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<TasksSection>,
}

impl MarketOutcome {
    pub fn party(&self, id: u32) -> Option<&PartyOutcome> {
        self.parties.iter().find(|p| p.id == id)
    }

    pub fn shares(&self) -> Vec<f64> {
        self.parties.iter().map(|p| p.share).collect()
    }

    pub fn nets(&self) -> Vec<f64> {
        self.parties.iter().map(|p| p.net).collect()
    }

    /// Sum of net settlements of `id` and all its replicas.
    pub fn family_net(&self, id: u32) -> f64 {
        self.parties
            .iter()
            .filter(|p| p.id == id || p.replica_of == Some(id))
            .map(|p| p.net)
            .sum()
    }

    /// Sum of normalized shares of `id` and all its replicas.
    pub fn family_share(&self, id: u32) -> f64 {
        self.parties
            .iter()
            .filter(|p| p.id == id || p.replica_of == Some(id))
            .map(|p| p.share)
            .sum()
    }
}

/// Memo of `G(V, f(⊕_{j∈S} T_j))` per coalition for one validation set,
/// with `G(∅) = 0`.
pub struct CoalitionGains<'a> {
    gain: &'a dyn Gain,
    validation: &'a LabeledDataset,
    trainings: Vec<&'a LabeledDataset>,
    memo: RwLock<HashMap<u32, f64>>,
}

impl<'a> CoalitionGains<'a> {
    pub fn new(gain: &'a dyn Gain, validation: &'a LabeledDataset, parties: &'a [Party]) -> Self {
        Self {
            gain,
            validation,
            trainings: parties.iter().map(|p| &p.training).collect(),
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn get(&self, s: Coalition) -> Result<f64> {
        if s.is_empty() {
            return Ok(0.0);
        }
        if let Some(&g) = self.memo.read().expect("memo lock").get(&s.0) {
            return Ok(g);
        }
        let data = LabeledDataset::concat_all(s.members().map(|j| self.trainings[j]))?;
        let g = self
            .gain
            .evaluate(self.validation, &data)
            .map_err(|e| Error::Coalition {
                coalition: s.0,
                source: Box::new(e),
            })?;
        Ok(*self.memo.write().expect("memo lock").entry(s.0).or_insert(g))
    }
}

pub(crate) fn audit_table(cf: &CharacteristicFunction<'_>, ids: &[u32]) -> Result<Vec<CoalitionValue>> {
    let table = cf.table()?;
    Ok(table
        .iter()
        .enumerate()
        .map(|(m, &value)| {
            let c = Coalition(m as u32);
            CoalitionValue {
                coalition: c,
                members: c.members().map(|i| ids[i]).collect(),
                value,
            }
        })
        .collect())
}

/// Raw Shapley values (and standard errors when sampled).
pub(crate) fn compute_shapley(
    cf: &CharacteristicFunction<'_>,
    method: ShapleyMethod,
    cap: usize,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    match method {
        ShapleyMethod::Exact => Ok((shapley::shapley_exact_capped(cf, cap)?, None)),
        ShapleyMethod::Sampled { permutations, seed } => {
            let s = shapley::shapley_sampled(cf, permutations, seed)?;
            Ok((s.estimates, Some(s.std_errors)))
        }
    }
}

/// Per-party inputs to settlement.
pub(crate) struct Ledger<'p> {
    pub parties: &'p [Party],
    pub standalone: Vec<f64>,
    pub market_gain: Vec<f64>,
    pub phi: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub total: f64,
}

/// Turns gains and Shapley values into fees, prices, payouts and nets.
pub(crate) fn settle(ledger: Ledger<'_>, cfg: &MarketConfig, method: ShapleyMethod) -> Result<MarketOutcome> {
    let c = cfg.unit_price;
    let shares = shapley::normalize(&ledger.phi, ledger.total)?;
    let mut warnings = Vec::new();
    let prices: Vec<f64> = ledger
        .parties
        .iter()
        .zip(ledger.market_gain.iter().zip(&ledger.standalone))
        .map(|(p, (m, s))| {
            let raw = m - s;
            if raw < 0.0 {
                let msg = format!("party {}: market model is worse than standalone by {:.3e}; price clamped to 0", p.id, -raw);
                log::warn!("{msg}");
                warnings.push(msg);
                0.0
            } else {
                raw
            }
        })
        .collect();
    let pool: f64 = prices.iter().sum();
    let refunded = pool == 0.0;

    let parties = ledger
        .parties
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let fee = c * (1.0 - ledger.standalone[k]);
            let payout = if refunded { 0.0 } else { c * pool * shares[k] };
            let charge = c * prices[k];
            PartyOutcome {
                id: p.id,
                replica_of: p.replica_of,
                fee,
                standalone_gain: ledger.standalone[k],
                market_gain: ledger.market_gain[k],
                price: prices[k],
                shapley_value: ledger.phi[k],
                shapley_std_error: ledger.std_errors.as_ref().map(|se| se[k]),
                share: shares[k],
                payout,
                returned: fee - charge + payout,
                net: payout - charge,
            }
        })
        .collect();

    Ok(MarketOutcome {
        unit_price: c,
        parties,
        pool,
        total_value: ledger.total,
        final_gain: None,
        refunded,
        method,
        warnings,
        characteristic: None,
        tasks: None,
    })
}
