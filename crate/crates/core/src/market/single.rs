//! Single-task market: every party shares one validation set `V` and the
//! characteristic function is
//! `v(S) = G(V; f_S) + Σ_{j∈S} [G(V; f_S) − G(V; f_j)]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    audit_table, compute_shapley, settle, validate_roster, ClearOptions, CoalitionGains, Ledger, MarketConfig,
    MarketOutcome, Party,
};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::gain::Gain;
use crate::shapley::{CharacteristicFunction, Coalition};

/// Participation fee `c·(1 − G(V, f(T)))`.
pub fn fee(g: &dyn Gain, v: &LabeledDataset, t: &LabeledDataset, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("unit price must be positive, got {c}")));
    }
    if t.is_empty() {
        return Err(Error::EmptyDataset("party training data"));
    }
    Ok(c * (1.0 - g.evaluate(v, t)?))
}

pub(crate) fn char_from_gains<'a>(gains: Arc<CoalitionGains<'a>>, m: usize) -> Result<CharacteristicFunction<'a>> {
    CharacteristicFunction::new(m, move |s: Coalition| {
        let gs = gains.get(s)?;
        let mut singles = 0.0;
        for j in s.members() {
            singles += gains.get(Coalition::singleton(j))?;
        }
        Ok(gs * (1.0 + s.len() as f64) - singles)
    })
}

/// The single-task characteristic function over `parties` (indexed by
/// roster position).
pub fn char_single<'a>(
    g: &'a dyn Gain,
    v: &'a LabeledDataset,
    parties: &'a [Party],
) -> Result<CharacteristicFunction<'a>> {
    char_from_gains(Arc::new(CoalitionGains::new(g, v, parties)), parties.len())
}

fn check_shared_task(parties: &[Party], v: &LabeledDataset) -> Result<()> {
    for p in parties {
        if !p.validation.same_multiset(v) {
            return Err(Error::invalid(format!(
                "party {} has a different validation task; use the multi-task market",
                p.id
            )));
        }
    }
    Ok(())
}

pub fn clear_single(
    parties: &[Party],
    v: &LabeledDataset,
    g: &dyn Gain,
    cfg: &MarketConfig,
) -> Result<MarketOutcome> {
    clear_single_with(parties, v, g, cfg, &ClearOptions::default())
}

pub fn clear_single_with(
    parties: &[Party],
    v: &LabeledDataset,
    g: &dyn Gain,
    cfg: &MarketConfig,
    opts: &ClearOptions,
) -> Result<MarketOutcome> {
    cfg.validate()?;
    validate_roster(parties)?;
    check_shared_task(parties, v)?;
    let m = parties.len();
    let gains = Arc::new(CoalitionGains::new(g, v, parties));
    let cf = char_from_gains(Arc::clone(&gains), m)?;

    let (phi, std_errors) = compute_shapley(&cf, opts.method, cfg.exact_cap)?;
    let total = cf.grand_value()?;
    let final_gain = gains.get(Coalition::grand(m))?;
    let standalone = (0..m)
        .map(|i| gains.get(Coalition::singleton(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut outcome = settle(
        Ledger {
            parties,
            standalone,
            market_gain: vec![final_gain; m],
            phi,
            std_errors,
            total,
        },
        cfg,
        opts.method,
    )?;
    outcome.final_gain = Some(final_gain);
    if opts.audit {
        let ids: Vec<u32> = parties.iter().map(|p| p.id).collect();
        outcome.characteristic = Some(audit_table(&cf, &ids)?);
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantStatus {
    pub id: u32,
    /// Some other party strictly improves when this party's data is added.
    pub helps_someone: bool,
    /// Some strictly larger coalition strictly improves on this party alone.
    pub improved_by_market: bool,
    pub eligible: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationReport {
    pub eligible: Vec<u32>,
    pub parties: Vec<ParticipantStatus>,
}

/// A party is eligible iff its data strictly helps at least one other party
/// and at least one coalition containing it strictly beats its standalone
/// model. Pure buyers and pure sellers fail one of the two.
pub fn participation_check(parties: &[Party], g: &dyn Gain, v: &LabeledDataset) -> Result<ParticipationReport> {
    validate_roster(parties)?;
    let m = parties.len();
    if m < 2 {
        return Err(Error::invalid("participation criteria need at least two parties"));
    }
    if m > crate::shapley::EXACT_CAP {
        return Err(Error::TooManyPlayers {
            players: m,
            cap: crate::shapley::EXACT_CAP,
        });
    }
    let gains = CoalitionGains::new(g, v, parties);
    let mut statuses = Vec::with_capacity(m);
    for i in 0..m {
        let gi = gains.get(Coalition::singleton(i))?;
        let mut helps_someone = false;
        for j in (0..m).filter(|&j| j != i) {
            if gains.get(Coalition::from_members([i, j]))? > gains.get(Coalition::singleton(j))? {
                helps_someone = true;
                break;
            }
        }
        let mut improved_by_market = false;
        let others = Coalition::grand(m).without(i).0;
        let mut sub = others;
        while sub != 0 {
            if gains.get(Coalition(sub).with(i))? > gi {
                improved_by_market = true;
                break;
            }
            sub = (sub - 1) & others;
        }
        let reason = match (helps_someone, improved_by_market) {
            (true, true) => "eligible".to_string(),
            (false, true) => "pure buyer: its data improves no other party".to_string(),
            (true, false) => "pure seller: no coalition improves on its own model".to_string(),
            (false, false) => "neither helps others nor is helped by the market".to_string(),
        };
        statuses.push(ParticipantStatus {
            id: parties[i].id,
            helps_someone,
            improved_by_market,
            eligible: helps_someone && improved_by_market,
            reason,
        });
    }
    Ok(ParticipationReport {
        eligible: statuses.iter().filter(|s| s.eligible).map(|s| s.id).collect(),
        parties: statuses,
    })
}
