//! Multi-task market. Each distinct validation task `t ∈ P_D` gets its own
//! model trained on the relevant data `D_t`, and the characteristic function
//! is
//! `w(S) = Σ_{t∈P_D} G_t(S∩D_t) + Σ_{i∈S} [G_i(S∩D_i) − G_i({i})]`
//! with `G(∅) = 0`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    audit_table, compute_shapley, settle, validate_roster, ClearOptions, Ledger, MarketConfig, MarketOutcome, Party,
    RelevantSet, TaskOutcome, TasksSection,
};
use crate::dataset::{LabeledDataset, RecordKey};
use crate::error::{Error, Result};
use crate::gain::Gain;
use crate::selection::select_relevant;
use crate::shapley::{shapley_exact_capped, CharacteristicFunction, Coalition};

/// Groups parties by validation task. Tasks are equal iff their validation
/// sets are equal as multisets; the first party with a task represents it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskIndex {
    /// Roster position of each party's representative.
    pub representative: Vec<usize>,
    /// Roster positions of the representatives, in first-seen order.
    pub distinct: Vec<usize>,
}

impl TaskIndex {
    pub fn len(&self) -> usize {
        self.distinct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distinct.is_empty()
    }

    /// Roster positions of the parties sharing task `rep`.
    pub fn members(&self, rep: usize) -> Vec<usize> {
        (0..self.representative.len())
            .filter(|&i| self.representative[i] == rep)
            .collect()
    }
}

pub fn distinct_tasks(parties: &[Party]) -> TaskIndex {
    let mut seen: HashMap<(usize, Vec<RecordKey>), usize> = HashMap::new();
    let mut representative = Vec::with_capacity(parties.len());
    let mut distinct = Vec::new();
    for (i, p) in parties.iter().enumerate() {
        let key = (p.validation.dim(), p.validation.multiset_key());
        let rep = *seen.entry(key).or_insert_with(|| {
            distinct.push(i);
            i
        });
        representative.push(rep);
    }
    TaskIndex {
        representative,
        distinct,
    }
}

/// Memo of `G(V_t, f(⊕_{j∈S} T_j))` keyed by (task representative, S).
pub(crate) struct TaskGains<'a> {
    gain: &'a dyn Gain,
    parties: &'a [Party],
    memo: RwLock<HashMap<(usize, u32), f64>>,
}

impl<'a> TaskGains<'a> {
    pub(crate) fn new(gain: &'a dyn Gain, parties: &'a [Party]) -> Self {
        Self {
            gain,
            parties,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub(crate) fn get(&self, task: usize, s: Coalition) -> Result<f64> {
        if s.is_empty() {
            return Ok(0.0);
        }
        if let Some(&g) = self.memo.read().expect("memo lock").get(&(task, s.0)) {
            return Ok(g);
        }
        let data = LabeledDataset::concat_all(s.members().map(|j| &self.parties[j].training))?;
        let g = self
            .gain
            .evaluate(&self.parties[task].validation, &data)
            .map_err(|e| Error::TaskCoalition {
                task: self.parties[task].id,
                coalition: s.0,
                source: Box::new(e),
            })?;
        Ok(*self.memo.write().expect("memo lock").entry((task, s.0)).or_insert(g))
    }
}

fn check_relevance(m: usize, relevance: &[Coalition]) -> Result<()> {
    if relevance.len() != m {
        return Err(Error::invalid(format!(
            "relevance has {} entries for {m} parties",
            relevance.len()
        )));
    }
    for (i, d) in relevance.iter().enumerate() {
        if !d.contains(i) {
            return Err(Error::invalid(format!("party at position {i} is missing from its own relevant set")));
        }
        if !d.is_subset_of(Coalition::grand(m)) {
            return Err(Error::invalid(format!("relevant set of position {i} names unknown parties")));
        }
    }
    Ok(())
}

fn char_from_task_gains<'a>(
    gains: Arc<TaskGains<'a>>,
    tasks: TaskIndex,
    relevance: Vec<Coalition>,
) -> Result<CharacteristicFunction<'a>> {
    let m = relevance.len();
    CharacteristicFunction::new(m, move |s: Coalition| {
        let mut w = 0.0;
        for &t in &tasks.distinct {
            w += gains.get(t, s.intersect(relevance[t]))?;
        }
        for i in s.members() {
            let t = tasks.representative[i];
            w += gains.get(t, s.intersect(relevance[i]))? - gains.get(t, Coalition::singleton(i))?;
        }
        Ok(w)
    })
}

/// The multi-task characteristic function. `relevance[i]` is `D_i` for the
/// party at roster position `i` and must contain `i`.
pub fn char_multi<'a>(
    g: &'a dyn Gain,
    parties: &'a [Party],
    relevance: &[Coalition],
) -> Result<CharacteristicFunction<'a>> {
    check_relevance(parties.len(), relevance)?;
    char_from_task_gains(
        Arc::new(TaskGains::new(g, parties)),
        distinct_tasks(parties),
        relevance.to_vec(),
    )
}

/// Task grouping plus per-task data values and relevant sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSetup {
    pub tasks: TaskIndex,
    /// `φ(u_t, ·)` for each distinct task, aligned with `tasks.distinct`.
    pub values: Vec<Vec<f64>>,
    /// Threshold selection for each distinct task, before owners are added.
    pub selected: Vec<Coalition>,
    /// `D_i` per roster position.
    pub relevance: Vec<Coalition>,
}

fn setup_with(gains: &TaskGains<'_>, parties: &[Party], cfg: &MarketConfig) -> Result<MultiSetup> {
    let m = parties.len();
    let tasks = distinct_tasks(parties);
    let mut values = Vec::with_capacity(tasks.len());
    let mut selected = Vec::with_capacity(tasks.len());
    for &t in &tasks.distinct {
        let u = CharacteristicFunction::new(m, |s| gains.get(t, s))?;
        let phi = shapley_exact_capped(&u, cfg.exact_cap)?;
        selected.push(Coalition::from_members(select_relevant(&phi, cfg.tau, None)?));
        values.push(phi);
    }
    let relevance = (0..m)
        .map(|i| {
            let k = tasks
                .distinct
                .iter()
                .position(|&t| t == tasks.representative[i])
                .expect("representative is distinct");
            selected[k].with(i)
        })
        .collect();
    Ok(MultiSetup {
        tasks,
        values,
        selected,
        relevance,
    })
}

/// Groups tasks and runs threshold selection with `cfg.tau`.
pub fn prepare_multi(parties: &[Party], g: &dyn Gain, cfg: &MarketConfig) -> Result<MultiSetup> {
    cfg.validate()?;
    validate_roster(parties)?;
    setup_with(&TaskGains::new(g, parties), parties, cfg)
}

pub fn clear_multi(parties: &[Party], g: &dyn Gain, cfg: &MarketConfig) -> Result<MarketOutcome> {
    clear_multi_with(parties, g, cfg, &ClearOptions::default())
}

pub fn clear_multi_with(
    parties: &[Party],
    g: &dyn Gain,
    cfg: &MarketConfig,
    opts: &ClearOptions,
) -> Result<MarketOutcome> {
    cfg.validate()?;
    validate_roster(parties)?;
    let m = parties.len();
    let gains = Arc::new(TaskGains::new(g, parties));
    let setup = setup_with(&gains, parties, cfg)?;
    let cf = char_from_task_gains(Arc::clone(&gains), setup.tasks.clone(), setup.relevance.clone())?;

    let (phi, std_errors) = compute_shapley(&cf, opts.method, cfg.exact_cap)?;
    let total = cf.grand_value()?;
    let mut standalone = Vec::with_capacity(m);
    let mut market_gain = Vec::with_capacity(m);
    for i in 0..m {
        let t = setup.tasks.representative[i];
        standalone.push(gains.get(t, Coalition::singleton(i))?);
        market_gain.push(gains.get(t, setup.relevance[i])?);
    }

    let mut outcome = settle(
        Ledger {
            parties,
            standalone,
            market_gain,
            phi,
            std_errors,
            total,
        },
        cfg,
        opts.method,
    )?;

    let ids = |c: Coalition| -> Vec<u32> { c.members().map(|j| parties[j].id).collect() };
    let mut task_outcomes = Vec::with_capacity(setup.tasks.len());
    for (k, &t) in setup.tasks.distinct.iter().enumerate() {
        task_outcomes.push(TaskOutcome {
            representative: parties[t].id,
            parties: setup.tasks.members(t).into_iter().map(|j| parties[j].id).collect(),
            data_values: setup.values[k].clone(),
            selected: ids(setup.selected[k]),
            market_gain: gains.get(t, setup.relevance[t])?,
        });
    }
    outcome.tasks = Some(TasksSection {
        tasks: task_outcomes,
        relevance: (0..m)
            .map(|i| RelevantSet {
                party: parties[i].id,
                relevant: ids(setup.relevance[i]),
            })
            .collect(),
    });
    if opts.audit {
        let all: Vec<u32> = parties.iter().map(|p| p.id).collect();
        outcome.characteristic = Some(audit_table(&cf, &all)?);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::{GainFunction, EXACT_TOLERANCE};
    use crate::market::clear_single;
    use crate::setfn::check_supermodular;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    /// Task 1 wants items {1,2}, task 2 wants {3,4}; each party holds one of each.
    fn symmetric_two_task() -> (GainFunction, Vec<Party>) {
        let v1 = LabeledDataset::items(&[1, 2]);
        let v2 = LabeledDataset::items(&[3, 4]);
        let parties = vec![
            Party::new(1, LabeledDataset::items(&[1, 3]), v1).unwrap(),
            Party::new(2, LabeledDataset::items(&[2, 4]), v2).unwrap(),
        ];
        (GainFunction::task_coverage(2.0), parties)
    }

    #[test]
    fn task_grouping() {
        let a = LabeledDataset::items(&[1]);
        let b = LabeledDataset::items(&[2]);
        let t = LabeledDataset::items(&[5]);
        let p = |id, v: &LabeledDataset| Party::new(id, t.clone(), v.clone()).unwrap();
        assert_eq!(distinct_tasks(&[p(1, &a), p(2, &a)]).len(), 1);
        assert_eq!(distinct_tasks(&[p(1, &a), p(2, &b)]).len(), 2);
        let idx = distinct_tasks(&[p(1, &a), p(2, &b), p(3, &a)]);
        assert_eq!(idx.distinct, vec![0, 1]);
        assert_eq!(idx.representative, vec![0, 1, 0]);
        assert_eq!(idx.members(0), vec![0, 2]);
    }

    #[test]
    fn symmetric_two_task_values() {
        let (g, parties) = symmetric_two_task();
        let all = vec![Coalition(3), Coalition(3)];
        let w = char_multi(&g, &parties, &all).unwrap();
        assert!(close(w.value(Coalition(1)).unwrap(), 0.5));
        assert!(close(w.value(Coalition(2)).unwrap(), 0.5));
        assert!(close(w.value(Coalition(3)).unwrap(), 3.5));
        assert_eq!(w.value(Coalition::EMPTY).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_two_task_clearing() {
        let (g, parties) = symmetric_two_task();
        let out = clear_multi(&parties, &g, &MarketConfig::default()).unwrap();
        for p in &out.parties {
            assert!(close(p.share, 0.5));
            assert!(close(p.price, 0.75));
            assert!(close(p.payout, 0.75));
            assert!(close(p.net, 0.0));
        }
        let tasks = out.tasks.unwrap();
        assert_eq!(tasks.tasks.len(), 2);
        assert_eq!(tasks.relevance[0].relevant, vec![1, 2]);
    }

    #[test]
    fn single_task_matches_single_market() {
        let v = LabeledDataset::items(&[1, 2, 3, 4]);
        let parties = vec![
            Party::new(1, LabeledDataset::items(&[1]), v.clone()).unwrap(),
            Party::new(2, LabeledDataset::items(&[2, 3]), v.clone()).unwrap(),
        ];
        let g = GainFunction::task_coverage(2.0);
        let cfg = MarketConfig::default();
        let multi = clear_multi(&parties, &g, &cfg).unwrap();
        let single = clear_single(&parties, &v, &g, &cfg).unwrap();
        for (a, b) in multi.parties.iter().zip(&single.parties) {
            assert!(close(a.net, b.net) && close(a.share, b.share) && close(a.price, b.price));
        }
        assert!(close(multi.total_value, 1.375));
    }

    #[test]
    fn irrelevant_party_is_null() {
        let v1 = LabeledDataset::items(&[1, 2]);
        let parties = vec![
            Party::new(1, LabeledDataset::items(&[1]), v1.clone()).unwrap(),
            Party::new(2, LabeledDataset::items(&[2]), v1.clone()).unwrap(),
            // its data serves no task and no data serves its task, so it is a null player under w
            Party::new(3, LabeledDataset::items(&[9]), LabeledDataset::items(&[7])).unwrap(),
        ];
        let g = GainFunction::task_coverage(2.0);
        let cfg = MarketConfig {
            tau: 0.01,
            ..Default::default()
        };
        let out = clear_multi(&parties, &g, &cfg).unwrap();
        let o = out.party(3).unwrap();
        assert!(o.share.abs() < 1e-12);
        assert!(o.payout.abs() < 1e-12);
        assert_eq!(o.returned, o.fee);
        assert_eq!(out.tasks.unwrap().tasks[0].selected, vec![1, 2]);
    }

    #[test]
    fn relevance_must_contain_owner() {
        let (g, parties) = symmetric_two_task();
        assert!(char_multi(&g, &parties, &[Coalition(2), Coalition(3)]).is_err());
        assert!(char_multi(&g, &parties, &[Coalition(3)]).is_err());
    }

    /// Random multi-task market: `k` tasks over disjoint item ranges, each
    /// party owns one task and a disjoint endowment drawn across all items.
    pub(crate) fn arb_multi() -> impl Strategy<Value = (f64, Vec<usize>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        (2usize..=3, 1u32..=3).prop_flat_map(|(k, p)| {
            (
                prop::collection::vec(2usize..=3, k),
                (2usize..=5).prop_flat_map(move |m| {
                    (prop::collection::vec(0..k, m), prop::collection::vec(prop::collection::vec(0usize..100, 1..=3), m))
                }),
            )
                .prop_map(move |(task_sizes, (owners, raw))| {
                    let mut next = 0;
                    let tasks: Vec<Vec<usize>> = task_sizes
                        .iter()
                        .map(|&s| {
                            let v: Vec<usize> = (next..next + s).collect();
                            next += s;
                            v
                        })
                        .collect();
                    // item j is owned by the first party drawing it; universe is 0..next plus noise items
                    let mut taken = std::collections::HashSet::new();
                    let endow: Vec<Vec<usize>> = raw
                        .into_iter()
                        .enumerate()
                        .map(|(pi, draws)| {
                            let mut mine: Vec<usize> = draws
                                .into_iter()
                                .map(|d| d % (next + 2))
                                .filter(|d| taken.insert(*d))
                                .collect();
                            if mine.is_empty() {
                                // a private item nobody's task asks for
                                mine.push(1000 + pi);
                            }
                            mine
                        })
                        .collect();
                    (f64::from(p), owners, tasks, endow)
                })
        })
    }

    pub(crate) fn build_multi(owners: &[usize], tasks: &[Vec<usize>], endow: &[Vec<usize>]) -> Vec<Party> {
        owners
            .iter()
            .zip(endow)
            .enumerate()
            .map(|(i, (&t, e))| {
                Party::new(i as u32 + 1, LabeledDataset::items(e), LabeledDataset::items(&tasks[t])).unwrap()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fairness((p, owners, tasks, endow) in arb_multi()) {
            let parties = build_multi(&owners, &tasks, &endow);
            let g = GainFunction::task_coverage(p);
            match clear_multi(&parties, &g, &MarketConfig::default()) {
                Ok(out) => {
                    prop_assert!(out.nets().iter().sum::<f64>().abs() < 1e-9);
                    prop_assert!((out.shares().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for o in &out.parties {
                        prop_assert!(o.payout >= 0.0);
                        if o.price == 0.0 {
                            prop_assert!(o.returned >= o.fee - 1e-12);
                        }
                    }
                }
                Err(Error::NonPositiveTotal(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn supermodularity_propagates((p, owners, tasks, endow) in arb_multi()) {
            let parties = build_multi(&owners, &tasks, &endow);
            let g = GainFunction::task_coverage(p);
            let setup = prepare_multi(&parties, &g, &MarketConfig::default()).unwrap();
            let w = char_multi(&g, &parties, &setup.relevance).unwrap();
            prop_assert!(check_supermodular(&w.table().unwrap(), EXACT_TOLERANCE).holds);
        }
    }
}
