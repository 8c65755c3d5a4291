//! Replication attacks: a party copies its data into fake parties and
//! collects the combined payoff. Compares the honest and replicated
//! settlements and checks the bounds that make the market robust.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::gain::{Gain, GainFunction, EXACT_TOLERANCE};
use crate::market::{
    clear_multi_with, clear_single_with, distinct_tasks, position, validate_roster, ClearOptions, MarketConfig,
    MarketOutcome, Party,
};
use crate::shapley::{shapley_weights, Coalition};

/// Absolute tolerance of every theorem-backed comparison.
pub const ROBUSTNESS_TOLERANCE: f64 = 1e-9;

const MAX_REPORTED_MARGINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    Single,
    Multi,
}

/// Appends `k` copies of party `id` with fresh ids `max_id + 1, …` and
/// `replica_of = id`.
pub fn replicate(parties: &[Party], id: u32, k: usize) -> Result<Vec<Party>> {
    if k == 0 {
        return Err(Error::invalid("replica count must be at least 1"));
    }
    let original = &parties[position(parties, id)?];
    let mut next = parties.iter().map(|p| p.id).max().unwrap_or(0);
    let mut out = parties.to_vec();
    for _ in 0..k {
        next = next
            .checked_add(1)
            .ok_or_else(|| Error::invalid("party ids exhausted"))?;
        out.push(Party {
            id: next,
            training: original.training.clone(),
            validation: original.validation.clone(),
            replica_of: Some(id),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationScenario {
    pub parties: Vec<Party>,
    pub target: u32,
    pub replicas: usize,
}

impl ReplicationScenario {
    pub fn new(parties: Vec<Party>, target: u32, replicas: usize) -> Result<Self> {
        validate_roster(&parties)?;
        position(&parties, target)?;
        if replicas == 0 {
            return Err(Error::invalid("replica count must be at least 1"));
        }
        if parties.iter().any(|p| p.replica_of.is_some()) {
            return Err(Error::invalid("the base roster already contains replicas"));
        }
        Ok(Self {
            parties,
            target,
            replicas,
        })
    }

    pub fn replicated(&self) -> Result<Vec<Party>> {
        replicate(&self.parties, self.target, self.replicas)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginViolation {
    pub coalition: Vec<u32>,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Bounds relating the one-replica market to the honest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// Price `a′_i` of the target in the honest market.
    pub price: f64,
    /// `v(P^R) − v(P)`, expected to equal `a′_i`.
    pub value_shift: f64,
    pub value_shift_error: f64,
    /// Largest marginal of the target over coalitions holding its replica.
    pub max_marginal: f64,
    pub margins_checked: usize,
    pub margin_violations: Vec<MarginViolation>,
    pub margin_violations_truncated: bool,
    /// `φ̂^R(i)` against `(φ(i) + a′_i) / (2 v(P^R))`.
    pub bound_lhs: f64,
    pub bound_rhs: f64,
    /// Present when `a′_i = 0`: `φ̂^R(i) ≤ φ̂(i)/2`.
    pub corollary: Option<CorollaryCheck>,
    /// Total Shapley weight of coalitions holding the replica (one half).
    pub replica_weight: f64,
    /// Normalized Shapley mass of the target from coalitions holding the
    /// replica, bounded by `a′_i / (2 v(P^R))`.
    pub new_coalition_mass: f64,
    pub new_coalition_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub kind: MarketKind,
    pub target: u32,
    pub replicas: usize,
    pub replica_ids: Vec<u32>,
    /// Net payoff of the target in the honest market.
    pub t: f64,
    /// Combined net payoff of the target and its replicas.
    pub t_r: f64,
    /// `c (k+1)(φ̂^R(i) a^R − a′_i)`, which should match `t_r`.
    pub t_r_formula: f64,
    pub share: f64,
    pub share_r: f64,
    pub family_share_r: f64,
    pub price: f64,
    pub pool: f64,
    pub pool_r: f64,
    pub total_value: f64,
    pub total_value_r: f64,
    pub condition1_lhs: Option<f64>,
    pub condition1_rhs: Option<f64>,
    pub lemma_bound_lhs: Option<f64>,
    pub lemma_bound_rhs: Option<f64>,
    pub margin_violations: Vec<MarginViolation>,
    pub lemma: Option<LemmaReport>,
    /// Task partition of the replicated market equals the honest one (multi).
    pub tasks_preserved: Option<bool>,
    /// Only one replica is covered by the robustness argument.
    pub theorem_backed: bool,
    pub verdict: bool,
}

fn clear(kind: MarketKind, parties: &[Party], g: &dyn Gain, cfg: &MarketConfig) -> Result<MarketOutcome> {
    let opts = ClearOptions {
        audit: true,
        ..Default::default()
    };
    match kind {
        MarketKind::Single => {
            let v = &parties.first().ok_or_else(|| Error::invalid("empty roster"))?.validation;
            clear_single_with(parties, v, g, cfg, &opts)
        }
        MarketKind::Multi => clear_multi_with(parties, g, cfg, &opts),
    }
}

fn check_cap(scenario: &ReplicationScenario, cfg: &MarketConfig) -> Result<()> {
    let players = scenario.parties.len() + scenario.replicas;
    if players > cfg.exact_cap {
        return Err(Error::TooManyPlayers {
            players,
            cap: cfg.exact_cap,
        });
    }
    Ok(())
}

fn lemma_from(honest: &MarketOutcome, replicated: &MarketOutcome, target: usize) -> Result<LemmaReport> {
    let table: Vec<f64> = replicated
        .characteristic
        .as_ref()
        .ok_or_else(|| Error::invalid("replicated outcome lacks the characteristic table"))?
        .iter()
        .map(|c| c.value)
        .collect();
    let n = replicated.parties.len();
    let replica = n - 1;
    let ids: Vec<u32> = replicated.parties.iter().map(|p| p.id).collect();
    let mine = &honest.parties[target];
    let price = mine.price;
    let total_r = replicated.total_value;
    let weights = shapley_weights(n);

    let (t_bit, r_bit) = (1u32 << target, 1u32 << replica);
    let mut max_marginal = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut truncated = false;
    let mut replica_weight = 0.0;
    let mut mass = 0.0;
    for s in 0..(1u32 << n) {
        if s & r_bit == 0 || s & t_bit != 0 {
            continue;
        }
        let marginal = table[(s | t_bit) as usize] - table[s as usize];
        let w = weights[s.count_ones() as usize];
        replica_weight += w;
        mass += w * marginal;
        checked += 1;
        max_marginal = max_marginal.max(marginal);
        let excess = marginal - price;
        if excess > EXACT_TOLERANCE {
            if violations.len() < MAX_REPORTED_MARGINS {
                violations.push(MarginViolation {
                    coalition: Coalition(s).members().map(|j| ids[j]).collect(),
                    excess,
                });
            } else {
                truncated = true;
            }
        }
    }

    let value_shift = total_r - honest.total_value;
    let value_shift_error = (value_shift - price).abs();
    let bound_lhs = replicated.parties[target].share;
    let bound_rhs = (mine.shapley_value + price) / (2.0 * total_r);
    let corollary = (price <= EXACT_TOLERANCE).then(|| {
        let rhs = mine.share / 2.0;
        CorollaryCheck {
            lhs: bound_lhs,
            rhs,
            holds: bound_lhs <= rhs + ROBUSTNESS_TOLERANCE,
        }
    });
    let new_coalition_mass = mass / total_r;
    let new_coalition_bound = price / (2.0 * total_r);
    let holds = violations.is_empty()
        && value_shift_error <= ROBUSTNESS_TOLERANCE
        && bound_lhs <= bound_rhs + ROBUSTNESS_TOLERANCE
        && corollary.as_ref().is_none_or(|c| c.holds)
        && (replica_weight - 0.5).abs() <= ROBUSTNESS_TOLERANCE
        && new_coalition_mass <= new_coalition_bound + ROBUSTNESS_TOLERANCE;
    Ok(LemmaReport {
        price,
        value_shift,
        value_shift_error,
        max_marginal,
        margins_checked: checked,
        margin_violations: violations,
        margin_violations_truncated: truncated,
        bound_lhs,
        bound_rhs,
        corollary,
        replica_weight,
        new_coalition_mass,
        new_coalition_bound,
        holds,
    })
}

fn task_ids(parties: &[Party]) -> Vec<u32> {
    distinct_tasks(parties).distinct.iter().map(|&t| parties[t].id).collect()
}

/// Exhaustive lemma checks for a one-replica scenario.
pub fn verify_lemma_bounds(
    scenario: &ReplicationScenario,
    g: &dyn Gain,
    cfg: &MarketConfig,
    kind: MarketKind,
) -> Result<LemmaReport> {
    if scenario.replicas != 1 {
        return Err(Error::invalid("lemma bounds are stated for exactly one replica"));
    }
    check_cap(scenario, cfg)?;
    let target = position(&scenario.parties, scenario.target)?;
    let honest = clear(kind, &scenario.parties, g, cfg)?;
    let replicated = clear(kind, &scenario.replicated()?, g, cfg)?;
    lemma_from(&honest, &replicated, target)
}

/// Clears the honest and the replicated market and compares the target's
/// payoffs.
pub fn attack_payoff(
    scenario: &ReplicationScenario,
    g: &dyn Gain,
    cfg: &MarketConfig,
    kind: MarketKind,
) -> Result<RobustnessReport> {
    check_cap(scenario, cfg)?;
    let target = position(&scenario.parties, scenario.target)?;
    let roster_r = scenario.replicated()?;
    let honest = clear(kind, &scenario.parties, g, cfg)?;
    let replicated = clear(kind, &roster_r, g, cfg)?;

    let mine = &honest.parties[target];
    let k = scenario.replicas;
    let share_r = replicated.parties[target].share;
    let c = cfg.unit_price;
    let t = mine.net;
    let t_r = replicated.family_net(scenario.target);
    let t_r_formula = c * (k + 1) as f64 * (share_r * replicated.pool - mine.price);

    let (condition1_lhs, condition1_rhs) = if k == 1 && honest.pool + mine.price > 0.0 {
        let rhs = (mine.share * honest.pool + mine.price) / (2.0 * (honest.pool + mine.price));
        (Some(share_r), Some(rhs))
    } else {
        (None, None)
    };
    let lemma = if k == 1 {
        Some(lemma_from(&honest, &replicated, target)?)
    } else {
        None
    };
    let tasks_preserved = (kind == MarketKind::Multi).then(|| task_ids(&scenario.parties) == task_ids(&roster_r));

    let verdict = t_r <= t + ROBUSTNESS_TOLERANCE
        && match (condition1_lhs, condition1_rhs) {
            (Some(l), Some(r)) => l <= r + ROBUSTNESS_TOLERANCE,
            _ => true,
        };
    Ok(RobustnessReport {
        kind,
        target: scenario.target,
        replicas: k,
        replica_ids: roster_r[scenario.parties.len()..].iter().map(|p| p.id).collect(),
        t,
        t_r,
        t_r_formula,
        share: mine.share,
        share_r,
        family_share_r: replicated.family_share(scenario.target),
        price: mine.price,
        pool: honest.pool,
        pool_r: replicated.pool,
        total_value: honest.total_value,
        total_value_r: replicated.total_value,
        condition1_lhs,
        condition1_rhs,
        lemma_bound_lhs: lemma.as_ref().map(|l| l.bound_lhs),
        lemma_bound_rhs: lemma.as_ref().map(|l| l.bound_rhs),
        margin_violations: lemma.as_ref().map(|l| l.margin_violations.clone()).unwrap_or_default(),
        lemma,
        tasks_preserved,
        theorem_backed: k == 1,
        verdict,
    })
}

/// A random market with exact synthetic coverage gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMarket {
    pub kind: MarketKind,
    pub gain: GainFunction,
    pub parties: Vec<Party>,
}

/// Draws a market of `m` parties with disjoint, non-empty item endowments
/// from a universe of random size. Single-task markets use universe
/// coverage and share one validation set; multi-task markets draw 2–3
/// distinct item tasks (at most `m`) and use task coverage.
pub fn random_market(kind: MarketKind, m: usize, exponent: f64, rng: &mut impl Rng) -> Result<RandomMarket> {
    if m == 0 {
        return Err(Error::invalid("market needs at least one party"));
    }
    let size = rng.random_range(m..=m + 6);
    let mut items: Vec<usize> = (0..size).collect();
    items.shuffle(rng);
    // m − 1 distinct cut points leave every party at least one item; the
    // tail past a random end stays unowned
    let owned = rng.random_range(m..=size);
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, owned - 1, m - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(owned);
    let endowments: Vec<&[usize]> = cuts.windows(2).map(|w| &items[w[0]..w[1]]).collect();

    let (gain, tasks) = match kind {
        MarketKind::Single => (GainFunction::coverage(size, exponent), vec![(0..size).collect::<Vec<_>>()]),
        MarketKind::Multi => {
            let n_tasks = rng.random_range(2..=3).min(m);
            let mut tasks = Vec::with_capacity(n_tasks);
            while tasks.len() < n_tasks {
                let len = rng.random_range(1..=size);
                let mut t: Vec<usize> = rand::seq::index::sample(rng, size, len).into_iter().collect();
                t.sort_unstable();
                if !tasks.contains(&t) {
                    tasks.push(t);
                }
            }
            (GainFunction::task_coverage(exponent), tasks)
        }
    };
    let mut assignment: Vec<usize> = (0..m).map(|j| if j < tasks.len() { j } else { rng.random_range(0..tasks.len()) }).collect();
    assignment.shuffle(rng);
    let parties = endowments
        .iter()
        .zip(&assignment)
        .enumerate()
        .map(|(j, (own, &t))| Party::new(j as u32 + 1, LabeledDataset::items(own), LabeledDataset::items(&tasks[t])))
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomMarket { kind, gain, parties })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub trials: usize,
    pub min_parties: usize,
    pub max_parties: usize,
    pub seed: u64,
    pub kind: MarketKind,
    /// Use a submodular gain (exponent below 1), outside the theorems.
    pub submodular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub trial: usize,
    pub market: RandomMarket,
    pub report: RobustnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub options: SuiteOptions,
    pub theorem_backed: bool,
    pub attacks: usize,
    /// Trials whose grand coalition has no value (normalization undefined).
    pub skipped: usize,
    /// Attacks with `t_R > t + tolerance` or a failed Condition 1.
    pub payoff_violations: usize,
    pub lemma_violations: usize,
    pub max_payoff_excess: f64,
    pub max_margin_excess: f64,
    pub max_value_shift_error: f64,
    /// Every attack that broke a payoff or lemma check, verbatim.
    pub counterexamples: Vec<SuiteCase>,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.payoff_violations == 0 && self.lemma_violations == 0
    }
}

fn trial_cases(opts: &SuiteOptions, trial: usize, cfg: &MarketConfig) -> Result<Option<Vec<SuiteCase>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(trial as u64);
    let m = rng.random_range(opts.min_parties..=opts.max_parties);
    let exponent = if opts.submodular {
        [0.3, 0.5, 0.7][rng.random_range(0..3)]
    } else {
        f64::from(rng.random_range(1..=3u8))
    };
    let market = random_market(opts.kind, m, exponent, &mut rng)?;
    let mut cases = Vec::with_capacity(m);
    for p in &market.parties {
        let scenario = ReplicationScenario::new(market.parties.clone(), p.id, 1)?;
        let report = match attack_payoff(&scenario, &market.gain, cfg, opts.kind) {
            Ok(r) => r,
            Err(Error::NonPositiveTotal(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        cases.push(SuiteCase {
            trial,
            market: market.clone(),
            report,
        });
    }
    Ok(Some(cases))
}

/// Random replication attacks: every party of every trial market is
/// replicated once in turn. Multi-task markets use threshold `0`.
pub fn randomized_robustness_suite(opts: &SuiteOptions) -> Result<SuiteSummary> {
    if opts.min_parties < 2 || opts.min_parties > opts.max_parties {
        return Err(Error::invalid(format!(
            "party range {}..={} must be non-empty and start at 2 or more",
            opts.min_parties, opts.max_parties
        )));
    }
    let cfg = MarketConfig::default();
    if opts.max_parties + 1 > cfg.exact_cap {
        return Err(Error::TooManyPlayers {
            players: opts.max_parties + 1,
            cap: cfg.exact_cap,
        });
    }
    let trials = (0..opts.trials)
        .into_par_iter()
        .map(|trial| trial_cases(opts, trial, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = SuiteSummary {
        options: opts.clone(),
        theorem_backed: !opts.submodular,
        attacks: 0,
        skipped: 0,
        payoff_violations: 0,
        lemma_violations: 0,
        max_payoff_excess: f64::NEG_INFINITY,
        max_margin_excess: f64::NEG_INFINITY,
        max_value_shift_error: 0.0,
        counterexamples: Vec::new(),
    };
    for cases in trials {
        let Some(cases) = cases else {
            summary.skipped += 1;
            continue;
        };
        for case in cases {
            let r = &case.report;
            let lemma = r.lemma.as_ref().expect("one replica carries lemma checks");
            summary.attacks += 1;
            summary.max_payoff_excess = summary.max_payoff_excess.max(r.t_r - r.t);
            summary.max_margin_excess = summary.max_margin_excess.max(lemma.max_marginal - lemma.price);
            summary.max_value_shift_error = summary.max_value_shift_error.max(lemma.value_shift_error);
            let bad_payoff = !r.verdict;
            if bad_payoff {
                summary.payoff_violations += 1;
            }
            if !lemma.holds {
                summary.lemma_violations += 1;
            }
            if bad_payoff || !lemma.holds {
                if summary.theorem_backed {
                    log::error!("replication check failed for party {} in trial {}", r.target, case.trial);
                }
                summary.counterexamples.push(case);
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_a() -> (GainFunction, Vec<Party>) {
        let v = LabeledDataset::items(&[0, 1, 2, 3]);
        let parties = vec![
            Party::new(1, LabeledDataset::items(&[1]), v.clone()).unwrap(),
            Party::new(2, LabeledDataset::items(&[2, 3]), v).unwrap(),
        ];
        (GainFunction::coverage(4, 2.0), parties)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn replicate_appends_copies() {
        let (_, parties) = scenario_a();
        let r = replicate(&parties, 2, 1).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[2].id, 3);
        assert_eq!(r[2].replica_of, Some(2));
        assert_eq!(r[2].training, r[1].training);
        assert_eq!(r[2].validation, r[1].validation);
        assert_eq!(replicate(&parties, 1, 3).unwrap().iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(replicate(&parties, 2, 0).is_err());
        assert!(matches!(replicate(&parties, 9, 1), Err(Error::UnknownParty(9))));
    }

    #[test]
    fn scenario_a_attack() {
        let (g, parties) = scenario_a();
        let s = ReplicationScenario::new(parties, 2, 1).unwrap();
        let r = attack_payoff(&s, &g, &MarketConfig::default(), MarketKind::Single).unwrap();
        assert!(close(r.total_value_r, 1.6875, 1e-12));
        assert!(close(r.share_r, 0.240741, 1e-6));
        assert!(close(r.condition1_rhs.unwrap(), 0.344066, 1e-6));
        assert!(close(r.t, 0.149148, 1e-6));
        assert!(close(r.t_r, -0.083333, 1e-6));
        assert!(close(r.t_r, r.t_r_formula, 1e-12));
        assert!(r.verdict && r.theorem_backed);
        let lemma = r.lemma.unwrap();
        assert!(close(lemma.bound_rhs, 0.324074, 1e-6));
        assert!(close(lemma.value_shift, 0.3125, 1e-12));
        assert!(close(lemma.max_marginal, 0.3125, 1e-12));
        assert!(lemma.margin_violations.is_empty());
        assert!(close(lemma.replica_weight, 0.5, 1e-12));
        assert!(close(lemma.new_coalition_mass, 0.061728, 1e-6));
        assert!(close(lemma.new_coalition_bound, 0.092593, 1e-6));
        assert!(lemma.holds);
    }

    #[test]
    fn tight_margin_on_original_plus_replica() {
        let (g, parties) = scenario_a();
        let roster = replicate(&parties, 2, 1).unwrap();
        let v = roster[0].validation.clone();
        let cf = crate::market::char_single(&g, &v, &roster).unwrap();
        let s = Coalition::from_members([0, 2]);
        let marginal = cf.value(s.with(1)).unwrap() - cf.value(s).unwrap();
        assert!(close(marginal, 0.3125, 1e-12));
    }

    #[test]
    fn identical_parties_gain_nothing() {
        let v = LabeledDataset::items(&[0, 1, 2]);
        let parties: Vec<Party> = (1..=3)
            .map(|id| Party::new(id, LabeledDataset::items(&[0, 1]), v.clone()).unwrap())
            .collect();
        let g = GainFunction::coverage(3, 2.0);
        for k in 1..=3 {
            let s = ReplicationScenario::new(parties.clone(), 2, k).unwrap();
            let r = attack_payoff(&s, &g, &MarketConfig::default(), MarketKind::Single).unwrap();
            assert_eq!(r.t, 0.0);
            assert_eq!(r.t_r, 0.0);
        }
    }

    #[test]
    fn zero_price_corollary() {
        // party 2's data adds nothing for its task beyond what it already has
        let v = LabeledDataset::items(&[0, 1]);
        let parties = vec![
            Party::new(1, LabeledDataset::items(&[0]), v.clone()).unwrap(),
            Party::new(2, LabeledDataset::items(&[0, 1]), v).unwrap(),
        ];
        let g = GainFunction::coverage(2, 1.0);
        let s = ReplicationScenario::new(parties, 2, 1).unwrap();
        let lemma = verify_lemma_bounds(&s, &g, &MarketConfig::default(), MarketKind::Single).unwrap();
        assert_eq!(lemma.price, 0.0);
        let cor = lemma.corollary.unwrap();
        assert!(cor.holds, "{cor:?}");
        assert!(lemma.holds);
        assert!(close(lemma.new_coalition_mass, 0.0, 1e-12));
    }

    #[test]
    fn symmetric_two_task_market() {
        let t1 = LabeledDataset::items(&[0]);
        let t2 = LabeledDataset::items(&[1]);
        let parties = vec![
            Party::new(1, t2.clone(), t1.clone()).unwrap(),
            Party::new(2, t1, t2).unwrap(),
        ];
        let g = GainFunction::task_coverage(1.0);
        for id in [1, 2] {
            let s = ReplicationScenario::new(parties.clone(), id, 1).unwrap();
            let r = attack_payoff(&s, &g, &MarketConfig::default(), MarketKind::Multi).unwrap();
            assert!(r.t_r <= r.t + ROBUSTNESS_TOLERANCE, "{r:?}");
            assert_eq!(r.tasks_preserved, Some(true));
            assert!(r.lemma.unwrap().holds);
        }
    }

    #[test]
    fn several_replicas_are_reported_not_backed() {
        let (g, parties) = scenario_a();
        let s = ReplicationScenario::new(parties, 2, 3).unwrap();
        let r = attack_payoff(&s, &g, &MarketConfig::default(), MarketKind::Single).unwrap();
        assert!(!r.theorem_backed);
        assert!(r.lemma.is_none() && r.condition1_lhs.is_none());
        assert_eq!(r.replica_ids, vec![3, 4, 5]);
        assert!(close(r.t_r, r.t_r_formula, 1e-12));
        assert!(verify_lemma_bounds(&s, &g, &MarketConfig::default(), MarketKind::Single).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let (g, parties) = scenario_a();
        let s = ReplicationScenario::new(parties, 2, 5).unwrap();
        let cfg = MarketConfig {
            exact_cap: 4,
            ..Default::default()
        };
        assert!(matches!(
            attack_payoff(&s, &g, &cfg, MarketKind::Single),
            Err(Error::TooManyPlayers { players: 7, cap: 4 })
        ));
    }

    #[test]
    fn random_markets_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [MarketKind::Single, MarketKind::Multi] {
            for m in 2..=5 {
                let mk = random_market(kind, m, 2.0, &mut rng).unwrap();
                assert_eq!(mk.parties.len(), m);
                let mut seen = std::collections::HashSet::new();
                for p in &mk.parties {
                    assert!(!p.training.is_empty());
                    for r in p.training.iter() {
                        assert!(seen.insert(r.key()), "endowments overlap");
                    }
                }
                let tasks = distinct_tasks(&mk.parties).len();
                match kind {
                    MarketKind::Single => assert_eq!(tasks, 1),
                    MarketKind::Multi => assert!((2..=3).contains(&tasks)),
                }
            }
        }
    }

    #[test]
    fn suites_hold_for_supermodular_gains() {
        for kind in [MarketKind::Single, MarketKind::Multi] {
            let s = randomized_robustness_suite(&SuiteOptions {
                trials: 30,
                min_parties: 2,
                max_parties: 4,
                seed: 11,
                kind,
                submodular: false,
            })
            .unwrap();
            assert!(s.passed(), "{kind:?}: {:?}", s.counterexamples.first());
            assert!(s.attacks >= 60);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let opts = SuiteOptions {
            trials: 8,
            min_parties: 2,
            max_parties: 4,
            seed: 5,
            kind: MarketKind::Multi,
            submodular: true,
        };
        let a = randomized_robustness_suite(&opts).unwrap();
        let b = randomized_robustness_suite(&opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(!a.theorem_backed);
    }
}
