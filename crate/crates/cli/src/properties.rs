//! Randomized property suites over exact synthetic gains.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shapmarket::market::{char_multi, char_single, clear_multi, clear_single, prepare_multi};
use shapmarket::replication::{
    random_market, randomized_robustness_suite, replicate, MarketKind, RandomMarket, SuiteOptions, SuiteSummary,
};
use shapmarket::setfn::check_supermodular;
use shapmarket::shapley::{claim1_sum_exact, shapley_exact};
use shapmarket::{CharacteristicFunction, LabeledDataset, MarketConfig, MarketOutcome, Party, Result};

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub theorem_backed: bool,
    pub cases: usize,
    pub violations: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, theorem_backed: bool) -> Self {
        Self {
            name: name.into(),
            theorem_backed,
            cases: 0,
            violations: 0,
            max_deviation: 0.0,
            tolerance: TOLERANCE,
            passed: true,
        }
    }

    /// Records one case with absolute deviation `dev` from the expected
    /// value (or excess over a bound).
    fn record(&mut self, dev: f64) {
        self.cases += 1;
        if dev.is_nan() || dev > self.max_deviation {
            self.max_deviation = dev;
        }
        if !(dev <= self.tolerance) {
            self.violations += 1;
            self.passed = false;
        }
    }

    fn merge(mut self, other: &Check) -> Self {
        self.cases += other.cases;
        self.violations += other.violations;
        self.passed &= other.passed;
        if other.max_deviation.is_nan() || other.max_deviation > self.max_deviation {
            self.max_deviation = other.max_deviation;
        }
        self
    }
}

fn trial_rng(seed: u64, salt: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(trial as u64);
    rng
}

fn merged(name: &str, theorem_backed: bool, parts: &[Check]) -> Check {
    parts.iter().fold(Check::new(name, theorem_backed), Check::merge)
}

fn phi(table: Vec<f64>) -> Result<Vec<f64>> {
    shapley_exact(&CharacteristicFunction::from_table(table)?)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Efficiency, symmetry, null player and linearity over random
/// characteristic functions with 2..=`max_players` players.
pub fn shapley_axioms(trials: usize, max_players: usize, seed: u64) -> Result<Vec<Check>> {
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<[Check; 4]> {
            let mut rng = trial_rng(seed, 0xA1, trial);
            let m = rng.random_range(2..=max_players.max(2));
            let n = 1usize << m;
            let random_table = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                t[0] = 0.0;
                t
            };
            let v = random_table(&mut rng);
            let w = random_table(&mut rng);
            let a: f64 = rng.random_range(-3.0..3.0);
            let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
            let j = if i == j { (i + 1) % m } else { j };
            let null = rng.random_range(0..m);

            let phi_v = phi(v.clone())?;
            let mut checks = [
                Check::new("shapley_efficiency", true),
                Check::new("shapley_symmetry", true),
                Check::new("shapley_null_player", true),
                Check::new("shapley_linearity", true),
            ];
            checks[0].record((phi_v.iter().sum::<f64>() - v[n - 1]).abs());

            let swap = |s: usize| {
                let (bi, bj) = (s >> i & 1, s >> j & 1);
                (s & !(1 << i) & !(1 << j)) | bi << j | bj << i
            };
            let sym: Vec<f64> = (0..n).map(|s| (v[s] + v[swap(s)]) / 2.0).collect();
            let phi_sym = phi(sym)?;
            checks[1].record((phi_sym[i] - phi_sym[j]).abs());

            let nulled: Vec<f64> = (0..n).map(|s| v[s & !(1 << null)]).collect();
            checks[2].record(phi(nulled)?[null].abs());

            let combo: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + y).collect();
            let phi_w = phi(w)?;
            let expected: Vec<f64> = phi_v.iter().zip(&phi_w).map(|(x, y)| a * x + y).collect();
            checks[3].record(max_abs_diff(&phi(combo)?, &expected));
            Ok(checks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..4)
        .map(|k| {
            let parts: Vec<Check> = per_trial.iter().map(|c| c[k].clone()).collect();
            merged(&parts[0].name, true, &parts)
        })
        .collect())
}

/// The Claim 1 sum equals `(M − 1)/2` exactly for `2 ≤ M ≤ max_players`.
pub fn claim1(max_players: u32) -> Result<Check> {
    let mut check = Check::new("claim1_identity", true);
    check.tolerance = 0.0;
    for m in 2..=max_players {
        let expected = BigRational::new(BigInt::from(m - 1), BigInt::from(2));
        check.record(if claim1_sum_exact(m)? == expected { 0.0 } else { 1.0 });
    }
    Ok(check)
}

fn exponent(rng: &mut ChaCha8Rng, submodular: bool) -> f64 {
    if submodular {
        [0.3, 0.5, 0.7][rng.random_range(0..3)]
    } else {
        f64::from(rng.random_range(1..=3u8))
    }
}

/// Random market plus a replica of one party (a symmetric pair) and a
/// party the market cannot improve (a zero-element buyer).
fn fairness_market(kind: MarketKind, rng: &mut ChaCha8Rng, submodular: bool) -> Result<(RandomMarket, u32, u32, u32)> {
    let m = rng.random_range(2..=5);
    let p = exponent(rng, submodular);
    let mut market = random_market(kind, m, p, rng)?;
    let twin = rng.random_range(1..=m as u32);
    let mut parties = replicate(&market.parties, twin, 1)?;
    let twin_copy = parties.last().expect("replica appended").id;
    let buyer = twin_copy + 1;
    let fresh = parties
        .iter()
        .flat_map(|p| p.training.iter().chain(p.validation.iter()))
        .map(|r| r.features[0] as usize + 1)
        .max()
        .unwrap_or(0);
    let party = match kind {
        MarketKind::Single => {
            let all = LabeledDataset::concat_all(parties.iter().map(|p| &p.training))?;
            Party::new(buyer, all, parties[0].validation.clone())?
        }
        MarketKind::Multi => Party::new(
            buyer,
            LabeledDataset::items(&[fresh]),
            LabeledDataset::items(&[fresh, fresh + 1]),
        )?,
    };
    parties.push(party);
    market.parties = parties;
    Ok((market, twin, twin_copy, buyer))
}

fn clear(kind: MarketKind, market: &RandomMarket) -> Result<MarketOutcome> {
    let cfg = MarketConfig::default();
    match kind {
        MarketKind::Single => clear_single(&market.parties, &market.parties[0].validation, &market.gain, &cfg),
        MarketKind::Multi => clear_multi(&market.parties, &market.gain, &cfg),
    }
}

/// Balance, symmetry and zero-element-buyer checks over random markets.
pub fn market_fairness(kind: MarketKind, trials: usize, seed: u64, submodular: bool) -> Result<Vec<Check>> {
    let label = match kind {
        MarketKind::Single => "single",
        MarketKind::Multi => "multi",
    };
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<[Check; 3]> {
            let mut rng = trial_rng(seed, 0xB2 + kind as u64, trial);
            let (market, twin, copy, buyer) = fairness_market(kind, &mut rng, submodular)?;
            let out = clear(kind, &market)?;
            let mut checks = [
                Check::new(&format!("{label}_balance"), true),
                Check::new(&format!("{label}_symmetry"), true),
                Check::new(&format!("{label}_zero_element_buyer"), true),
            ];
            checks[0].record(out.nets().iter().sum::<f64>().abs());
            let (a, b) = (out.party(twin).expect("twin"), out.party(copy).expect("copy"));
            checks[1].record((a.share - b.share).abs().max((a.net - b.net).abs()));
            let z = out.party(buyer).expect("buyer");
            // charged nothing and gets at least its fee back
            checks[2].record(z.price.abs().max(z.fee - z.returned).max(-z.net));
            Ok(checks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..3)
        .map(|k| {
            let parts: Vec<Check> = per_trial.iter().map(|c| c[k].clone()).collect();
            merged(&parts[0].name, true, &parts)
        })
        .collect())
}

/// Exhaustive supermodularity of `v` and `w` built from random gains.
pub fn supermodularity(trials: usize, seed: u64, submodular: bool) -> Result<Vec<Check>> {
    let cfg = MarketConfig::default();
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<[Check; 2]> {
            let mut rng = trial_rng(seed, 0xC3, trial);
            let mut checks = [
                Check::new("single_supermodular", !submodular),
                Check::new("multi_supermodular", !submodular),
            ];
            let p = exponent(&mut rng, submodular);
            let m = rng.random_range(2..=5);
            let single = random_market(MarketKind::Single, m, p, &mut rng)?;
            let table = char_single(&single.gain, &single.parties[0].validation, &single.parties)?.table()?;
            let r = check_supermodular(&table, TOLERANCE);
            checks[0].record(if r.violations == 0 { 0.0 } else { r.max_excess });

            let multi = random_market(MarketKind::Multi, m, p, &mut rng)?;
            let setup = prepare_multi(&multi.parties, &multi.gain, &cfg)?;
            let table = char_multi(&multi.gain, &multi.parties, &setup.relevance)?.table()?;
            let r = check_supermodular(&table, TOLERANCE);
            checks[1].record(if r.violations == 0 { 0.0 } else { r.max_excess });
            Ok(checks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..2)
        .map(|k| {
            let parts: Vec<Check> = per_trial.iter().map(|c| c[k].clone()).collect();
            merged(&parts[0].name, !submodular, &parts)
        })
        .collect())
}

/// Replication attacks on random markets of 2..=5 parties.
pub fn robustness(kind: MarketKind, trials: usize, seed: u64, submodular: bool) -> Result<SuiteSummary> {
    randomized_robustness_suite(&SuiteOptions {
        trials,
        min_parties: 2,
        max_parties: 5,
        seed,
        kind,
        submodular,
    })
}

fn robustness_checks(summary: &SuiteSummary, label: &str) -> [Check; 3] {
    let backed = summary.theorem_backed;
    let mut payoff = Check::new(&format!("{label}_replication_payoff"), backed);
    let mut lemma = Check::new(&format!("{label}_replication_lemmas"), backed);
    let mut shift = Check::new(&format!("{label}_value_shift"), backed);
    payoff.cases = summary.attacks;
    payoff.violations = summary.payoff_violations;
    payoff.max_deviation = summary.max_payoff_excess.max(0.0);
    payoff.passed = summary.payoff_violations == 0;
    lemma.cases = summary.attacks;
    lemma.violations = summary.lemma_violations;
    lemma.max_deviation = summary.max_margin_excess.max(0.0);
    lemma.passed = summary.lemma_violations == 0;
    shift.cases = summary.attacks;
    shift.max_deviation = summary.max_value_shift_error;
    shift.passed = summary.max_value_shift_error <= TOLERANCE;
    shift.violations = usize::from(!shift.passed);
    [payoff, lemma, shift]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySuite {
    pub gain: String,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub robustness: Vec<SuiteSummary>,
    /// All theorem-backed checks passed.
    pub passed: bool,
}

/// Every property check at `trials` random instances each.
pub fn run_suite(trials: usize, seed: u64, submodular: bool) -> Result<PropertySuite> {
    let mut checks = shapley_axioms(trials, 8, seed)?;
    checks.push(claim1(50)?);
    for kind in [MarketKind::Single, MarketKind::Multi] {
        checks.extend(market_fairness(kind, trials, seed, submodular)?);
    }
    checks.extend(supermodularity(trials, seed, submodular)?);
    let mut robustness_reports = Vec::new();
    for (kind, label) in [(MarketKind::Single, "single"), (MarketKind::Multi, "multi")] {
        let summary = robustness(kind, trials, seed, submodular)?;
        checks.extend(robustness_checks(&summary, label));
        robustness_reports.push(summary);
    }
    let passed = checks.iter().filter(|c| c.theorem_backed).all(|c| c.passed);
    Ok(PropertySuite {
        gain: if submodular { "submodular" } else { "synthetic" }.into(),
        trials,
        seed,
        checks,
        robustness: robustness_reports,
        passed,
    })
}
