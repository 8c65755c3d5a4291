//! Exact and sampled Shapley values over memoized characteristic functions.

use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard limit on players a coalition bitmask may address.
pub const MAX_PLAYERS: usize = 24;
/// Default limit for exact enumeration.
pub const EXACT_CAP: usize = 20;
/// Largest `M` accepted by [`claim1_sum`].
pub const CLAIM1_CAP: u32 = 60;

/// A set of players as a bitmask; bit `i` is player `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(pub u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn grand(m: usize) -> Self {
        assert!(m <= MAX_PLAYERS);
        Coalition(((1u64 << m) - 1) as u32)
    }

    pub fn singleton(i: usize) -> Self {
        Coalition(1 << i)
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Self {
        Coalition(members.into_iter().fold(0, |acc, i| acc | 1 << i))
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | 1 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: Coalition) -> Self {
        Coalition(self.0 & other.0)
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

type Oracle<'a> = Box<dyn Fn(Coalition) -> Result<f64> + Send + Sync + 'a>;

/// A set function over `arity` players with `v(∅) = 0`, memoized and safe
/// to evaluate from several threads.
pub struct CharacteristicFunction<'a> {
    arity: usize,
    oracle: Oracle<'a>,
    memo: RwLock<HashMap<u32, f64>>,
}

impl fmt::Debug for CharacteristicFunction<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CharacteristicFunction")
            .field("arity", &self.arity)
            .field("cached", &self.cached())
            .finish()
    }
}

impl<'a> CharacteristicFunction<'a> {
    pub fn new<F>(arity: usize, oracle: F) -> Result<Self>
    where
        F: Fn(Coalition) -> Result<f64> + Send + Sync + 'a,
    {
        if arity > MAX_PLAYERS {
            return Err(Error::TooManyPlayers {
                players: arity,
                cap: MAX_PLAYERS,
            });
        }
        Ok(Self {
            arity,
            oracle: Box::new(oracle),
            memo: RwLock::new(HashMap::new()),
        })
    }

    /// Wraps a dense table indexed by bitmask; entry 0 is ignored.
    pub fn from_table(table: Vec<f64>) -> Result<CharacteristicFunction<'static>> {
        if !table.len().is_power_of_two() {
            return Err(Error::invalid("table length must be a power of two"));
        }
        let arity = table.len().trailing_zeros() as usize;
        CharacteristicFunction::new(arity, move |c| Ok(table[c.0 as usize]))
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn grand(&self) -> Coalition {
        Coalition::grand(self.arity)
    }

    /// Number of coalitions evaluated so far.
    pub fn cached(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }

    pub fn value(&self, c: Coalition) -> Result<f64> {
        if c.is_empty() {
            return Ok(0.0);
        }
        if !c.is_subset_of(self.grand()) {
            return Err(Error::invalid(format!(
                "coalition {:#b} has bits beyond arity {}",
                c.0, self.arity
            )));
        }
        if let Some(&v) = self.memo.read().expect("memo lock").get(&c.0) {
            return Ok(v);
        }
        let v = (self.oracle)(c)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { coalition: c.0 });
        }
        Ok(*self.memo.write().expect("memo lock").entry(c.0).or_insert(v))
    }

    pub fn grand_value(&self) -> Result<f64> {
        self.value(self.grand())
    }

    /// Values of all `2^M` coalitions, evaluated in parallel.
    pub fn table(&self) -> Result<Vec<f64>> {
        (0..1u32 << self.arity)
            .into_par_iter()
            .map(|m| self.value(Coalition(m)))
            .collect()
    }
}

/// Shapley weight `s!(M−s−1)!/M!` of a coalition of size `s` not containing
/// the player, for each `s` in `0..M`.
pub fn shapley_weights(m: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(m);
    if m == 0 {
        return w;
    }
    let mut cur = 1.0 / m as f64;
    for s in 0..m {
        w.push(cur);
        if s + 1 < m {
            cur *= (s + 1) as f64 / (m - 1 - s) as f64;
        }
    }
    w
}

/// Shapley values from a dense table (`table[0]` is treated as 0).
pub fn shapley_from_table(table: &[f64]) -> Vec<f64> {
    let m = table.len().trailing_zeros() as usize;
    let w = shapley_weights(m);
    let at = |mask: u32| if mask == 0 { 0.0 } else { table[mask as usize] };
    (0..m)
        .into_par_iter()
        .map(|i| {
            let bit = 1u32 << i;
            let mut acc = 0.0;
            for s in 0..(1u32 << m) {
                if s & bit == 0 {
                    acc += w[s.count_ones() as usize] * (at(s | bit) - at(s));
                }
            }
            acc
        })
        .collect()
}

/// Exact Shapley values by enumerating all coalitions.
pub fn shapley_exact(v: &CharacteristicFunction<'_>) -> Result<Vec<f64>> {
    shapley_exact_capped(v, EXACT_CAP)
}

pub fn shapley_exact_capped(v: &CharacteristicFunction<'_>, cap: usize) -> Result<Vec<f64>> {
    let cap = cap.min(MAX_PLAYERS);
    if v.arity() > cap {
        return Err(Error::TooManyPlayers {
            players: v.arity(),
            cap,
        });
    }
    Ok(shapley_from_table(&v.table()?))
}

/// Divides by the grand-coalition value, which must be positive.
pub fn normalize(phi: &[f64], total: f64) -> Result<Vec<f64>> {
    if !(total > 0.0) {
        return Err(Error::NonPositiveTotal(total));
    }
    Ok(phi.iter().map(|p| p / total).collect())
}

/// Shapley values scaled to sum to 1.
pub fn shapley_normalized(v: &CharacteristicFunction<'_>) -> Result<Vec<f64>> {
    let phi = shapley_exact(v)?;
    normalize(&phi, v.grand_value()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledShapley {
    pub estimates: Vec<f64>,
    /// Standard error of each estimate; zero when every ordering was
    /// enumerated or only one was drawn.
    pub std_errors: Vec<f64>,
    pub permutations: usize,
    pub exhaustive: bool,
}

fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

/// Permutation-sampling estimator. A budget of exactly `M!` enumerates
/// every ordering once instead, giving the exact values.
pub fn shapley_sampled(v: &CharacteristicFunction<'_>, n_perms: usize, seed: u64) -> Result<SampledShapley> {
    if n_perms == 0 {
        return Err(Error::invalid("n_perms must be at least 1"));
    }
    let m = v.arity();
    let factorial = (1..=m).try_fold(1usize, |acc, k| acc.checked_mul(k));
    let exhaustive = factorial == Some(n_perms);
    let perms = if exhaustive {
        all_permutations(m)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_perms)
            .map(|_| {
                let mut p: Vec<usize> = (0..m).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect()
    };

    let marginals: Vec<Vec<f64>> = perms
        .par_iter()
        .map(|perm| {
            let mut out = vec![0.0; m];
            let mut c = Coalition::EMPTY;
            let mut prev = 0.0;
            for &i in perm {
                c = c.with(i);
                let cur = v.value(c)?;
                out[i] = cur - prev;
                prev = cur;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = marginals.len() as f64;
    let mut estimates = vec![0.0; m];
    for row in &marginals {
        for (e, x) in estimates.iter_mut().zip(row) {
            *e += x;
        }
    }
    estimates.iter_mut().for_each(|e| *e /= n);
    let std_errors = if exhaustive || marginals.len() < 2 {
        vec![0.0; m]
    } else {
        (0..m)
            .map(|i| {
                let ss: f64 = marginals.iter().map(|r| (r[i] - estimates[i]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            })
            .collect()
    };
    Ok(SampledShapley {
        estimates,
        std_errors,
        permutations: marginals.len(),
        exhaustive,
    })
}

fn binomial(n: u32, k: u32) -> BigInt {
    let mut acc = BigInt::from(1u32);
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

/// `Σ_{s=1}^{M−1} (C(M,s) − C(M−1,s)) / C(M,s)` in exact rational arithmetic.
pub fn claim1_sum_exact(m: u32) -> Result<BigRational> {
    if m < 2 {
        return Err(Error::invalid(format!("M must be at least 2, got {m}")));
    }
    if m > CLAIM1_CAP {
        return Err(Error::TooManyPlayers {
            players: m as usize,
            cap: CLAIM1_CAP as usize,
        });
    }
    let mut sum = BigRational::zero();
    for s in 1..m {
        let big = binomial(m, s);
        let small = binomial(m - 1, s);
        sum += BigRational::new(big.clone() - small, big);
    }
    Ok(sum)
}

pub fn claim1_sum(m: u32) -> Result<f64> {
    let exact = claim1_sum_exact(m)?;
    exact
        .to_f64()
        .ok_or_else(|| Error::invalid("claim sum not representable as f64"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Average marginal contribution over every ordering.
    fn permutation_oracle(table: &[f64]) -> Vec<f64> {
        let m = table.len().trailing_zeros() as usize;
        let perms = all_permutations(m);
        let mut phi = vec![0.0; m];
        for p in &perms {
            let mut c = 0u32;
            for &i in p {
                phi[i] += table[(c | 1 << i) as usize] - table[c as usize];
                c |= 1 << i;
            }
        }
        phi.iter().map(|x| x / perms.len() as f64).collect()
    }

    fn scenario_a() -> CharacteristicFunction<'static> {
        CharacteristicFunction::from_table(vec![0.0, 0.0625, 0.25, 1.375]).unwrap()
    }

    #[test]
    fn scenario_a_exact() {
        let v = scenario_a();
        let phi = shapley_exact(&v).unwrap();
        assert!((phi[0] - 0.59375).abs() < 1e-12);
        assert!((phi[1] - 0.78125).abs() < 1e-12);
        let hat = shapley_normalized(&v).unwrap();
        assert!((hat[0] - 0.59375 / 1.375).abs() < 1e-12);
        assert!((hat[1] - 0.78125 / 1.375).abs() < 1e-12);
    }

    #[test]
    fn additive_and_symmetric() {
        let c = [0.3, 1.2, -0.4, 2.0];
        let v = CharacteristicFunction::new(4, |s: Coalition| Ok(s.members().map(|i| c[i]).sum())).unwrap();
        for (p, ci) in shapley_exact(&v).unwrap().iter().zip(c) {
            assert!((p - ci).abs() < 1e-12);
        }
        let v = CharacteristicFunction::new(3, |s: Coalition| Ok((s.len() as f64).powi(3))).unwrap();
        for p in shapley_exact(&v).unwrap() {
            assert!((p - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_edges() {
        let v = CharacteristicFunction::new(1, |_| Ok(0.7)).unwrap();
        assert_eq!(shapley_normalized(&v).unwrap(), vec![1.0]);
        let v = CharacteristicFunction::new(2, |_| Ok(0.0)).unwrap();
        assert!(matches!(shapley_normalized(&v), Err(Error::NonPositiveTotal(_))));
    }

    #[test]
    fn errors() {
        let v = CharacteristicFunction::new(21, |_| Ok(1.0)).unwrap();
        assert!(matches!(shapley_exact(&v), Err(Error::TooManyPlayers { players: 21, cap: 20 })));
        assert!(CharacteristicFunction::new(25, |_| Ok(1.0)).is_err());
        let v = CharacteristicFunction::new(2, |c: Coalition| Ok(if c.0 == 3 { f64::NAN } else { 1.0 })).unwrap();
        assert!(matches!(shapley_exact(&v), Err(Error::NonFiniteValue { coalition: 3 })));
    }

    #[test]
    fn memo_and_empty() {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let v = CharacteristicFunction::new(3, |c: Coalition| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(c.len() as f64 + 5.0)
        })
        .unwrap();
        assert_eq!(v.value(Coalition::EMPTY).unwrap(), 0.0);
        let a = v.value(Coalition(5)).unwrap();
        let b = v.value(Coalition(5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        shapley_exact(&v).unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 7);
        assert!(v.value(Coalition(8)).is_err());
    }

    #[test]
    fn sampled_matches_exact() {
        let v = scenario_a();
        let s = shapley_sampled(&v, 2, 1).unwrap();
        assert!(s.exhaustive);
        assert!((s.estimates[0] - 0.59375).abs() < 1e-12);
        assert!((s.estimates[1] - 0.78125).abs() < 1e-12);

        let n = 6;
        let table: Vec<f64> = (0..1u32 << n)
            .map(|m| {
                let k = f64::from(m.count_ones());
                k * k + 0.1 * f64::from(m & 0b101 == 0b101) * k
            })
            .collect();
        let v = CharacteristicFunction::from_table(table).unwrap();
        let exact = shapley_exact(&v).unwrap();
        let s = shapley_sampled(&v, 20_000, 9).unwrap();
        assert!(!s.exhaustive);
        for i in 0..n {
            assert!((s.estimates[i] - exact[i]).abs() <= 3.0 * s.std_errors[i] + 1e-12, "party {i}");
        }
        assert_eq!(s, shapley_sampled(&v, 20_000, 9).unwrap());
    }

    #[test]
    fn claim1_examples() {
        assert_eq!(claim1_sum(2).unwrap(), 0.5);
        assert_eq!(claim1_sum(5).unwrap(), 2.0);
        assert_eq!(claim1_sum(21).unwrap(), 10.0);
        for m in 2..=50u32 {
            assert_eq!(
                claim1_sum_exact(m).unwrap(),
                BigRational::new(BigInt::from(m - 1), BigInt::from(2))
            );
        }
        assert!(claim1_sum(1).is_err());
        assert!(claim1_sum(61).is_err());
    }

    #[test]
    fn weights_sum_to_one_per_player() {
        for m in 1..12usize {
            let w = shapley_weights(m);
            let total: f64 = (0..m)
                .map(|s| w[s] * (1..=s).fold(1.0, |acc, j| acc * (m - 1 - s + j) as f64 / j as f64))
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    fn arb_table(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-5.0f64..5.0, 1 << n).prop_map(|mut t| {
                t[0] = 0.0;
                t
            })
        })
    }

    proptest! {
        #[test]
        fn matches_permutation_oracle(t in arb_table(5)) {
            let fast = shapley_from_table(&t);
            let slow = permutation_oracle(&t);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn efficiency(t in arb_table(8)) {
            let total = t[t.len() - 1];
            let sum: f64 = shapley_from_table(&t).iter().sum();
            prop_assert!((sum - total).abs() <= 1e-9 * total.abs().max(1.0));
        }

        #[test]
        fn linearity(t in arb_table(6), seed in any::<u64>(), alpha in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..t.len()).map(|k| if k == 0 { 0.0 } else { rand::Rng::random_range(&mut rng, -5.0..5.0) }).collect();
            let sum: Vec<f64> = t.iter().zip(&u).map(|(a, b)| a + b).collect();
            let scaled: Vec<f64> = t.iter().map(|a| alpha * a).collect();
            let (pt, pu) = (shapley_from_table(&t), shapley_from_table(&u));
            for ((s, a), b) in shapley_from_table(&sum).iter().zip(&pt).zip(&pu) {
                prop_assert!((s - a - b).abs() < 1e-9);
            }
            for (s, a) in shapley_from_table(&scaled).iter().zip(&pt) {
                prop_assert!((s - alpha * a).abs() < 1e-9);
            }
        }

        #[test]
        fn null_player(t in arb_table(5), who in 0usize..6) {
            let n = t.len().trailing_zeros() as usize;
            let i = who % (n + 1);
            // add player i as a null player by duplicating values across its bit
            let mut big = vec![0.0; t.len() * 2];
            for (m, slot) in big.iter_mut().enumerate() {
                let low = m & ((1 << i) - 1);
                let high = (m >> (i + 1)) << i;
                *slot = t[low | high];
            }
            let phi = shapley_from_table(&big);
            prop_assert!(phi[i].abs() < 1e-9);
        }

        #[test]
        fn symmetric_players(n in 3usize..7, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // value depends on |S| and on whether player n-1 is present; players 0 and 1 are interchangeable
            let by_size: Vec<f64> = (0..=n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let t: Vec<f64> = (0..1u32 << n)
                .map(|m| if m == 0 { 0.0 } else { by_size[m.count_ones() as usize] + f64::from(m >> (n - 1) & 1) })
                .collect();
            let phi = shapley_from_table(&t);
            prop_assert!((phi[0] - phi[1]).abs() < 1e-9);
        }
    }
}
