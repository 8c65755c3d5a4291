//! Exhaustive monotonicity and supermodularity checks for set functions
//! given as dense tables indexed by bitmask.

use serde::{Deserialize, Serialize};

/// Witnesses kept per report; the count is always exact.
pub const MAX_WITNESSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityWitness {
    pub subset: u32,
    pub superset: u32,
    pub subset_value: f64,
    pub superset_value: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermodularityWitness {
    /// Smaller base set R.
    pub r: u32,
    /// Larger base set Q ⊇ R.
    pub q: u32,
    /// Added element.
    pub x: u32,
    pub marginal_r: f64,
    pub marginal_q: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport<W> {
    pub property: String,
    pub holds: bool,
    /// False when the property is not guaranteed for the input and the
    /// report is informational only.
    pub theorem_backed: bool,
    pub tolerance: f64,
    pub checked: u64,
    pub violations: u64,
    pub max_excess: f64,
    pub witnesses: Vec<W>,
    pub witnesses_truncated: bool,
}

impl<W> PropertyReport<W> {
    fn new(property: &str, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            holds: true,
            theorem_backed: true,
            tolerance,
            checked: 0,
            violations: 0,
            max_excess: 0.0,
            witnesses: Vec::new(),
            witnesses_truncated: false,
        }
    }

    fn record(&mut self, excess: f64, witness: impl FnOnce() -> W) {
        self.checked += 1;
        if excess > self.tolerance {
            self.holds = false;
            self.violations += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(witness());
            } else {
                self.witnesses_truncated = true;
            }
        }
        if excess > self.max_excess {
            self.max_excess = excess;
        }
    }

    pub fn informational(mut self) -> Self {
        self.theorem_backed = false;
        self
    }
}

pub type MonotonicityReport = PropertyReport<MonotonicityWitness>;
pub type SupermodularityReport = PropertyReport<SupermodularityWitness>;

fn arity(table: &[f64]) -> u32 {
    assert!(table.len().is_power_of_two(), "table length must be 2^n");
    table.len().trailing_zeros()
}

/// Checks `f(S) ≤ f(S′)` for every pair `S ⊆ S′`.
pub fn check_monotone(table: &[f64], tolerance: f64) -> MonotonicityReport {
    let n = arity(table);
    let mut report = PropertyReport::new("monotonicity", tolerance);
    for sup in 0..(1u32 << n) {
        let mut sub = sup;
        loop {
            if sub != sup {
                let (lo, hi) = (table[sub as usize], table[sup as usize]);
                report.record(lo - hi, || MonotonicityWitness {
                    subset: sub,
                    superset: sup,
                    subset_value: lo,
                    superset_value: hi,
                    excess: lo - hi,
                });
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & sup;
        }
    }
    report
}

/// Checks `f(R∪x) − f(R) ≤ f(Q∪x) − f(Q)` for all `R ⊆ Q ⊆ N∖{x}`.
pub fn check_supermodular(table: &[f64], tolerance: f64) -> SupermodularityReport {
    let n = arity(table);
    let full = (1u32 << n) - 1;
    let mut report = PropertyReport::new("supermodularity", tolerance);
    for x in 0..n {
        let bit = 1u32 << x;
        let rest = full & !bit;
        let mut q = rest;
        loop {
            let mq = table[(q | bit) as usize] - table[q as usize];
            let mut r = q;
            loop {
                if r != q {
                    let mr = table[(r | bit) as usize] - table[r as usize];
                    report.record(mr - mq, || SupermodularityWitness {
                        r,
                        q,
                        x,
                        marginal_r: mr,
                        marginal_q: mq,
                        excess: mr - mq,
                    });
                }
                if r == 0 {
                    break;
                }
                r = (r - 1) & q;
            }
            if q == 0 {
                break;
            }
            q = (q - 1) & rest;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: u32, f: impl Fn(u32) -> f64) -> Vec<f64> {
        (0..1u32 << n).map(f).collect()
    }

    #[test]
    fn convex_of_cardinality_is_supermodular() {
        let t = table(4, |s| f64::from(s.count_ones()).powi(2));
        assert!(check_supermodular(&t, 1e-12).holds);
        assert!(check_monotone(&t, 1e-12).holds);
    }

    #[test]
    fn concave_of_cardinality_is_not() {
        let t = table(3, |s| f64::from(s.count_ones()).sqrt());
        let r = check_supermodular(&t, 1e-12);
        assert!(!r.holds);
        let w = &r.witnesses[0];
        assert_eq!(w.r & w.q, w.r);
        assert_eq!(w.q & (1 << w.x), 0);
        assert!(w.marginal_r > w.marginal_q);
    }

    #[test]
    fn decreasing_function_lists_pairs() {
        let t = table(2, |s| 1.0 - (f64::from(s.count_ones()) / 4.0).powi(2));
        let r = check_monotone(&t, 1e-12);
        // every strict subset pair of {0,1}: 3 pairs from ∅, 2 singletons ⊂ full
        assert_eq!(r.violations, 5);
        assert_eq!(r.checked, 5);
    }

    #[test]
    fn witnesses_truncate() {
        let t = table(8, |s| -f64::from(s.count_ones()));
        let r = check_monotone(&t, 0.0);
        assert!(r.violations as usize > MAX_WITNESSES);
        assert_eq!(r.witnesses.len(), MAX_WITNESSES);
        assert!(r.witnesses_truncated);
    }
}
