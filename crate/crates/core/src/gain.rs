//! Gain functions `G(V, f(D)) ∈ [0, 1]` and exhaustive checks of the
//! properties the market relies on: replication invariance, monotonicity
//! and supermodularity.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, RecordKey};
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec};
use crate::setfn::{self, MonotonicityReport, SupermodularityReport};

/// Tolerance for checks on exact gains.
pub const EXACT_TOLERANCE: f64 = 1e-12;

/// Largest pool the exhaustive checkers accept.
pub const POOL_CAP: usize = 12;

/// A performance measure of a model trained on `training`, evaluated on
/// `validation`. Implementations must be pure.
pub trait Gain: Send + Sync {
    fn evaluate(&self, validation: &LabeledDataset, training: &LabeledDataset) -> Result<f64>;

    /// True when replicated training data provably leaves the gain unchanged.
    fn replication_exact(&self) -> bool {
        false
    }

    /// True when the gain is known to be monotone and supermodular, so
    /// violations of those properties indicate bugs rather than findings.
    fn idealized(&self) -> bool {
        false
    }
}

impl<F> Gain for F
where
    F: Fn(&LabeledDataset, &LabeledDataset) -> Result<f64> + Send + Sync,
{
    fn evaluate(&self, validation: &LabeledDataset, training: &LabeledDataset) -> Result<f64> {
        self(validation, training)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum CoverageScope {
    /// `(|distinct(D)| / size)^p`; the validation set is ignored.
    Universe { size: usize },
    /// `(|distinct(D) ∩ distinct(V)| / |distinct(V)|)^p`.
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainFunction {
    ModelAccuracy {
        model: ModelSpec,
        #[serde(default = "default_true")]
        dedup: bool,
    },
    SyntheticCoverage {
        #[serde(flatten)]
        scope: CoverageScope,
        exponent: f64,
    },
}

fn default_true() -> bool {
    true
}

impl GainFunction {
    pub fn accuracy(model: ModelSpec) -> Self {
        GainFunction::ModelAccuracy { model, dedup: true }
    }

    pub fn coverage(size: usize, exponent: f64) -> Self {
        GainFunction::SyntheticCoverage {
            scope: CoverageScope::Universe { size },
            exponent,
        }
    }

    pub fn task_coverage(exponent: f64) -> Self {
        GainFunction::SyntheticCoverage {
            scope: CoverageScope::Task,
            exponent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GainFunction::ModelAccuracy { model, .. } => model.validate(),
            GainFunction::SyntheticCoverage { scope, exponent } => {
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::invalid(format!("exponent must be positive, got {exponent}")));
                }
                if let CoverageScope::Universe { size: 0 } = scope {
                    return Err(Error::invalid("universe size must be positive"));
                }
                Ok(())
            }
        }
    }
}

impl Gain for GainFunction {
    fn evaluate(&self, validation: &LabeledDataset, training: &LabeledDataset) -> Result<f64> {
        match self {
            GainFunction::ModelAccuracy { model, dedup } => {
                if validation.is_empty() {
                    return Err(Error::EmptyDataset("validation data"));
                }
                let trained = if *dedup {
                    model::train(model, training)?
                } else {
                    model::train_multiset(model, training)?
                };
                trained.accuracy(validation)
            }
            GainFunction::SyntheticCoverage { scope, exponent } => {
                let covered: HashSet<RecordKey> = training.iter().map(|r| r.key()).collect();
                let frac = match scope {
                    CoverageScope::Universe { size } => covered.len() as f64 / *size as f64,
                    CoverageScope::Task => {
                        let task: HashSet<RecordKey> = validation.iter().map(|r| r.key()).collect();
                        if task.is_empty() {
                            return Err(Error::EmptyDataset("validation data"));
                        }
                        task.intersection(&covered).count() as f64 / task.len() as f64
                    }
                };
                Ok(frac.min(1.0).powf(*exponent))
            }
        }
    }

    fn replication_exact(&self) -> bool {
        match self {
            GainFunction::ModelAccuracy { model, dedup } => *dedup || matches!(model, ModelSpec::OneNn),
            GainFunction::SyntheticCoverage { .. } => true,
        }
    }

    fn idealized(&self) -> bool {
        matches!(self, GainFunction::SyntheticCoverage { exponent, .. } if *exponent >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    /// `None` when the gain is not replication-exact and the deviation is
    /// reported for information only.
    pub holds: Option<bool>,
    pub max_deviation: f64,
    pub base: f64,
    pub replicated: f64,
    pub copies: usize,
}

/// Compares `G(v, d)` with `G(v, d ⊕ … ⊕ d)` where `d` appears `reps + 1`
/// times.
pub fn check_replication_invariance(
    g: &dyn Gain,
    v: &LabeledDataset,
    d: &LabeledDataset,
    reps: usize,
) -> Result<ReplicationReport> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if d.is_empty() {
        return Err(Error::EmptyDataset("training data"));
    }
    let base = g.evaluate(v, d)?;
    let replicated = g.evaluate(v, &d.repeat(reps + 1))?;
    let dev = (base - replicated).abs();
    Ok(ReplicationReport {
        holds: g.replication_exact().then_some(dev <= EXACT_TOLERANCE),
        max_deviation: dev,
        base,
        replicated,
        copies: reps + 1,
    })
}

/// `G(v, ∪S)` for every subset mask `S` of the pool, with `G(∅) = 0`.
pub fn pool_table(g: &dyn Gain, v: &LabeledDataset, pool: &[LabeledDataset]) -> Result<Vec<f64>> {
    if pool.len() > POOL_CAP {
        return Err(Error::TooManyPlayers {
            players: pool.len(),
            cap: POOL_CAP,
        });
    }
    let dims: HashSet<usize> = pool.iter().filter(|d| !d.is_empty()).map(LabeledDataset::dim).collect();
    if dims.len() > 1 {
        let mut dims: Vec<usize> = dims.into_iter().collect();
        dims.sort_unstable();
        return Err(Error::DimensionMismatch {
            expected: dims[0],
            found: dims[1],
        });
    }
    (0..1u32 << pool.len())
        .map(|mask| {
            let union = LabeledDataset::concat_all(
                pool.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, d)| d),
            )?;
            if union.is_empty() {
                Ok(0.0)
            } else {
                g.evaluate(v, &union).map_err(|e| Error::Coalition {
                    coalition: mask,
                    source: Box::new(e),
                })
            }
        })
        .collect()
}

/// Exhaustive monotonicity check of `S ↦ G(v, ∪S)` over the pool.
pub fn check_monotonicity(
    g: &dyn Gain,
    v: &LabeledDataset,
    pool: &[LabeledDataset],
) -> Result<MonotonicityReport> {
    let report = setfn::check_monotone(&pool_table(g, v, pool)?, EXACT_TOLERANCE);
    Ok(if g.idealized() { report } else { report.informational() })
}

/// Exhaustive supermodularity check of `S ↦ G(v, ∪S)` over the pool.
pub fn check_supermodularity(
    g: &dyn Gain,
    v: &LabeledDataset,
    pool: &[LabeledDataset],
) -> Result<SupermodularityReport> {
    let report = setfn::check_supermodular(&pool_table(g, v, pool)?, EXACT_TOLERANCE);
    Ok(if g.idealized() { report } else { report.informational() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_clusters, ClusterSpec};
    use proptest::prelude::*;

    fn scenario_a() -> (GainFunction, LabeledDataset, LabeledDataset) {
        (
            GainFunction::coverage(4, 2.0),
            LabeledDataset::items(&[1]),
            LabeledDataset::items(&[2, 3]),
        )
    }

    #[test]
    fn scenario_a_values() {
        let (g, t1, t2) = scenario_a();
        let v = LabeledDataset::empty(1);
        assert_eq!(g.evaluate(&v, &t1).unwrap(), 0.0625);
        assert_eq!(g.evaluate(&v, &t2).unwrap(), 0.25);
        assert_eq!(g.evaluate(&v, &t2.concat(&t2).unwrap()).unwrap(), 0.25);
        assert_eq!(g.evaluate(&v, &t1.concat(&t2).unwrap()).unwrap(), 0.5625);
    }

    #[test]
    fn task_scope() {
        let g = GainFunction::task_coverage(2.0);
        let v = LabeledDataset::items(&[1, 2]);
        assert_eq!(g.evaluate(&v, &LabeledDataset::items(&[1, 3])).unwrap(), 0.25);
        assert_eq!(g.evaluate(&v, &LabeledDataset::items(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(g.evaluate(&v, &LabeledDataset::items(&[4])).unwrap(), 0.0);
        assert!(g.evaluate(&LabeledDataset::empty(1), &v).is_err());
    }

    #[test]
    fn replication_checks() {
        let (g, _, t2) = scenario_a();
        let r = check_replication_invariance(&g, &t2, &t2, 5).unwrap();
        assert_eq!(r.holds, Some(true));
        assert_eq!(r.max_deviation, 0.0);

        let data = synth_clusters(
            &[
                ClusterSpec { label: 0, center: vec![-1.0, 0.0], stddev: 1.0, count: 20 },
                ClusterSpec { label: 1, center: vec![1.0, 0.0], stddev: 1.0, count: 20 },
            ],
            3,
        )
        .unwrap();
        let g = GainFunction::accuracy(ModelSpec::logistic(2));
        let r = check_replication_invariance(&g, &data, &data.take(10), 3).unwrap();
        assert_eq!(r.holds, Some(true));
        assert_eq!(r.max_deviation, 0.0);

        let g = GainFunction::ModelAccuracy {
            model: ModelSpec::logistic(2),
            dedup: false,
        };
        let r = check_replication_invariance(&g, &data, &data.filter_labels(&[0]).concat(&data.take(25)).unwrap(), 3)
            .unwrap();
        assert_eq!(r.holds, None);
        assert!((0.0..=1.0).contains(&r.max_deviation));
    }

    #[test]
    fn monotonicity_examples() {
        let (g, t1, t2) = scenario_a();
        let v = LabeledDataset::empty(1);
        assert!(check_monotonicity(&g, &v, &[t1.clone(), t2.clone()]).unwrap().holds);

        let constant = |_: &LabeledDataset, _: &LabeledDataset| Ok(0.5);
        // G(∅) = 0 by convention, so only non-empty unions are compared meaningfully
        let r = check_monotonicity(&constant, &v, &[t1.clone(), t2.clone()]).unwrap();
        assert!(r.holds);
        assert!(!r.theorem_backed);

        let adversarial = |_: &LabeledDataset, d: &LabeledDataset| {
            Ok(1.0 - (d.distinct().len() as f64 / 4.0).powi(2))
        };
        let pool = [LabeledDataset::items(&[1]), LabeledDataset::items(&[2]), LabeledDataset::items(&[3])];
        let r = check_monotonicity(&adversarial, &v, &pool).unwrap();
        assert!(!r.holds);
        assert!(r.violations > 0);
        assert!(r.witnesses.iter().all(|w| w.subset & w.superset == w.subset));
    }

    #[test]
    fn supermodularity_examples() {
        let v = LabeledDataset::empty(1);
        let pool: Vec<_> = (0..5).map(|k| LabeledDataset::items(&[k])).collect();
        for p in [1.0, 2.0, 3.0] {
            let r = check_supermodularity(&GainFunction::coverage(5, p), &v, &pool).unwrap();
            assert!(r.holds, "p = {p}: {r:?}");
            assert!(r.theorem_backed);
        }
        let r = check_supermodularity(&GainFunction::coverage(5, 0.5), &v, &pool).unwrap();
        assert!(!r.holds);
        assert!(!r.theorem_backed);
    }

    #[test]
    fn pool_cap() {
        let pool: Vec<_> = (0..13).map(|k| LabeledDataset::items(&[k])).collect();
        let g = GainFunction::coverage(13, 1.0);
        assert!(matches!(
            check_monotonicity(&g, &LabeledDataset::empty(1), &pool),
            Err(Error::TooManyPlayers { .. })
        ));
    }

    #[test]
    fn model_accuracy_informational() {
        let data = synth_clusters(
            &[
                ClusterSpec { label: 0, center: vec![0.0], stddev: 1.0, count: 6 },
                ClusterSpec { label: 1, center: vec![1.0], stddev: 1.0, count: 6 },
            ],
            11,
        )
        .unwrap();
        let pool: Vec<_> = data.records().chunks(3).map(|c| LabeledDataset::new(c.to_vec(), "p").unwrap()).collect();
        let r = check_supermodularity(&GainFunction::accuracy(ModelSpec::OneNn), &data, &pool).unwrap();
        assert!(!r.theorem_backed);
    }

    #[test]
    fn serde_shape() {
        let g: GainFunction =
            serde_json::from_str(r#"{"kind":"synthetic_coverage","scope":"universe","size":4,"exponent":2}"#).unwrap();
        assert_eq!(g, GainFunction::coverage(4, 2.0));
        let g: GainFunction =
            serde_json::from_str(r#"{"kind":"model_accuracy","model":{"kind":"one_nn"}}"#).unwrap();
        assert_eq!(g, GainFunction::accuracy(ModelSpec::OneNn));
    }

    fn arb_items() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..6, 0..8)
    }

    proptest! {
        #[test]
        fn coverage_properties(a in arb_items(), b in arb_items(), p in 1u32..4, reps in 1usize..4) {
            let g = GainFunction::coverage(6, f64::from(p));
            let v = LabeledDataset::empty(1);
            let da = LabeledDataset::items(&a);
            let db = LabeledDataset::items(&b);
            let ga = g.evaluate(&v, &da).unwrap();
            prop_assert!((0.0..=1.0).contains(&ga));
            prop_assert_eq!(ga, g.evaluate(&v, &da.repeat(reps + 1)).unwrap());
            let gab = g.evaluate(&v, &da.concat(&db).unwrap()).unwrap();
            prop_assert!(ga <= gab + EXACT_TOLERANCE);
        }

        #[test]
        fn coverage_supermodular_on_disjoint_items(n in 1usize..7, p in 1u32..4) {
            let g = GainFunction::coverage(6, f64::from(p));
            let pool: Vec<_> = (0..n).map(|k| LabeledDataset::items(&[k])).collect();
            let r = check_supermodularity(&g, &LabeledDataset::empty(1), &pool).unwrap();
            prop_assert!(r.holds);
            let r = check_monotonicity(&g, &LabeledDataset::empty(1), &pool).unwrap();
            prop_assert!(r.holds);
        }
    }
}
