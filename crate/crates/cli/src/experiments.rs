//! Desk-scale digit-classification experiments.
//!
//! * `fig1`: accuracy of a model trained on ten single-digit parties while
//!   one party replicates itself.
//! * `fig2a`: Shapley data values of two-digit parties for an all-digit and
//!   a six-digit validation task (1-NN accuracy).
//! * `fig3`: normalized Shapley shares of an honest party and a replicating
//!   party's family under accuracy `u` and the market's `v`.
//! * `fig4`: accuracy of customized models on every party's task.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shapmarket::custom::{utility_matrix_with, UtilityMatrix};
use shapmarket::market::clear_single;
use shapmarket::model::train_multiset;
use shapmarket::replication::replicate;
use shapmarket::selection::data_value;
use shapmarket::{Coalition, GainFunction, LabeledDataset, LogRegSpec, MarketConfig, ModelSpec, Party, Result};

use crate::data::{derive_seed, DigitSource, Split, DIGITS};

/// Options shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Common {
    pub per_party: usize,
    pub validation_per_digit: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Common {
    fn logistic(&self, seed: u64) -> LogRegSpec {
        LogRegSpec {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            ..LogRegSpec::new(DIGITS as usize)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.per_party < 2 || self.validation_per_digit == 0 {
            return Err(shapmarket::Error::InvalidParameter(
                "per-party must be at least 2 and validation-per-digit at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A party holding `per_party` samples split evenly over `digits`, and a
/// validation task of `validation_per_digit` samples of each task digit.
fn digit_party(
    src: &DigitSource,
    c: &Common,
    id: u32,
    digits: &[u32],
    validation: &LabeledDataset,
    stream: u64,
) -> Result<Party> {
    let per_digit = (c.per_party / digits.len()).max(1);
    let training = src.sample(digits, per_digit, Split::Train, derive_seed(c.seed, stream))?;
    Party::new(id, training, validation.clone())
}

fn task(src: &DigitSource, c: &Common, digits: &[u32], stream: u64) -> Result<LabeledDataset> {
    src.sample(digits, c.validation_per_digit, Split::Validation, derive_seed(c.seed, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Row {
    pub replicated_digit: u32,
    pub replicas: usize,
    pub overall_accuracy: f64,
    /// Accuracy on each tracked digit, aligned with `Fig1::tracked`.
    pub digit_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1 {
    pub tracked: Vec<u32>,
    pub rows: Vec<Fig1Row>,
}

/// Ten parties with one digit each; each digit in `replicated` is
/// replicated 0, …, `replicas` times. Duplicates are kept in training.
pub fn fig1(src: &DigitSource, c: &Common, replicated: &[u32], replicas: &[usize]) -> Result<Fig1> {
    c.validate()?;
    let all: Vec<u32> = (0..DIGITS).collect();
    let v = task(src, c, &all, 0)?;
    let parties = (0..DIGITS)
        .map(|d| digit_party(src, c, d + 1, &[d], &v, 1 + u64::from(d)))
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec::LogisticRegression(c.logistic(derive_seed(c.seed, 100)));
    let per_digit: Vec<LabeledDataset> = replicated.iter().map(|&d| v.filter_labels(&[d])).collect();
    let jobs: Vec<(u32, usize)> = replicated.iter().flat_map(|&d| replicas.iter().map(move |&k| (d, k))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(d, k)| {
            let roster = if k == 0 { parties.clone() } else { replicate(&parties, d + 1, k)? };
            let data = LabeledDataset::concat_all(roster.iter().map(|p| &p.training))?;
            let model = train_multiset(&spec, &data)?;
            Ok(Fig1Row {
                replicated_digit: d,
                replicas: k,
                overall_accuracy: model.accuracy(&v)?,
                digit_accuracy: per_digit.iter().map(|t| model.accuracy(t)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig1 {
        tracked: replicated.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2aRow {
    pub task: String,
    pub party: u32,
    pub labels: [u32; 2],
    pub holds_task_label: bool,
    pub shapley: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2a {
    pub rows: Vec<Fig2aRow>,
    /// Largest value among parties holding none of the subset task's digits.
    pub max_value_without_task_labels: Option<f64>,
}

/// Two distinct random digits per party.
pub fn random_pairs(parties: usize, seed: u64) -> Vec<[u32; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..parties)
        .map(|_| {
            let s = sample(&mut rng, DIGITS as usize, 2);
            [s.index(0) as u32, s.index(1) as u32]
        })
        .collect()
}

/// Exact `u`-Shapley values (1-NN accuracy) of each party for the all-digit
/// task and the `subset` task.
pub fn fig2a(src: &DigitSource, c: &Common, pairs: &[[u32; 2]], subset: &[u32]) -> Result<Fig2a> {
    c.validate()?;
    let all: Vec<u32> = (0..DIGITS).collect();
    let g = GainFunction::accuracy(ModelSpec::OneNn);
    let mut rows = Vec::new();
    let mut worst: Option<f64> = None;
    for (name, digits, stream) in [("all", &all[..], 0), ("subset", subset, 1)] {
        let v = task(src, c, digits, stream)?;
        let parties = pairs
            .iter()
            .enumerate()
            .map(|(j, pair)| digit_party(src, c, j as u32 + 1, pair, &v, 10 + j as u64))
            .collect::<Result<Vec<_>>>()?;
        let values = data_value(&g, &v, &parties)?;
        for (j, pair) in pairs.iter().enumerate() {
            let holds = pair.iter().any(|d| digits.contains(d));
            if name == "subset" && !holds {
                worst = Some(worst.map_or(values[j], |w: f64| w.max(values[j])));
            }
            rows.push(Fig2aRow {
                task: name.into(),
                party: j as u32 + 1,
                labels: *pair,
                holds_task_label: holds,
                shapley: values[j],
            });
        }
    }
    Ok(Fig2a {
        rows,
        max_value_without_task_labels: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub replicas: usize,
    pub characteristic: String,
    pub honest_share: f64,
    pub family_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3 {
    pub rows: Vec<Fig3Row>,
}

impl Fig3 {
    pub fn series(&self, characteristic: &str) -> Vec<&Fig3Row> {
        self.rows.iter().filter(|r| r.characteristic == characteristic).collect()
    }
}

/// Honest party 1 with digits `honest`, party 2 with digits `replicator`
/// making 0, …, `max_replicas` replicas, on the task `digits`. Logistic
/// regression accuracy as gain.
pub fn fig3(
    src: &DigitSource,
    c: &Common,
    honest: &[u32],
    replicator: &[u32],
    digits: &[u32],
    max_replicas: usize,
) -> Result<Fig3> {
    c.validate()?;
    let v = task(src, c, digits, 0)?;
    let base = vec![
        digit_party(src, c, 1, honest, &v, 1)?,
        digit_party(src, c, 2, replicator, &v, 2)?,
    ];
    let g = GainFunction::accuracy(ModelSpec::LogisticRegression(c.logistic(derive_seed(c.seed, 100))));
    let cfg = MarketConfig::default();
    let per_k = (0..=max_replicas)
        .into_par_iter()
        .map(|k| -> Result<[Fig3Row; 2]> {
            let roster = if k == 0 { base.clone() } else { replicate(&base, 2, k)? };
            let phi_u = data_value(&g, &v, &roster)?;
            let total_u: f64 = phi_u.iter().sum();
            let u_honest = phi_u[0] / total_u;
            let out = clear_single(&roster, &v, &g, &cfg)?;
            Ok([
                Fig3Row {
                    replicas: k,
                    characteristic: "u".into(),
                    honest_share: u_honest,
                    family_share: 1.0 - u_honest,
                },
                Fig3Row {
                    replicas: k,
                    characteristic: "v".into(),
                    honest_share: out.parties[0].share,
                    family_share: out.family_share(2),
                },
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig3 {
        rows: per_k.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Party j holds digits (j, j+1 mod 10); ten parties.
    Ring,
    /// Four parties holding disjoint digit pairs (0,1), (2,3), (4,5), (6,7).
    Disjoint,
}

impl Layout {
    pub fn pairs(self) -> Vec<[u32; 2]> {
        match self {
            Layout::Ring => (0..DIGITS).map(|j| [j, (j + 1) % DIGITS]).collect(),
            Layout::Disjoint => (0..4).map(|j| [2 * j, 2 * j + 1]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4 {
    pub pairs: Vec<[u32; 2]>,
    pub customized: UtilityMatrix,
    /// The same pools trained with `λ = 0`.
    pub control: UtilityMatrix,
}

/// Customized models for every party; each party's pool is everyone's
/// training data.
pub fn fig4(src: &DigitSource, c: &Common, layout: Layout, lambda: f64, epsilon: f64) -> Result<Fig4> {
    c.validate()?;
    let pairs = layout.pairs();
    let parties = pairs
        .iter()
        .enumerate()
        .map(|(j, pair)| {
            let v = task(src, c, pair, 100 + j as u64)?;
            digit_party(src, c, j as u32 + 1, pair, &v, 1 + j as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec::LogisticRegression(c.logistic(derive_seed(c.seed, 200)));
    let everyone: Vec<Coalition> = vec![Coalition::grand(parties.len()); parties.len()];
    let customized = utility_matrix_with(&parties, &spec, lambda, epsilon, &everyone)?;
    let control = utility_matrix_with(&parties, &spec, 0.0, epsilon, &everyone)?;
    Ok(Fig4 {
        pairs,
        customized,
        control,
    })
}

/// Draws a random `count`-subset of the digits, sorted.
pub fn random_digits(count: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut d: Vec<u32> = sample(rng, DIGITS as usize, count).into_iter().map(|x| x as u32).collect();
    d.sort_unstable();
    d
}
