//! Task-customized model training: fit the buyer's training pool while
//! pushing performance on every other market task down.
//!
//! Party `i`'s model minimizes
//! `CE(⊕_{k∈D_i} T_k) − λ Σ_{j≠i} E(V_j) + (l2/2)‖W‖²` where `E` is the mean
//! soft error `1 − p_y`, a differentiable stand-in for maximizing pool gain
//! minus `λ` times the other tasks' accuracies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::gain::GainFunction;
use crate::market::{distinct_tasks, prepare_multi, MarketConfig, Party};
use crate::model::{self, ModelSpec, Term, TrainedModel};
use crate::shapley::Coalition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomModel {
    pub model: TrainedModel,
    pub own_train_accuracy: f64,
    pub other_task_accuracies: Vec<f64>,
}

/// Trains a customized logistic-regression model. With `λ = 0` or no other
/// tasks the result is identical to [`model::train`] on `own_train`.
pub fn train_custom(
    spec: &ModelSpec,
    own_train: &LabeledDataset,
    other_tasks: &[LabeledDataset],
    lambda: f64,
) -> Result<CustomModel> {
    let ModelSpec::LogisticRegression(lr) = spec else {
        return Err(Error::Unsupported(
            "customized training needs a gradient-trained model; 1-NN is not".into(),
        ));
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    if own_train.is_empty() {
        return Err(Error::EmptyDataset("own training data"));
    }
    let mut terms = vec![Term::cross_entropy(1.0, own_train)];
    terms.extend(other_tasks.iter().map(|v| Term::soft_error(-lambda, v)));
    let model = model::train_terms(lr, &terms)?;
    let own_train_accuracy = model.accuracy(own_train)?;
    let other_task_accuracies = other_tasks
        .iter()
        .map(|v| model.accuracy(v))
        .collect::<Result<_>>()?;
    Ok(CustomModel {
        model,
        own_train_accuracy,
        other_task_accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub satisfied: bool,
    /// `accuracy − (g_star − ε)`; negative when violated.
    pub slack: f64,
    pub accuracy: f64,
    pub g_star: f64,
    pub epsilon: f64,
}

/// Checks `accuracy(model, own_validation) ≥ g_star − ε` after the fact.
pub fn check_epsilon_constraint(
    model: &TrainedModel,
    own_validation: &LabeledDataset,
    g_star: f64,
    epsilon: f64,
) -> Result<EpsilonReport> {
    let accuracy = model.accuracy(own_validation)?;
    Ok(epsilon_report(accuracy, g_star, epsilon))
}

fn epsilon_report(accuracy: f64, g_star: f64, epsilon: f64) -> EpsilonReport {
    let slack = accuracy - (g_star - epsilon);
    EpsilonReport {
        satisfied: slack >= 0.0,
        slack,
        accuracy,
        g_star,
        epsilon,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyCustomization {
    pub id: u32,
    pub relevant: Vec<u32>,
    pub own_train_accuracy: f64,
    /// Against the standard model's accuracy on the party's validation set.
    pub epsilon_validation: EpsilonReport,
    /// Against the standard model's accuracy on the party's training pool.
    pub epsilon_training: EpsilonReport,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    pub lambda: f64,
    pub ids: Vec<u32>,
    /// `matrix[i][j]`: accuracy of party `i`'s customized model on party `j`'s
    /// validation set.
    pub matrix: Vec<Vec<f64>>,
    pub parties: Vec<PartyCustomization>,
}

impl UtilityMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.len()).map(|i| self.matrix[i][i]).collect()
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.matrix.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[i][j])
            .collect()
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let off = self.off_diagonal();
        if off.is_empty() {
            0.0
        } else {
            off.iter().sum::<f64>() / off.len() as f64
        }
    }
}

/// Customizes a model for every party using relevant sets from threshold
/// selection under `g` and `cfg.tau`.
pub fn utility_matrix(parties: &[Party], g: &GainFunction, cfg: &MarketConfig) -> Result<UtilityMatrix> {
    let GainFunction::ModelAccuracy { model: spec, .. } = g else {
        return Err(Error::Unsupported("customized training needs a model-backed gain".into()));
    };
    let setup = prepare_multi(parties, g, cfg)?;
    utility_matrix_with(parties, spec, cfg.lambda, cfg.epsilon, &setup.relevance)
}

/// Like [`utility_matrix`] with explicit relevant sets (by roster position).
pub fn utility_matrix_with(
    parties: &[Party],
    spec: &ModelSpec,
    lambda: f64,
    epsilon: f64,
    relevance: &[Coalition],
) -> Result<UtilityMatrix> {
    let m = parties.len();
    if m < 2 {
        return Err(Error::invalid("utility matrix needs at least two parties"));
    }
    if relevance.len() != m {
        return Err(Error::invalid("one relevant set per party required"));
    }
    let tasks = distinct_tasks(parties);
    let rows = (0..m)
        .into_par_iter()
        .map(|i| {
            let pool = LabeledDataset::concat_all(relevance[i].with(i).members().map(|k| &parties[k].training))?;
            // other tasks: every distinct task except the party's own
            let others: Vec<LabeledDataset> = tasks
                .distinct
                .iter()
                .filter(|&&t| t != tasks.representative[i])
                .map(|&t| parties[t].validation.clone())
                .collect();
            let custom = train_custom(spec, &pool, &others, lambda)?;
            let standard = model::train(spec, &pool)?;
            let row = parties
                .iter()
                .map(|p| custom.model.accuracy(&p.validation))
                .collect::<Result<Vec<f64>>>()?;
            let g_star_val = standard.accuracy(&parties[i].validation)?;
            let g_star_train = standard.accuracy(&pool)?;
            let status = PartyCustomization {
                id: parties[i].id,
                relevant: relevance[i].with(i).members().map(|k| parties[k].id).collect(),
                own_train_accuracy: custom.own_train_accuracy,
                epsilon_validation: epsilon_report(row[i], g_star_val, epsilon),
                epsilon_training: epsilon_report(custom.own_train_accuracy, g_star_train, epsilon),
                fingerprint: custom.model.fingerprint().to_string(),
            };
            Ok((row, status))
        })
        .collect::<Result<Vec<_>>>()?;
    let (matrix, statuses) = rows.into_iter().unzip();
    Ok(UtilityMatrix {
        lambda,
        ids: parties.iter().map(|p| p.id).collect(),
        matrix,
        parties: statuses,
    })
}
