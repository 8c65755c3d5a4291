//! Collaborative machine-learning data market.
//!
//! Parties contribute training data and a validation task; the market trains
//! a model on the pooled data, charges each party for the improvement it
//! receives, and pays the pool back out by normalized Shapley value over a
//! characteristic function designed so that replicating one's own data does
//! not pay.

pub mod custom;
pub mod dataset;
pub mod error;
pub mod gain;
pub mod market;
pub mod model;
pub mod replication;
pub mod selection;
pub mod setfn;
pub mod shapley;
pub mod stats;

pub use dataset::{ClusterSpec, DataRecord, LabeledDataset};
pub use error::{Error, Result};
pub use gain::{Gain, GainFunction};
pub use model::{train, LogRegSpec, ModelSpec, Surrogate, Term, TrainedModel};
pub use shapley::{shapley_exact, shapley_normalized, CharacteristicFunction, Coalition};
pub use market::{MarketConfig, MarketOutcome, Party};
