//! Digit-classification data for the experiments: a synthetic stand-in
//! with ten Gaussian classes, or MNIST IDX files.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shapmarket::dataset::{load_idx, synth_clusters};
use shapmarket::{ClusterSpec, DataRecord, LabeledDataset};

pub const DIGITS: u32 = 10;
pub const SYNTH_DIM: usize = 16;
pub const SYNTH_STDDEV: f64 = 1.0;
const CENTER_SEED: u64 = 0x5eed_d161;

/// Class mean of a synthetic digit; fixed across runs and seeds.
pub fn digit_center(digit: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(CENTER_SEED);
    rng.set_stream(u64::from(digit));
    (0..SYNTH_DIM).map(|_| rng.random_range(0.0..3.0)).collect()
}

/// `count` synthetic samples of each listed digit.
pub fn synthetic_digits(digits: &[u32], count: usize, seed: u64) -> shapmarket::Result<LabeledDataset> {
    let spec: Vec<ClusterSpec> = digits
        .iter()
        .map(|&d| ClusterSpec {
            label: d,
            center: digit_center(d),
            stddev: SYNTH_STDDEV,
            count,
        })
        .collect();
    synth_clusters(&spec, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

pub enum DigitSource {
    Synthetic,
    Mnist {
        train: LabeledDataset,
        test: LabeledDataset,
    },
}

impl DigitSource {
    /// Loads MNIST from the four standard IDX files in `dir`.
    pub fn mnist(dir: &Path) -> shapmarket::Result<Self> {
        let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
        let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
        Ok(Self::Mnist { train, test })
    }

    /// `per_digit` samples of each digit; MNIST samples are drawn without
    /// replacement from the requested split.
    pub fn sample(&self, digits: &[u32], per_digit: usize, split: Split, seed: u64) -> shapmarket::Result<LabeledDataset> {
        match self {
            Self::Synthetic => {
                let salt = match split {
                    Split::Train => 0,
                    Split::Validation => 0x8000_0000_0000_0000,
                };
                synthetic_digits(digits, per_digit, seed ^ salt)
            }
            Self::Mnist { train, test } => {
                let pool = match split {
                    Split::Train => train,
                    Split::Validation => test,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut records: Vec<DataRecord> = Vec::with_capacity(digits.len() * per_digit);
                for &d in digits {
                    let mut of_digit: Vec<&DataRecord> = pool.iter().filter(|r| r.label == d).collect();
                    if of_digit.len() < per_digit {
                        return Err(shapmarket::Error::InvalidParameter(format!(
                            "MNIST has only {} samples of digit {d}, {per_digit} requested",
                            of_digit.len()
                        )));
                    }
                    of_digit.shuffle(&mut rng);
                    records.extend(of_digit[..per_digit].iter().map(|&r| r.clone()));
                }
                LabeledDataset::with_dim(records, pool.dim(), format!("mnist:{digits:?}"))
            }
        }
    }
}

/// Derives an independent seed for stream `k` of a master seed.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.random()
}
