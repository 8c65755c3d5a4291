//! Deterministic in-house classifiers: 1-nearest-neighbour and multinomial
//! logistic regression trained by full-batch gradient descent.
//!
//! Both kinds train on the canonical distinct form of their input, so a
//! model depends only on the *set* of training records.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DataRecord, LabeledDataset};
use crate::error::{Error, Result};

const BLOB_MAGIC: &[u8; 4] = b"SHMK";
const BLOB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegSpec {
    #[serde(default = "LogRegSpec::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "LogRegSpec::default_epochs")]
    pub epochs: usize,
    #[serde(default = "LogRegSpec::default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    pub num_classes: usize,
}

impl LogRegSpec {
    fn default_lr() -> f64 {
        1e-2
    }
    fn default_epochs() -> usize {
        100
    }
    fn default_l2() -> f64 {
        1e-4
    }

    /// Defaults: learning rate 1e-2, 100 epochs, l2 1e-4, seed 0.
    pub fn new(num_classes: usize) -> Self {
        Self {
            learning_rate: Self::default_lr(),
            epochs: Self::default_epochs(),
            l2: Self::default_l2(),
            seed: 0,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    OneNn,
    LogisticRegression(LogRegSpec),
}

impl ModelSpec {
    pub fn logistic(num_classes: usize) -> Self {
        ModelSpec::LogisticRegression(LogRegSpec::new(num_classes))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::OneNn => Ok(()),
            ModelSpec::LogisticRegression(s) => s.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    OneNn {
        dim: usize,
        records: Vec<DataRecord>,
    },
    LogisticRegression {
        num_classes: usize,
        dim: usize,
        /// Row-major `num_classes × dim`.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    params: ModelParams,
    fingerprint: String,
}

fn fingerprint<'a>(
    spec: &ModelSpec,
    dedup: bool,
    terms: impl IntoIterator<Item = (f64, Surrogate, &'a LabeledDataset)>,
) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update([u8::from(dedup)]);
    for (weight, surrogate, data) in terms {
        h.update(weight.to_le_bytes());
        h.update([surrogate as u8]);
        h.update((data.dim() as u64).to_le_bytes());
        h.update((data.len() as u64).to_le_bytes());
        for r in data {
            h.update(r.label.to_le_bytes());
            for x in &r.features {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Trains `spec` on the distinct records of `data`.
pub fn train(spec: &ModelSpec, data: &LabeledDataset) -> Result<TrainedModel> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("training data"));
    }
    match spec {
        ModelSpec::OneNn => {
            let canon = data.canonical();
            let fp = fingerprint(spec, true, [(1.0, Surrogate::CrossEntropy, &canon)]);
            Ok(TrainedModel {
                params: ModelParams::OneNn {
                    dim: canon.dim(),
                    records: canon.records().to_vec(),
                },
                fingerprint: fp,
            })
        }
        ModelSpec::LogisticRegression(s) => train_weighted(s, &[(1.0, data)]),
    }
}

/// Logistic regression minimizing `Σ_t w_t · CE(D_t) + (l2/2)‖W‖²` by
/// full-batch gradient descent, where `CE(D)` is the mean cross-entropy on
/// the distinct records of `D`. Negative weights turn a term into one to be
/// maximized. Zero-weight and empty terms are dropped; the first remaining
/// term fixes the dimensionality.
pub fn train_weighted(spec: &LogRegSpec, terms: &[(f64, &LabeledDataset)]) -> Result<TrainedModel> {
    let terms: Vec<Term<'_>> = terms.iter().map(|&(w, d)| Term::cross_entropy(w, d)).collect();
    gradient_descent(spec, &terms, true)
}

/// Per-record loss used by a [`Term`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `−log p_y`.
    #[default]
    CrossEntropy,
    /// `1 − p_y`, a bounded smooth stand-in for the 0/1 error.
    SoftError,
}

/// One weighted summand `weight · mean_{r∈data} loss(r)` of a training
/// objective.
#[derive(Debug, Clone, Copy)]
pub struct Term<'a> {
    pub weight: f64,
    pub data: &'a LabeledDataset,
    pub surrogate: Surrogate,
}

impl<'a> Term<'a> {
    pub fn cross_entropy(weight: f64, data: &'a LabeledDataset) -> Self {
        Self {
            weight,
            data,
            surrogate: Surrogate::CrossEntropy,
        }
    }

    pub fn soft_error(weight: f64, data: &'a LabeledDataset) -> Self {
        Self {
            weight,
            data,
            surrogate: Surrogate::SoftError,
        }
    }
}

/// Logistic regression minimizing `Σ_t w_t · mean loss_t(D_t) + (l2/2)‖W‖²`
/// over distinct records. Zero-weight and empty terms are dropped.
pub fn train_terms(spec: &LogRegSpec, terms: &[Term<'_>]) -> Result<TrainedModel> {
    gradient_descent(spec, terms, true)
}

/// Like [`train`] but logistic regression sees every record with its
/// multiplicity, so replicated data shifts the fit. 1-NN predictions are
/// unaffected by duplicates either way.
pub fn train_multiset(spec: &ModelSpec, data: &LabeledDataset) -> Result<TrainedModel> {
    match spec {
        ModelSpec::OneNn => train(spec, data),
        ModelSpec::LogisticRegression(s) => {
            if data.is_empty() {
                return Err(Error::EmptyDataset("training data"));
            }
            gradient_descent(s, &[Term::cross_entropy(1.0, data)], false)
        }
    }
}

fn gradient_descent(spec: &LogRegSpec, terms: &[Term<'_>], dedup: bool) -> Result<TrainedModel> {
    spec.validate()?;
    let terms: Vec<(f64, Surrogate, LabeledDataset)> = terms
        .iter()
        .filter(|t| t.weight != 0.0 && !t.data.is_empty())
        .map(|t| {
            let d = if dedup { t.data.canonical() } else { t.data.clone() };
            (t.weight, t.surrogate, d)
        })
        .collect();
    let Some((_, _, first)) = terms.first() else {
        return Err(Error::EmptyDataset("training data"));
    };
    let dim = first.dim();
    let k = spec.num_classes;
    for (w, _, d) in &terms {
        if !w.is_finite() {
            return Err(Error::invalid(format!("term weight {w} is not finite")));
        }
        if d.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: d.dim() });
        }
        if let Some(r) = d.iter().find(|r| r.label as usize >= k) {
            return Err(Error::LabelOutOfRange { label: r.label, num_classes: k });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut bias = vec![0.0; k];
    let mut gw = vec![0.0; k * dim];
    let mut gb = vec![0.0; k];
    let mut probs = vec![0.0; k];

    for epoch in 0..spec.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (tw, surrogate, data) in &terms {
            let scale = tw / data.len() as f64;
            for r in data {
                let y = r.label as usize;
                let ce = softmax_into(&weights, &bias, &r.features, y, &mut probs);
                // d loss / d z_c = factor · (p_c − [c = y])
                let factor = match surrogate {
                    Surrogate::CrossEntropy => {
                        loss += scale * ce;
                        1.0
                    }
                    Surrogate::SoftError => {
                        loss += scale * (1.0 - probs[y]);
                        probs[y]
                    }
                };
                for c in 0..k {
                    let delta = scale * factor * (probs[c] - f64::from(u8::from(c == y)));
                    gb[c] += delta;
                    let row = &mut gw[c * dim..(c + 1) * dim];
                    for (g, x) in row.iter_mut().zip(&r.features) {
                        *g += delta * x;
                    }
                }
            }
        }
        loss += 0.5 * spec.l2 * weights.iter().map(|w| w * w).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= spec.learning_rate * (g + spec.l2 * *w);
        }
        for (b, g) in bias.iter_mut().zip(&gb) {
            *b -= spec.learning_rate * g;
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }

    let model_spec = ModelSpec::LogisticRegression(*spec);
    Ok(TrainedModel {
        params: ModelParams::LogisticRegression {
            num_classes: k,
            dim,
            weights,
            bias,
        },
        fingerprint: fingerprint(&model_spec, dedup, terms.iter().map(|(w, s, d)| (*w, *s, d))),
    })
}

/// Writes softmax probabilities into `out`; returns the cross-entropy
/// `−log p_y`.
fn softmax_into(weights: &[f64], bias: &[f64], x: &[f64], y: usize, out: &mut [f64]) -> f64 {
    let dim = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        let row = &weights[c * dim..(c + 1) * dim];
        *o = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z_y = out[y];
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    max + sum.ln() - z_y
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl TrainedModel {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            ModelParams::OneNn { dim, .. } | ModelParams::LogisticRegression { dim, .. } => *dim,
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<u32> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.len(),
            });
        }
        Ok(match &self.params {
            ModelParams::OneNn { records, .. } => {
                let mut best: Option<(f64, &DataRecord)> = None;
                for r in records {
                    let d = sq_dist(&r.features, features);
                    let better = match best {
                        None => true,
                        Some((bd, br)) => match d.total_cmp(&bd) {
                            std::cmp::Ordering::Less => true,
                            std::cmp::Ordering::Greater => false,
                            std::cmp::Ordering::Equal => {
                                r.label.cmp(&br.label).then_with(|| r.canonical_cmp(br)).is_lt()
                            }
                        },
                    };
                    if better {
                        best = Some((d, r));
                    }
                }
                best.map_or(0, |(_, r)| r.label)
            }
            ModelParams::LogisticRegression {
                num_classes,
                dim,
                weights,
                bias,
            } => {
                let mut best = (0u32, f64::NEG_INFINITY);
                for c in 0..*num_classes {
                    let row = &weights[c * dim..(c + 1) * dim];
                    let z = bias[c] + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
                    if z > best.1 {
                        best = (c as u32, z);
                    }
                }
                best.0
            }
        })
    }

    /// Fraction of records in `v` (counted with multiplicity) predicted
    /// correctly.
    pub fn accuracy(&self, v: &LabeledDataset) -> Result<f64> {
        if v.is_empty() {
            return Err(Error::EmptyDataset("validation data"));
        }
        let mut correct = 0usize;
        for r in v {
            if self.predict(&r.features)? == r.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / v.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        let put_u64 = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
        match &self.params {
            ModelParams::OneNn { dim, records } => {
                out.push(0);
                put_u64(&mut out, *dim as u64);
                put_u64(&mut out, records.len() as u64);
                for r in records {
                    out.extend_from_slice(&r.label.to_le_bytes());
                    for x in &r.features {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            ModelParams::LogisticRegression {
                num_classes,
                dim,
                weights,
                bias,
            } => {
                out.push(1);
                put_u64(&mut out, *num_classes as u64);
                put_u64(&mut out, *dim as u64);
                for x in weights.iter().chain(bias) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        put_u64(&mut out, self.fingerprint.len() as u64);
        out.extend_from_slice(self.fingerprint.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = BlobCursor { bytes, pos: 0 };
        if cur.take(4)? != BLOB_MAGIC {
            return Err(Error::ModelBlob("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != BLOB_VERSION {
            return Err(Error::ModelBlob(format!("unsupported version {version}")));
        }
        let params = match cur.take(1)?[0] {
            0 => {
                let dim = cur.len()?;
                let n = cur.len()?;
                let mut records = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    let label = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
                    let features = cur.f64s(dim)?;
                    records.push(DataRecord::new(features, label));
                }
                ModelParams::OneNn { dim, records }
            }
            1 => {
                let num_classes = cur.len()?;
                let dim = cur.len()?;
                let size = num_classes
                    .checked_mul(dim)
                    .ok_or_else(|| Error::ModelBlob("dimensions overflow".into()))?;
                let weights = cur.f64s(size)?;
                let bias = cur.f64s(num_classes)?;
                ModelParams::LogisticRegression {
                    num_classes,
                    dim,
                    weights,
                    bias,
                }
            }
            tag => return Err(Error::ModelBlob(format!("unknown kind tag {tag}"))),
        };
        let fp_len = cur.len()?;
        let fingerprint = String::from_utf8(cur.take(fp_len)?.to_vec())
            .map_err(|_| Error::ModelBlob("fingerprint is not UTF-8".into()))?;
        if cur.pos != bytes.len() {
            return Err(Error::ModelBlob(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(Self { params, fingerprint })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct BlobCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelBlob(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::ModelBlob(format!("length {v} too large")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelBlob("length overflow".into()))?)?;
        let xs: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::ModelBlob("non-finite parameter".into()));
        }
        Ok(xs)
    }
}
