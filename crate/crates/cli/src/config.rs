//! JSON market configuration.
//!
//! ```json
//! {
//!   "unit_price": 1.0,
//!   "gain": { "kind": "synthetic_coverage", "scope": "universe", "size": 4, "exponent": 2.0 },
//!   "validation": { "type": "items", "items": [0, 1, 2, 3] },
//!   "parties": [
//!     { "id": 1, "training": { "type": "items", "items": [1] } },
//!     { "id": 2, "training": { "type": "items", "items": [2, 3] } }
//!   ]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapmarket::dataset::{load_csv, load_idx, synth_clusters};
use shapmarket::{ClusterSpec, GainFunction, LabeledDataset, MarketConfig, Party};

use crate::data::{derive_seed, synthetic_digits};
use crate::failure::invalid;

fn one() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_cap() -> usize {
    shapmarket::shapley::EXACT_CAP
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "one")]
    pub unit_price: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_cap")]
    pub exact_cap: usize,
    pub gain: GainFunction,
    /// Shared validation task; parties without their own use this one.
    #[serde(default)]
    pub validation: Option<SourceSpec>,
    pub parties: Vec<PartySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    /// Defaults to the 1-based roster position.
    #[serde(default)]
    pub id: Option<u32>,
    pub training: SourceSpec,
    #[serde(default)]
    pub validation: Option<SourceSpec>,
}

/// Where a dataset comes from. File-backed sources accept an optional
/// label filter and a record limit applied after filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Featureless item ids, for synthetic coverage gains.
    Items { items: Vec<usize> },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default)]
        labels: Option<Vec<u32>>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels_file: PathBuf,
        #[serde(default)]
        labels: Option<Vec<u32>>,
        #[serde(default)]
        limit: Option<usize>,
    },
    /// Gaussian clusters. Without a seed one is derived from `--seed`.
    Synth {
        clusters: Vec<ClusterSpec>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        labels: Option<Vec<u32>>,
    },
    /// Synthetic ten-class digit data, `per_digit` samples of each digit.
    Digits {
        digits: Vec<u32>,
        per_digit: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl SourceSpec {
    fn load(&self, base: &Path, seed: u64) -> anyhow::Result<LabeledDataset> {
        let filter = |d: LabeledDataset, labels: &Option<Vec<u32>>, limit: &Option<usize>| {
            let d = match labels {
                Some(l) => d.filter_labels(l),
                None => d,
            };
            match limit {
                Some(n) => d.take(*n),
                None => d,
            }
        };
        Ok(match self {
            Self::Items { items } => LabeledDataset::items(items),
            Self::Csv {
                path,
                label_column,
                labels,
                limit,
            } => filter(load_csv(base.join(path), label_column)?, labels, limit),
            Self::Idx {
                images,
                labels_file,
                labels,
                limit,
            } => filter(load_idx(base.join(images), base.join(labels_file))?, labels, limit),
            Self::Synth { clusters, seed: s, labels } => {
                filter(synth_clusters(clusters, s.unwrap_or(seed))?, labels, &None)
            }
            Self::Digits {
                digits,
                per_digit,
                seed: s,
            } => {
                if let Some(&d) = digits.iter().find(|&&d| d >= crate::data::DIGITS) {
                    return Err(invalid(format!("digit {d} out of range 0..=9")));
                }
                synthetic_digits(digits, *per_digit, s.unwrap_or(seed))?
            }
        })
    }
}

/// A loaded, validated configuration.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: ConfigFile,
    pub market: MarketConfig,
    pub gain: GainFunction,
    pub parties: Vec<Party>,
    /// The shared validation task, when given.
    pub validation: Option<LabeledDataset>,
    /// SHA-256 of the raw config bytes.
    pub hash: String,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses a config from JSON text. Schema errors name the offending JSON
/// pointer.
pub fn parse_config(text: &str) -> anyhow::Result<ConfigFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = pointer(e.path());
        invalid(format!("config {at}: {}", e.into_inner()))
    })
}

/// Reads, parses and validates a config file and loads every data source.
/// Relative paths resolve against the config's directory.
pub fn load_config(path: &Path, seed: u64) -> anyhow::Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| invalid(format!("config {} is not UTF-8", path.display())))?;
    let file = parse_config(text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut loaded = build(file, base, seed)?;
    loaded.hash = hex::encode(Sha256::digest(&bytes));
    Ok(loaded)
}

/// Validates a parsed config and loads its sources.
pub fn build(file: ConfigFile, base: &Path, seed: u64) -> anyhow::Result<Loaded> {
    let market = MarketConfig {
        unit_price: file.unit_price,
        tau: file.tau,
        lambda: file.lambda,
        epsilon: file.epsilon,
        exact_cap: file.exact_cap,
    };
    market.validate().map_err(|e| {
        let msg = e.to_string();
        let field = msg.rsplit(": ").next().and_then(|m| m.split_whitespace().next()).unwrap_or("");
        invalid(format!("config /{field}: {e}"))
    })?;
    file.gain.validate().map_err(|e| invalid(format!("config /gain: {e}")))?;
    if file.parties.is_empty() {
        return Err(invalid("config /parties: at least one party is required"));
    }

    let validation = file
        .validation
        .as_ref()
        .map(|s| s.load(base, derive_seed(seed, 0)))
        .transpose()
        .map_err(|e| invalid(format!("config /validation: {e:#}")))?;
    if validation.as_ref().is_some_and(LabeledDataset::is_empty) {
        return Err(invalid("config /validation: source yields no records"));
    }
    let mut parties = Vec::with_capacity(file.parties.len());
    for (i, spec) in file.parties.iter().enumerate() {
        let stream = 2 * i as u64 + 1;
        let training = spec
            .training
            .load(base, derive_seed(seed, stream))
            .map_err(|e| invalid(format!("config /parties/{i}/training: {e:#}")))?;
        if training.is_empty() {
            return Err(invalid(format!("config /parties/{i}/training: source yields no records")));
        }
        let own = match &spec.validation {
            Some(s) => Some(
                s.load(base, derive_seed(seed, stream + 1))
                    .map_err(|e| invalid(format!("config /parties/{i}/validation: {e:#}")))?,
            ),
            None => None,
        };
        let v = match (own, &validation) {
            (Some(v), _) => v,
            (None, Some(v)) => v.clone(),
            (None, None) => {
                return Err(invalid(format!(
                    "config /parties/{i}/validation: missing, and no top-level validation is set"
                )))
            }
        };
        if v.is_empty() {
            return Err(invalid(format!("config /parties/{i}/validation: source yields no records")));
        }
        let id = spec.id.unwrap_or(i as u32 + 1);
        parties.push(Party::new(id, training, v)?);
    }
    shapmarket::market::validate_roster(&parties).map_err(|e| invalid(format!("config /parties: {e}")))?;

    Ok(Loaded {
        gain: file.gain,
        file,
        market,
        parties,
        validation,
        hash: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "gain": { "kind": "synthetic_coverage", "scope": "universe", "size": 4, "exponent": 2.0 },
        "validation": { "type": "items", "items": [0, 1, 2, 3] },
        "parties": [
            { "training": { "type": "items", "items": [1] } },
            { "training": { "type": "items", "items": [2, 3] } }
        ]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let file = parse_config(MINIMAL).unwrap();
        let loaded = build(file, Path::new("."), 0).unwrap();
        assert_eq!(loaded.market, MarketConfig::default());
        assert_eq!(loaded.parties.len(), 2);
        assert_eq!(loaded.parties[1].id, 2);
        assert_eq!(loaded.parties[0].validation.len(), 4);
    }

    #[test]
    fn tau_out_of_range() {
        let text = MINIMAL.replacen('{', r#"{ "tau": 1.5,"#, 1);
        let err = build(parse_config(&text).unwrap(), Path::new("."), 0).unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
        assert_eq!(crate::failure::exit_code(&err), 1);
    }

    #[test]
    fn empty_training_rejected() {
        let text = MINIMAL.replace(r#""items": [1]"#, r#""items": []"#);
        let err = build(parse_config(&text).unwrap(), Path::new("."), 0).unwrap_err();
        assert!(err.to_string().contains("/parties/0/training"), "{err}");
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let text = MINIMAL.replace(r#""items": [2, 3]"#, r#""items": ["x"]"#);
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("/parties/1/training"), "{err}");
        let text = MINIMAL.replacen('{', r#"{ "bogus": 1,"#, 1);
        assert!(parse_config(&text).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn synth_sources_follow_the_seed() {
        let text = r#"{
            "gain": { "kind": "model_accuracy", "model": { "kind": "one_nn" } },
            "validation": { "type": "digits", "digits": [0, 1], "per_digit": 3 },
            "parties": [
                { "training": { "type": "digits", "digits": [0], "per_digit": 4 } },
                { "training": { "type": "digits", "digits": [1], "per_digit": 4, "seed": 5 } }
            ]
        }"#;
        let a = build(parse_config(text).unwrap(), Path::new("."), 1).unwrap();
        let b = build(parse_config(text).unwrap(), Path::new("."), 2).unwrap();
        assert_ne!(a.parties[0].training, b.parties[0].training);
        assert_eq!(a.parties[1].training, b.parties[1].training);
        assert_ne!(a.parties[0].training, a.parties[1].training);
    }

    #[test]
    fn csv_source_with_filter() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "x,y,label\n0,1,0\n1,0,1\n2,2,1\n").unwrap();
        let text = r#"{
            "gain": { "kind": "model_accuracy", "model": { "kind": "one_nn" } },
            "parties": [
                { "training": { "type": "csv", "path": "d.csv", "labels": [1] },
                  "validation": { "type": "csv", "path": "d.csv", "limit": 1 } }
            ]
        }"#;
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, text).unwrap();
        let loaded = load_config(&cfg, 0).unwrap();
        assert_eq!(loaded.parties[0].training.len(), 2);
        assert_eq!(loaded.parties[0].validation.len(), 1);
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn missing_file_is_a_validation_error() {
        let err = load_config(Path::new("/nonexistent/x.json"), 0).unwrap_err();
        assert_eq!(crate::failure::exit_code(&err), 1);
    }
}
