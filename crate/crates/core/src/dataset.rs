//! Labeled datasets with multiset semantics.
//!
//! A [`LabeledDataset`] is an ordered multiset of [`DataRecord`]s. Two records
//! are duplicates iff their labels match and their feature vectors are
//! bitwise identical; [`LabeledDataset::distinct`] removes such duplicates
//! while keeping first-occurrence order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub features: Vec<f64>,
    pub label: u32,
}

/// Hashable identity of a record: feature bit patterns plus label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    bits: Vec<u64>,
    label: u32,
}

impl DataRecord {
    pub fn new(features: Vec<f64>, label: u32) -> Self {
        Self { features, label }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            bits: self.features.iter().map(|x| x.to_bits()).collect(),
            label: self.label,
        }
    }

    /// Total order used for canonical orderings: features lexicographically
    /// (IEEE total order), then label.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.features.iter().zip(&other.features) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.features
            .len()
            .cmp(&other.features.len())
            .then(self.label.cmp(&other.label))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    records: Vec<DataRecord>,
    dim: usize,
    provenance: String,
}

impl PartialEq for LabeledDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.records == other.records
    }
}

impl LabeledDataset {
    /// Builds a dataset, checking that every feature is finite and that all
    /// records share one dimensionality.
    pub fn new(records: Vec<DataRecord>, provenance: impl Into<String>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.features.len());
        Self::with_dim(records, dim, provenance)
    }

    /// Like [`new`](Self::new) but with an explicit dimensionality, which
    /// matters for empty datasets.
    pub fn with_dim(
        records: Vec<DataRecord>,
        dim: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for (index, r) in records.iter().enumerate() {
            if r.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.features.len(),
                });
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteFeature { index });
            }
        }
        Ok(Self {
            records,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            records: Vec::new(),
            dim,
            provenance: String::new(),
        }
    }

    /// Encodes abstract items `k` as one-dimensional records `([k], 0)`.
    /// Used by the coverage gain, where a dataset is just a set of items.
    pub fn items(items: &[usize]) -> Self {
        let records = items
            .iter()
            .map(|&k| DataRecord::new(vec![k as f64], 0))
            .collect();
        Self {
            records,
            dim: 1,
            provenance: "items".into(),
        }
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DataRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Each unique `(features, label)` pair once, in first-occurrence order.
    pub fn distinct(&self) -> LabeledDataset {
        let mut seen = HashSet::with_capacity(self.records.len());
        let records = self
            .records
            .iter()
            .filter(|r| seen.insert(r.key()))
            .cloned()
            .collect();
        LabeledDataset {
            records,
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }

    /// Distinct records sorted canonically; depends only on the set of
    /// records, not their order or multiplicity.
    pub fn canonical(&self) -> LabeledDataset {
        let mut d = self.distinct();
        d.records.sort_by(|a, b| a.canonical_cmp(b));
        d
    }

    /// Multiset union preserving duplicates.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let dim = if self.is_empty() && other.is_empty() {
            self.dim.max(other.dim)
        } else if self.is_empty() {
            other.dim
        } else if other.is_empty() || self.dim == other.dim {
            self.dim
        } else {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        };
        let mut records = Vec::with_capacity(self.len() + other.len());
        records.extend_from_slice(&self.records);
        records.extend_from_slice(&other.records);
        Ok(LabeledDataset {
            records,
            dim,
            provenance: self.provenance.clone(),
        })
    }

    /// Concatenates many datasets in order.
    pub fn concat_all<'a, I>(parts: I) -> Result<LabeledDataset>
    where
        I: IntoIterator<Item = &'a LabeledDataset>,
    {
        let mut out = LabeledDataset::default();
        for part in parts {
            out = out.concat(part)?;
        }
        Ok(out)
    }

    /// `copies` back-to-back copies of this dataset.
    pub fn repeat(&self, copies: usize) -> LabeledDataset {
        let mut records = Vec::with_capacity(self.len() * copies);
        for _ in 0..copies {
            records.extend_from_slice(&self.records);
        }
        LabeledDataset {
            records,
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }

    /// Records whose label is in `labels`, in order.
    pub fn filter_labels(&self, labels: &[u32]) -> LabeledDataset {
        LabeledDataset {
            records: self
                .records
                .iter()
                .filter(|r| labels.contains(&r.label))
                .cloned()
                .collect(),
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }

    /// First `n` records.
    pub fn take(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            records: self.records.iter().take(n).cloned().collect(),
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }

    /// Order-insensitive multiset equality.
    pub fn same_multiset(&self, other: &LabeledDataset) -> bool {
        self.dim == other.dim && self.len() == other.len() && self.multiset_key() == other.multiset_key()
    }

    /// Sorted record keys; equal for datasets equal as multisets.
    pub fn multiset_key(&self) -> Vec<RecordKey> {
        let mut keys: Vec<RecordKey> = self.records.iter().map(DataRecord::key).collect();
        keys.sort();
        keys
    }

    /// Sorted set of labels present.
    pub fn labels(&self) -> Vec<u32> {
        let mut l: Vec<u32> = self.records.iter().map(|r| r.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}

impl<'a> IntoIterator for &'a LabeledDataset {
    type Item = &'a DataRecord;
    type IntoIter = std::slice::Iter<'a, DataRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| self.truncated(4))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn slice(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| self.truncated(n))?;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| self.truncated(n))?;
        self.pos = end;
        Ok(chunk)
    }

    fn truncated(&self, wanted: usize) -> Error {
        Error::IdxFormat {
            path: self.path.to_path_buf(),
            offset: self.bytes.len() as u64,
            reason: format!(
                "truncated: needed {wanted} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ),
        }
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32()?;
        if magic != expected {
            return Err(Error::IdxFormat {
                path: self.path.to_path_buf(),
                offset: 0,
                reason: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image/label pair from memory. Pixels are scaled by 1/255.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<LabeledDataset> {
    let mut img = IdxReader {
        bytes: images,
        pos: 0,
        path: images_path,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let n_images = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;

    let mut lab = IdxReader {
        bytes: labels,
        pos: 0,
        path: labels_path,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let n_labels = lab.u32()? as usize;

    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let dim = rows * cols;
    let pixels = img.slice(n_images * dim)?;
    let label_bytes = lab.slice(n_labels)?;

    let records = pixels
        .chunks_exact(dim.max(1))
        .take(n_images)
        .zip(label_bytes)
        .map(|(px, &label)| {
            DataRecord::new(px.iter().map(|&b| f64::from(b) / 255.0).collect(), u32::from(label))
        })
        .collect();

    LabeledDataset::with_dim(records, dim, format!("idx:{}", images_path.display()))
}

/// Loads an MNIST-style IDX pair (big-endian, magic 0x803 / 0x801).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;
    parse_idx(&images, &labels, ip, lp)
}

/// Loads a comma-separated file with a header row. Every column except
/// `label_column` is a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let csv_err = |row: usize, column: &str, reason: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        reason,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(0, "", e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, "", e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| csv_err(1, label_column, "label column not found in header".into()))?;
    let dim = headers.len() - 1;

    let mut records = Vec::new();
    for result in reader.records() {
        let row = result.map_err(|e| csv_err(0, "", e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != headers.len() {
            return Err(csv_err(
                line,
                "",
                format!("ragged row: {} cells, header has {}", row.len(), headers.len()),
            ));
        }
        let mut features = Vec::with_capacity(dim);
        let mut label = 0;
        for (i, cell) in row.iter().enumerate() {
            let cell = cell.trim();
            if i == label_idx {
                label = cell.parse::<u32>().map_err(|_| {
                    csv_err(line, &headers[i], format!("label {cell:?} is not a non-negative integer"))
                })?;
            } else {
                let x = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| csv_err(line, &headers[i], format!("{cell:?} is not a finite number")))?;
                features.push(x);
            }
        }
        records.push(DataRecord::new(features, label));
    }

    LabeledDataset::with_dim(records, dim, format!("csv:{}", path.display()))
}

/// One Gaussian blob for [`synth_clusters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub label: u32,
    pub center: Vec<f64>,
    pub stddev: f64,
    pub count: usize,
}

/// Isotropic Gaussian samples around each center, cluster by cluster.
/// Deterministic for a fixed seed.
pub fn synth_clusters(spec: &[ClusterSpec], seed: u64) -> Result<LabeledDataset> {
    let dim = spec.first().map_or(0, |c| c.center.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.iter().map(|c| c.count).sum());
    for c in spec {
        if c.center.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.center.len(),
            });
        }
        if !(c.stddev > 0.0 && c.stddev.is_finite()) {
            return Err(Error::invalid(format!("stddev must be positive, got {}", c.stddev)));
        }
        let normal = Normal::new(0.0, c.stddev).map_err(|e| Error::invalid(e.to_string()))?;
        for _ in 0..c.count {
            let features = c.center.iter().map(|&m| m + normal.sample(&mut rng)).collect();
            records.push(DataRecord::new(features, c.label));
        }
    }
    LabeledDataset::with_dim(records, dim, format!("synth:{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn rec(x: &[f64], label: u32) -> DataRecord {
        DataRecord::new(x.to_vec(), label)
    }

    pub(crate) fn idx_pair(n_images: u32, n_labels: u32, pixel: u8) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&n_images.to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        images.extend(std::iter::repeat_n(pixel, n_images as usize * 784));
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&n_labels.to_be_bytes());
        labels.extend((0..n_labels).map(|i| (i % 10) as u8));
        (images, labels)
    }

    fn parse(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
        parse_idx(images, labels, Path::new("img"), Path::new("lab"))
    }

    #[test]
    fn idx_four_images() {
        let (img, lab) = idx_pair(4, 4, 255);
        let d = parse(&img, &lab).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.dim(), 784);
        assert!(d.iter().all(|r| r.features.iter().all(|&x| x == 1.0)));
        assert_eq!(d.records()[3].label, 3);
    }

    #[test]
    fn idx_count_mismatch() {
        let (img, _) = idx_pair(10, 10, 0);
        let (_, lab) = idx_pair(9, 9, 0);
        assert!(matches!(
            parse(&img, &lab),
            Err(Error::CountMismatch { images: 10, labels: 9 })
        ));
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let (mut img, lab) = idx_pair(2, 2, 7);
        img[3] = 0x02;
        match parse(&img, &lab) {
            Err(Error::IdxFormat { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }
        let (mut img, lab) = idx_pair(2, 2, 7);
        img.truncate(16 + 784 + 10);
        match parse(&img, &lab) {
            Err(Error::IdxFormat { offset, reason, .. }) => {
                assert_eq!(offset, 16 + 784 + 10);
                assert!(reason.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn idx_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_pair(3, 3, 51);
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        let a = load_idx(&ip, &lp).unwrap();
        let b = load_idx(&ip, &lp).unwrap();
        assert_eq!(a, b);
        assert!((a.records()[0].features[0] - 0.2).abs() < 1e-15);
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_basic() {
        let f = write_csv("f1,f2,label\n0.5,1,0\n2,3.25,1\n-1,0,2\n");
        let d = load_csv(f.path(), "label").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.records()[1], rec(&[2.0, 3.25], 1));
        assert_eq!(d, load_csv(f.path(), "label").unwrap());
    }

    #[test]
    fn csv_label_column_in_middle() {
        let f = write_csv("a,label,b\n1,4,2\n");
        let d = load_csv(f.path(), "label").unwrap();
        assert_eq!(d.records()[0], rec(&[1.0, 2.0], 4));
    }

    #[test]
    fn csv_errors() {
        let f = write_csv("f1,f2,label\n1,abc,0\n");
        match load_csv(f.path(), "label") {
            Err(Error::Csv { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "f2");
            }
            other => panic!("{other:?}"),
        }
        let f = write_csv("f1,f2\n1,2\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Csv { .. })));
        let f = write_csv("f1,f2,label\n1,2,0\n1,2\n");
        match load_csv(f.path(), "label") {
            Err(Error::Csv { reason, .. }) => assert!(reason.contains("ragged")),
            other => panic!("{other:?}"),
        }
        let f = write_csv("f1,label\n1,-3\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Csv { .. })));
        let f = write_csv("f1,label\nNaN,1\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Csv { .. })));
    }

    #[test]
    fn csv_header_only() {
        let f = write_csv("f1,f2,f3,label\n");
        let d = load_csv(f.path(), "label").unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim(), 3);
    }

    #[test]
    fn distinct_examples() {
        let d = LabeledDataset::new(vec![rec(&[1.0], 0), rec(&[1.0], 0), rec(&[2.0], 1)], "t").unwrap();
        let e = LabeledDataset::new(vec![rec(&[1.0], 0), rec(&[2.0], 1)], "t").unwrap();
        assert_eq!(d.distinct(), e);
        assert_eq!(e.distinct(), e);
        assert!(LabeledDataset::empty(3).distinct().is_empty());
        // same features, different label: not a duplicate
        let f = LabeledDataset::new(vec![rec(&[1.0], 0), rec(&[1.0], 1)], "t").unwrap();
        assert_eq!(f.distinct().len(), 2);
    }

    #[test]
    fn concat_examples() {
        let a = LabeledDataset::items(&[1, 2, 3]);
        let b = LabeledDataset::items(&[4, 5]);
        assert_eq!(a.concat(&b).unwrap().len(), 5);
        assert_eq!(a.concat(&a).unwrap().distinct(), a.distinct());
        let wide = LabeledDataset::new(vec![rec(&[0.0; 784], 0)], "w").unwrap();
        let narrow = LabeledDataset::new(vec![rec(&[0.0, 1.0], 0)], "n").unwrap();
        assert!(matches!(wide.concat(&narrow), Err(Error::DimensionMismatch { .. })));
        assert_eq!(wide.concat(&LabeledDataset::empty(2)).unwrap().dim(), 784);
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(LabeledDataset::new(vec![rec(&[f64::NAN], 0)], "x").is_err());
        assert!(LabeledDataset::new(vec![rec(&[1.0], 0), rec(&[1.0, 2.0], 0)], "x").is_err());
    }

    fn two_clusters(count: usize) -> Vec<ClusterSpec> {
        vec![
            ClusterSpec { label: 0, center: vec![0.0, 0.0], stddev: 1.0, count },
            ClusterSpec { label: 1, center: vec![6.0, 0.0], stddev: 1.0, count },
        ]
    }

    #[test]
    fn synth_determinism() {
        let a = synth_clusters(&two_clusters(50), 7).unwrap();
        let b = synth_clusters(&two_clusters(50), 7).unwrap();
        let c = synth_clusters(&two_clusters(50), 8).unwrap();
        assert_eq!(a.len(), 100);
        let bits = |d: &LabeledDataset| d.iter().flat_map(|r| r.features.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        assert!(synth_clusters(&two_clusters(0), 7).unwrap().is_empty());
    }

    #[test]
    fn synth_errors() {
        let mut s = two_clusters(3);
        s[1].center = vec![1.0];
        assert!(matches!(synth_clusters(&s, 1), Err(Error::DimensionMismatch { .. })));
        let mut s = two_clusters(3);
        s[0].stddev = 0.0;
        assert!(synth_clusters(&s, 1).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = LabeledDataset> {
        prop::collection::vec((0u8..4, 0u8..4, 0u32..3), 0..12).prop_map(|v| {
            let records = v
                .into_iter()
                .map(|(a, b, l)| rec(&[f64::from(a), f64::from(b)], l))
                .collect();
            LabeledDataset::with_dim(records, 2, "arb").unwrap()
        })
    }

    proptest! {
        #[test]
        fn distinct_is_idempotent(d in arb_dataset()) {
            prop_assert_eq!(d.distinct().distinct(), d.distinct());
        }

        #[test]
        fn distinct_ignores_order(a in arb_dataset(), b in arb_dataset()) {
            let ab = a.concat(&b).unwrap().distinct();
            let ba = b.concat(&a).unwrap().distinct();
            prop_assert!(ab.same_multiset(&ba));
            prop_assert_eq!(ab.canonical(), ba.canonical());
        }

        #[test]
        fn self_concat_adds_nothing_distinct(d in arb_dataset()) {
            prop_assert_eq!(d.concat(&d).unwrap().distinct().len(), d.distinct().len());
        }
    }
}
