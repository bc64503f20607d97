//! Datasets: CSV ingestion, synthetic tabular data, seeded splits, difficulty bands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::Curriculum;
use crate::error::{Error, Result};
use crate::nn::gather_rows;
use crate::report::atomic_write;
use crate::scalar::Scalar;

/// Feature matrix with class labels and an optional sensitive attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub sensitive: Option<Vec<usize>>,
    pub class_count: usize,
    pub sensitive_count: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Array2<T>,
        labels: Vec<usize>,
        sensitive: Option<Vec<usize>>,
        class_count: usize,
        sensitive_count: usize,
    ) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            sensitive,
            class_count,
            sensitive_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n == 0 {
            return Err(Error::input("dataset has no rows"));
        }
        if self.labels.len() != n {
            return Err(Error::input(format!("{n} rows but {} labels", self.labels.len())));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::input(format!("label {bad} >= class_count {}", self.class_count)));
        }
        if let Some(s) = &self.sensitive {
            if s.len() != n {
                return Err(Error::input("sensitive attribute length differs from row count"));
            }
            if let Some(bad) = s.iter().find(|&&v| v >= self.sensitive_count) {
                return Err(Error::input(format!("sensitive value {bad} >= sensitive_count {}", self.sensitive_count)));
            }
        }
        if self.features.iter().any(|v| v.is_nan()) {
            return Err(Error::input("features contain NaN"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.features.view()
    }

    /// Rows `idx`, in that order. Counts are inherited from the parent.
    pub fn subset(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            features: gather_rows(self.features.view(), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sensitive: self.sensitive.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
            class_count: self.class_count,
            sensitive_count: self.sensitive_count,
        }
    }
}

/// Column roles for [`load_csv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    #[serde(default)]
    pub sensitive_column: Option<String>,
}

fn parse_id(cell: &str, row: usize, col: &str) -> Result<usize> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("row {row}, column '{col}': '{cell}' is not numeric")))?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::input(format!("row {row}, column '{col}': '{cell}' is not a non-negative integer id")));
    }
    Ok(v as usize)
}

/// Read a headered numeric CSV. Every column other than the label and sensitive
/// columns becomes a feature, in file order. Class and attribute counts are
/// inferred as `max id + 1`.
pub fn load_csv<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::input(format!("missing column '{name}' in {}", path.display())))
    };
    let label_col = find(&schema.label_column)?;
    let sensitive_col = schema.sensitive_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && Some(c) != sensitive_col)
        .collect();
    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = sensitive_col.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::input(format!("row {row} has {} cells, header has {}", record.len(), headers.len())));
        }
        labels.push(parse_id(&record[label_col], row, &schema.label_column)?);
        if let (Some(c), Some(s)) = (sensitive_col, sensitive.as_mut()) {
            s.push(parse_id(&record[c], row, schema.sensitive_column.as_deref().unwrap())?);
        }
        for &c in &feature_cols {
            let v: f64 = record[c].trim().parse().map_err(|_| {
                Error::input(format!("row {row}, column '{}': '{}' is not numeric", &headers[c], &record[c]))
            })?;
            if v.is_nan() {
                return Err(Error::input(format!("row {row}, column '{}': NaN", &headers[c])));
            }
            values.push(T::of(v));
        }
    }
    if labels.is_empty() {
        return Err(Error::input(format!("{} contains no data rows", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_cols.len()), values)
        .map_err(|e| Error::input(e.to_string()))?;
    let class_count = labels.iter().max().unwrap() + 1;
    let sensitive_count = sensitive.as_ref().map_or(0, |s| s.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, sensitive, class_count, sensitive_count)
}

/// Named partitions used across the audit pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    TargetTrain,
    ShadowTrain,
    Test,
    #[serde(rename = "reference_1")]
    Reference1,
    #[serde(rename = "reference_2")]
    Reference2,
}

impl SplitName {
    pub const ALL: [SplitName; 5] = [
        SplitName::TargetTrain,
        SplitName::ShadowTrain,
        SplitName::Test,
        SplitName::Reference1,
        SplitName::Reference2,
    ];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitName::TargetTrain => "target_train",
            SplitName::ShadowTrain => "shadow_train",
            SplitName::Test => "test",
            SplitName::Reference1 => "reference_1",
            SplitName::Reference2 => "reference_2",
        };
        f.write_str(s)
    }
}

/// Fractions per named split. Omitted splits are simply absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub fractions: BTreeMap<SplitName, f64>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(fractions: &[(SplitName, f64)], seed: u64) -> Self {
        Self {
            fractions: fractions.iter().copied().collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::config("split plan has no splits"));
        }
        if self.fractions.values().any(|&f| !(f > 0.0) || f > 1.0) {
            return Err(Error::config("split fractions must lie in (0, 1]"));
        }
        let total: f64 = self.fractions.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Disjoint row-index sets keyed by split name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub parts: BTreeMap<SplitName, Vec<usize>>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> Result<&[usize]> {
        self.parts
            .get(&name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::config(format!("split '{name}' is not configured")))
    }

    /// `split_name,sample_index` manifest.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["split_name", "sample_index"])?;
            for (name, idx) in &self.parts {
                for i in idx {
                    out.write_record([name.to_string(), i.to_string()])?;
                }
            }
            out.flush()?;
            Ok(())
        })
    }
}

/// Balanced partition sizes of `n` items into `parts`; the remainder goes to the earliest parts.
pub(crate) fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|p| base + usize::from(p < extra)).collect()
}

/// Seeded shuffle followed by a contiguous partition in split-name order.
///
/// Each split receives `floor(n * fraction)` rows; leftover rows go one at a
/// time to the earliest splits.
pub fn split<T: Scalar>(dataset: &Dataset<T>, plan: &SplitPlan) -> Result<Splits> {
    split_indices(dataset.len(), plan)
}

pub fn split_indices(n: usize, plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
    let mut sizes: Vec<usize> = plan.fractions.values().map(|f| (n as f64 * f).floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    for s in sizes.iter_mut() {
        if leftover == 0 {
            break;
        }
        *s += 1;
        leftover -= 1;
    }
    let mut parts = BTreeMap::new();
    let mut start = 0;
    for ((name, _), size) in plan.fractions.iter().zip(sizes) {
        if size == 0 {
            return Err(Error::config(format!("split '{name}' would be empty for {n} rows")));
        }
        parts.insert(*name, order[start..start + size].to_vec());
        start += size;
    }
    Ok(Splits { parts })
}

/// Parameters of the synthetic binary tabular generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n: usize,
    pub dim: usize,
    pub class_count: usize,
    /// Fraction of bits in which each class prototype differs from the shared base pattern.
    pub spread: f64,
    /// Per-bit flip probability applied to each sample.
    pub flip: f64,
    /// Probability that a base-pattern bit is 1.
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub sensitive: Option<SensitiveParams>,
    pub seed: u64,
}

fn default_density() -> f64 {
    0.5
}

/// A sensitive attribute encoded in its own trailing feature block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveParams {
    pub count: usize,
    /// Number of trailing feature columns carrying the attribute (disjoint from the class block).
    pub block: usize,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim == 0 || self.class_count == 0 {
            return Err(Error::config("synthetic n, dim and class_count must be positive"));
        }
        if self.class_count > self.n {
            return Err(Error::config("class_count exceeds n"));
        }
        for (name, p) in [("spread", self.spread), ("flip", self.flip), ("density", self.density)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if let Some(s) = &self.sensitive {
            if s.count < 1 || s.block == 0 || s.block >= self.dim {
                return Err(Error::config("sensitive block must be non-empty and leave room for class features"));
            }
        }
        Ok(())
    }
}

fn random_bits(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<bool> {
    (0..len).map(|_| rng.random_bool(p)).collect()
}

fn flip_bits(rng: &mut ChaCha8Rng, bits: &[bool], p: f64) -> Vec<bool> {
    bits.iter().map(|&b| if p > 0.0 && rng.random_bool(p) { !b } else { b }).collect()
}

/// Class-prototype binary data. Labels are balanced (`i mod class_count`) and
/// rows are emitted in shuffled order.
pub fn synth_tabular<T: Scalar>(params: &SynthParams) -> Result<Dataset<T>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let block = params.sensitive.as_ref().map_or(0, |s| s.block);
    let class_dim = params.dim - block;
    let base = random_bits(&mut rng, class_dim, params.density);
    let protos: Vec<Vec<bool>> = (0..params.class_count)
        .map(|_| flip_bits(&mut rng, &base, params.spread))
        .collect();
    let sens_protos: Vec<Vec<bool>> = params
        .sensitive
        .as_ref()
        .map(|s| (0..s.count).map(|_| random_bits(&mut rng, s.block, 0.5)).collect())
        .unwrap_or_default();
    let mut labels: Vec<usize> = (0..params.n).map(|i| i % params.class_count).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((params.n, params.dim));
    let mut sensitive = params.sensitive.as_ref().map(|_| Vec::with_capacity(params.n));
    for (i, &y) in labels.iter().enumerate() {
        let bits = flip_bits(&mut rng, &protos[y], params.flip);
        for (j, b) in bits.into_iter().enumerate() {
            if b {
                features[[i, j]] = T::one();
            }
        }
        if let (Some(sp), Some(out)) = (params.sensitive.as_ref(), sensitive.as_mut()) {
            let s = rng.random_range(0..sp.count);
            let bits = flip_bits(&mut rng, &sens_protos[s], params.flip);
            for (j, b) in bits.into_iter().enumerate() {
                if b {
                    features[[i, class_dim + j]] = T::one();
                }
            }
            out.push(s);
        }
    }
    let sensitive_count = params.sensitive.as_ref().map_or(0, |s| s.count);
    Dataset::new(features, labels, sensitive, params.class_count, sensitive_count)
}

/// Difficulty level per sample index: equal contiguous rank bands, level 0 easiest.
/// Band sizes differ by at most one; larger bands come first.
pub fn bucketize(curriculum: &Curriculum, n_levels: usize) -> Result<Vec<usize>> {
    let n = curriculum.len();
    if n_levels == 0 || n_levels > n {
        return Err(Error::config(format!("cannot form {n_levels} difficulty levels from {n} samples")));
    }
    let sizes = balanced_sizes(n, n_levels);
    let mut level_of_position = Vec::with_capacity(n);
    for (level, &size) in sizes.iter().enumerate() {
        level_of_position.extend(std::iter::repeat_n(level, size));
    }
    let mut levels = vec![0; n];
    for (pos, &sample) in curriculum.order().iter().enumerate() {
        levels[sample] = level_of_position[pos];
    }
    Ok(levels)
}
