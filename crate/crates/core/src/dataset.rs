//! Tabular regression data: CSV ingestion, seeded splitting and z-score
//! standardization.
//!
//! Splits use a ChaCha8 stream seeded with `seed_from_u64(seed)` and a
//! Fisher-Yates shuffle of `0..m` (`rand::seq::SliceRandom::shuffle`). Both
//! are value-stable across platforms, so a seed pins the split exactly.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Columns whose training stddev falls below this are divided by 1.
pub const STD_GUARD: f64 = 1e-12;

/// Per-feature affine map applied as `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub mean: f64,
    /// The divisor actually used; 1.0 for constant columns.
    pub std: f64,
}

impl FeatureScale {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// m x d, row-major.
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub standardization: Option<Vec<FeatureScale>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.70,
            valid_fraction: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let (t, v) = (self.train_fraction, self.valid_fraction);
        let ok = t > 0.0 && t < 1.0 && v > 0.0 && v < 1.0 && t + v < 1.0;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidFractions { train: t, valid: v })
        }
    }

    /// Portion sizes for `m` examples: floor each fraction, clamp so every
    /// portion keeps at least one example, remainder goes to test.
    pub fn sizes(&self, m: usize) -> Result<(usize, usize, usize), DataError> {
        self.validate()?;
        if m < 3 {
            let which = if m == 0 { "train" } else if m == 1 { "valid" } else { "test" };
            return Err(DataError::EmptySplit { m, which });
        }
        let n_train = ((self.train_fraction * m as f64).floor() as usize).clamp(1, m - 2);
        let n_valid = ((self.valid_fraction * m as f64).floor() as usize).clamp(1, m - 1 - n_train);
        Ok((n_train, n_valid, m - n_train - n_valid))
    }

    /// The shuffled index order; the first `n_train` go to train, and so on.
    pub fn permutation(&self, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        idx.shuffle(&mut rng);
        idx
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if features.ncols() == 0 {
            return Err(DataError::NoFeatures);
        }
        if features.nrows() != labels.len() {
            return Err(DataError::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(DataError::DimensionMismatch {
                expected: features.ncols(),
                found: feature_names.len(),
            });
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            feature_names,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).to_vec()
    }

    /// Rows `idx` in the given order; keeps names and standardization.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Features in original units, undoing any stored standardization.
    pub fn raw_features(&self) -> Array2<f64> {
        match &self.standardization {
            None => self.features.clone(),
            Some(scales) => {
                let mut out = self.features.clone();
                for (mut col, s) in out.columns_mut().into_iter().zip(scales) {
                    col.mapv_inplace(|z| s.invert(z));
                }
                out
            }
        }
    }

    pub fn unstandardize(&self) -> Dataset {
        Dataset {
            features: self.raw_features(),
            standardization: None,
            ..self.clone()
        }
    }

    pub fn label_mean(&self) -> f64 {
        self.labels.iter().sum::<f64>() / self.len() as f64
    }
}

/// Reads a headered CSV; every non-target column becomes a feature.
pub fn load_csv(path: &Path, target_column: &str) -> Result<Dataset, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    if text.trim().is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(e.into()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingColumn(target_column.to_string()))?;
    if header.len() < 2 {
        return Err(DataError::NoFeatures);
    }
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record.map_err(|e| io_err(e.into()))?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::NonNumeric {
                    row,
                    column: header[j].clone(),
                    value: cell.to_string(),
                })?;
            if j == target {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .expect("row lengths checked above");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels, feature_names)
}

/// Seeded three-way partition (train, valid, test).
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let m = data.len();
    let (n_train, n_valid, _) = spec.sizes(m)?;
    let perm = spec.permutation(m);
    let (train_idx, rest) = perm.split_at(n_train);
    let (valid_idx, test_idx) = rest.split_at(n_valid);
    Ok((
        data.select(train_idx),
        data.select(valid_idx),
        data.select(test_idx),
    ))
}

/// Population mean and stddev per column of `features`.
pub fn column_scales(features: &Array2<f64>) -> Vec<FeatureScale> {
    let m = features.nrows() as f64;
    features
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / m;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            FeatureScale {
                mean,
                std: if std < STD_GUARD { 1.0 } else { std },
            }
        })
        .collect()
}

pub fn apply_scales(data: &Dataset, scales: &[FeatureScale]) -> Dataset {
    let mut raw = data.raw_features();
    for (mut col, s) in raw.columns_mut().into_iter().zip(scales) {
        col.mapv_inplace(|x| s.apply(x));
    }
    Dataset {
        features: raw,
        standardization: Some(scales.to_vec()),
        ..data.clone()
    }
}

/// Fits z-score statistics on `train` and applies them to every dataset.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> (Dataset, Vec<Dataset>) {
    let scales = column_scales(&train.raw_features());
    let train_std = apply_scales(train, &scales);
    let others_std = others.iter().map(|d| apply_scales(d, &scales)).collect();
    (train_std, others_std)
}
