//! Labeled embedding matrices and the class/ensemble statistics computed
//! from them.

mod io;
mod stats;

pub use io::{load_features, read_binary, read_csv, save_features, write_binary, write_csv, FileFormat};
pub use stats::{
    compute_class_stats, compute_ensemble_stats, ensemble_stats_from_features, norm_sq_variance_per_class,
    uniform_weights, ClassStats, Divisor, EnsembleStats,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// A labeled embedding matrix: one row per sample, one column per embedding
/// dimension. Labels are dense class indices in `0..class_count`; the
/// original identifiers of those classes are kept in `class_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    class_ids: Vec<i64>,
    class_rows: Vec<Vec<usize>>,
    row_major: Vec<f64>,
    unit_norm: bool,
}

impl FeatureSet {
    /// Builds a set whose dense labels are also the reported class ids.
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let class_ids = (0..class_count as i64).collect();
        Self::with_class_ids(features, labels, class_ids)
    }

    pub fn with_class_ids(features: DMatrix<f64>, labels: Vec<usize>, class_ids: Vec<i64>) -> Result<Self> {
        let (rows, dim) = features.shape();
        if rows == 0 {
            return Err(Error::Empty("feature set has no rows".into()));
        }
        if dim == 0 {
            return Err(Error::Empty("feature set has zero dimensions".into()));
        }
        if labels.len() != rows {
            return Err(Error::InvalidFeatureSet(format!(
                "{} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        let class_count = class_ids.len();
        let mut class_rows = vec![Vec::new(); class_count];
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::InvalidFeatureSet(format!(
                    "row {row} has label {label}, class count is {class_count}"
                )));
            }
            class_rows[label].push(row);
        }
        if let Some(c) = class_rows.iter().position(Vec::is_empty) {
            return Err(Error::InvalidFeatureSet(format!("class {} has no rows", class_ids[c])));
        }
        for col in 0..dim {
            for row in 0..rows {
                if !features[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        let mut row_major = Vec::with_capacity(rows * dim);
        for row in features.row_iter() {
            row_major.extend(row.iter());
        }
        Ok(Self {
            features,
            labels,
            class_ids,
            class_rows,
            row_major,
            unit_norm: false,
        })
    }

    /// Builds a set from arbitrary integer labels, remapping them to dense
    /// ids in ascending order of the original value.
    pub fn from_original_labels(features: DMatrix<f64>, original: &[i64]) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        for &id in original {
            mapping.entry(id).or_insert(0usize);
        }
        for (dense, slot) in mapping.values_mut().enumerate() {
            *slot = dense;
        }
        let labels = original.iter().map(|id| mapping[id]).collect();
        let class_ids = mapping.keys().copied().collect();
        Self::with_class_ids(features, labels, class_ids)
    }

    /// Builds a set from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], original_labels: &[i64]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::RowWidth {
                    row: i,
                    expected: dim,
                    found: r.len(),
                });
            }
        }
        let features = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::from_original_labels(features, original_labels)
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_ids.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Original identifier of every dense class, indexed by dense id.
    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn class_id(&self, dense: usize) -> i64 {
        self.class_ids[dense]
    }

    /// Row indices belonging to dense class `class`, in row order.
    pub fn rows_of_class(&self, class: usize) -> &[usize] {
        &self.class_rows[class]
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.features.row(i).into_owned()
    }

    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// True when every row was produced by an L2 normalization, so the
    /// squared norms are 1 by construction.
    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub(crate) fn mark_unit_norm(mut self) -> Self {
        self.unit_norm = true;
        self
    }

    /// Same labels and classes with a new feature matrix (the dimension may
    /// change, the row count may not).
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.rows() {
            return Err(Error::InvalidFeatureSet(format!(
                "replacement matrix has {} rows, expected {}",
                features.nrows(),
                self.rows()
            )));
        }
        Self::with_class_ids(features, self.labels.clone(), self.class_ids.clone())
    }

    /// Same features with relabeled rows.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::with_class_ids(self.features.clone(), labels, self.class_ids.clone())
    }

    /// Multiplies every feature by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        self.with_features(&self.features * s)
    }

    /// Builds a new set from groups of row indices; group `g` becomes dense
    /// class `g` and keeps the original id of its first row's class.
    pub fn select_groups(&self, groups: &[&[usize]]) -> Result<Self> {
        let total: usize = groups.iter().map(|g| g.len()).sum();
        let dim = self.dim();
        let mut features = DMatrix::zeros(total, dim);
        let mut labels = Vec::with_capacity(total);
        let mut class_ids = Vec::with_capacity(groups.len());
        let mut out = 0;
        for (g, rows) in groups.iter().enumerate() {
            let first = rows
                .first()
                .ok_or_else(|| Error::InvalidFeatureSet(format!("row group {g} is empty")))?;
            class_ids.push(self.class_ids[self.labels[*first]]);
            for &r in rows.iter() {
                features.row_mut(out).copy_from(&self.features.row(r));
                labels.push(g);
                out += 1;
            }
        }
        let mut set = Self::with_class_ids(features, labels, class_ids)?;
        set.unit_norm = self.unit_norm;
        Ok(set)
    }

    /// Mean of all rows.
    pub fn mean_row(&self) -> DVector<f64> {
        column_means(&self.features)
    }

    /// Row `i` as a contiguous slice.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.row_major[i * d..(i + 1) * d]
    }
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}
