//! Numeric containers shared by every stage of the pipeline.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute tolerance on |Δ_ij − Δ_ji|.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted as PSD.
pub const PSD_TOL: f64 = -1e-8;

/// An N×P matrix of observations with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    ids: Vec<String>,
    name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, values: DMatrix<f64>, ids: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(Error::TooFewObservations { min: 2, found: n });
        }
        if p < 1 {
            return Err(Error::InvalidParameter("dataset needs at least one feature".into()));
        }
        if ids.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: ids.len(),
            });
        }
        for i in 0..n {
            for j in 0..p {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
            }
        }
        check_unique(&ids)?;
        Ok(Dataset {
            values,
            ids,
            name: name.into(),
        })
    }

    /// Builds a dataset with generated ids `obs_1..obs_N`.
    pub fn with_default_ids(name: impl Into<String>, values: DMatrix<f64>) -> Result<Self> {
        let ids = default_ids(values.nrows());
        Self::new(name, values, ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

pub fn default_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("obs_{i}")).collect()
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Fails unless both id lists are identical, element by element.
pub fn check_aligned(left: &[String], right: &[String]) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::LengthMismatch {
            expected: left.len(),
            found: right.len(),
        });
    }
    match left.iter().zip(right).position(|(a, b)| a != b) {
        Some(position) => Err(Error::IdMismatch {
            position,
            left: left[position].clone(),
            right: right[position].clone(),
        }),
        None => Ok(()),
    }
}

/// A hard clustering of N items into `k` clusters.
///
/// Labels are zero-based (`0..k`) in memory and written one-based to disk.
/// A partition may leave some of its `k` clusters empty; such partitions are
/// flagged by [`Partition::is_complete`] returning `false`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK { k, n: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidParameter(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Partition { labels, k })
    }

    /// Relabels arbitrary labels to `0..k` in order of first appearance.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        let k = map.len().max(1);
        Partition { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// True when every one of the `k` clusters has at least one member.
    pub fn is_complete(&self) -> bool {
        self.cluster_sizes().iter().all(|&s| s > 0)
    }

    /// Same partition with labels renumbered in first-appearance order.
    pub fn canonical(&self) -> Self {
        let mut p = Partition::from_labels(&self.labels);
        p.k = p.k.max(self.k);
        p
    }
}

/// A validated symmetric positive-semidefinite similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    ids: Vec<String>,
}

impl KernelMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Wraps a matrix that is PSD by construction (co-clustering counts,
    /// nonnegative combinations of kernels). Symmetry is enforced exactly.
    pub(crate) fn from_trusted(mut entries: DMatrix<f64>, ids: Vec<String>) -> Self {
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        KernelMatrix { entries, ids }
    }

    /// Feature-space distance d_ij = sqrt(Δ_ii + Δ_jj − 2Δ_ij).
    pub fn induced_distances(&self) -> DMatrix<f64> {
        let k = &self.entries;
        let n = k.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0).sqrt()
            }
        })
    }
}

/// Checks symmetry and positive semidefiniteness and wraps the matrix.
pub fn validate_kernel(matrix: DMatrix<f64>, ids: Option<Vec<String>>) -> Result<KernelMatrix> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    check_finite(&matrix)?;
    check_symmetric(&matrix)?;
    let min_eigenvalue = linalg::min_eigenvalue(&matrix);
    if min_eigenvalue < PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue });
    }
    let ids = ids.unwrap_or_else(|| default_ids(rows));
    if ids.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            found: ids.len(),
        });
    }
    check_unique(&ids)?;
    Ok(KernelMatrix { entries: matrix, ids })
}

pub(crate) fn check_finite(matrix: &DMatrix<f64>) -> Result<()> {
    for j in 0..matrix.ncols() {
        for i in 0..matrix.nrows() {
            if !matrix[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_symmetric(matrix: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in (i + 1)..rows {
            let difference = (matrix[(i, j)] - matrix[(j, i)]).abs();
            if difference > SYMMETRY_TOL {
                return Err(Error::Asymmetric { i, j, difference });
            }
        }
    }
    Ok(())
}

/// Kernel weights: one simplex vector, or one simplex row per observation.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightState {
    Global(Vec<f64>),
    Localized(DMatrix<f64>),
}

impl WeightState {
    pub fn uniform_global(m: usize) -> Self {
        WeightState::Global(vec![1.0 / m as f64; m])
    }

    pub fn uniform_localized(n: usize, m: usize) -> Self {
        WeightState::Localized(DMatrix::from_element(n, m, 1.0 / m as f64))
    }

    pub fn n_kernels(&self) -> usize {
        match self {
            WeightState::Global(theta) => theta.len(),
            WeightState::Localized(theta) => theta.ncols(),
        }
    }

    /// Per-kernel weight: θ itself, or the column means of Θ.
    pub fn mean_weights(&self) -> Vec<f64> {
        match self {
            WeightState::Global(theta) => theta.clone(),
            WeightState::Localized(theta) => {
                let n = theta.nrows() as f64;
                theta.column_iter().map(|c| c.sum() / n).collect()
            }
        }
    }

    /// Checks the simplex constraints to within 1e-10.
    pub fn validate(&self) -> Result<()> {
        let check_row = |row: &[f64]| -> Result<()> {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("weights {row:?} are not on the simplex")));
            }
            Ok(())
        };
        match self {
            WeightState::Global(theta) => check_row(theta),
            WeightState::Localized(theta) => {
                for i in 0..theta.nrows() {
                    let row: Vec<f64> = theta.row(i).iter().copied().collect();
                    check_row(&row)?;
                }
                Ok(())
            }
        }
    }
}

/// How a CSV file lays out observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvLayout {
    pub has_header: bool,
    pub id_column: bool,
}

/// Reads a rectangular numeric CSV into a [`Dataset`] named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>, layout: CsvLayout) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text, layout, name).map_err(|e| match e {
        Error::Csv { message, .. } => Error::Csv {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses CSV text; see [`load_dataset`].
pub fn parse_dataset(text: &str, layout: CsvLayout, name: impl Into<String>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(layout.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: Default::default(),
            message: e.to_string(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: record.len(),
            });
        }
        let mut fields = record.iter();
        if layout.id_column {
            ids.push(fields.next().unwrap_or_default().to_string());
        }
        for (column, field) in fields.enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::NonNumeric {
                row,
                column,
                value: field.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            cells.push(value);
        }
    }
    let n = if layout.id_column { ids.len() } else { cells.len() / width.unwrap_or(1).max(1) };
    let p = width.unwrap_or(0).saturating_sub(usize::from(layout.id_column));
    if n < 2 {
        return Err(Error::TooFewObservations { min: 2, found: n });
    }
    if p == 0 {
        return Err(Error::InvalidParameter("dataset has no feature columns".into()));
    }
    let values = DMatrix::from_row_slice(n, p, &cells);
    if !layout.id_column {
        ids = default_ids(n);
    }
    Dataset::new(name, values, ids)
}

/// Binary co-clustering matrix of a partition.
pub fn coclustering_of(partition: &Partition) -> DMatrix<f64> {
    let l = partition.labels();
    DMatrix::from_fn(l.len(), l.len(), |i, j| if l[i] == l[j] { 1.0 } else { 0.0 })
}
