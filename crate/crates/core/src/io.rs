//! CSV readers and writers for matrices, labels and weights.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Scalar};

use crate::data::{Partition, WeightState};
use crate::error::{Error, Result};

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

/// Writes `rows` (already formatted fields) as CSV under `header`.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = create(path)?;
    let write = |out: &mut std::io::BufWriter<std::fs::File>, fields: &[String]| -> std::io::Result<()> {
        let line: Vec<String> = fields.iter().map(|f| quote(f)).collect();
        writeln!(out, "{}", line.join(","))
    };
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    write(&mut out, &header).map_err(|e| Error::io(path, e))?;
    for row in rows {
        write(&mut out, &row).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Square matrix with an `id` header row and an id first column.
pub fn write_square_matrix<T: Scalar + Display>(path: &Path, ids: &[String], matrix: &DMatrix<T>) -> Result<()> {
    let mut header = vec!["id"];
    header.extend(ids.iter().map(String::as_str));
    let rows = (0..matrix.nrows()).map(|i| {
        let mut row = vec![ids[i].clone()];
        row.extend((0..matrix.ncols()).map(|j| matrix[(i, j)].to_string()));
        row
    });
    write_rows(path, &header, rows)
}

/// Matrix with named columns and one id per row.
pub fn write_table(path: &Path, ids: &[String], columns: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["id"];
    header.extend(columns.iter().map(String::as_str));
    let rows = (0..matrix.nrows()).map(|i| {
        let mut row = vec![ids[i].clone()];
        row.extend((0..matrix.ncols()).map(|j| matrix[(i, j)].to_string()));
        row
    });
    write_rows(path, &header, rows)
}

/// `id,label` with one-based labels.
pub fn write_labels(path: &Path, ids: &[String], partition: &Partition) -> Result<()> {
    let rows = ids
        .iter()
        .zip(partition.labels())
        .map(|(id, l)| vec![id.clone(), (l + 1).to_string()]);
    write_rows(path, &["id", "label"], rows)
}

/// Reads an `id,label` file (header required); labels may be any strings.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, Partition)> {
    read_label_column(path, None)
}

/// Reads the id column and one label column, chosen by header name or the
/// second column when `column` is `None`.
pub fn read_label_column(path: &Path, column: Option<&str>) -> Result<(Vec<String>, Partition)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let width = header.len();
    let index = match column {
        None if width >= 2 => 1,
        None => {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: "expected an id column and a label column".into(),
            })
        }
        Some(name) => header.iter().skip(1).position(|h| h == name).map(|i| i + 1).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            message: format!("no label column named {name:?}"),
        })?,
    };
    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::RaggedRow {
                row,
                expected: width,
                found: record.len(),
            });
        }
        ids.push(record[0].to_string());
        raw.push(record[index].to_string());
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::DuplicateId(dup.clone()));
    }
    Ok((ids, Partition::from_labels(&raw)))
}

/// Reads a square matrix written by [`write_square_matrix`].
pub fn read_square_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let layout = crate::data::CsvLayout {
        has_header: true,
        id_column: true,
    };
    let d = crate::data::parse_dataset(&text, layout, "kernel")?;
    if d.n_obs() != d.n_features() {
        return Err(Error::NotSquare {
            rows: d.n_obs(),
            cols: d.n_features(),
        });
    }
    Ok((d.ids().to_vec(), d.values().clone()))
}

/// One row per observation (localized) or a single `all` row (global).
pub fn write_weights(path: &Path, ids: &[String], kernel_names: &[String], weights: &WeightState) -> Result<()> {
    match weights {
        WeightState::Global(theta) => {
            let m = DMatrix::from_row_slice(1, theta.len(), theta);
            write_table(path, &["all".to_string()], kernel_names, &m)
        }
        WeightState::Localized(theta) => write_table(path, ids, kernel_names, theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let ids = vec!["a".to_string(), "b,c".into(), "d".into()];
        let p = Partition::from_labels(&[0, 1, 0]);
        write_labels(&path, &ids, &p).unwrap();
        let (ids2, p2) = read_labels(&path).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(p2, p);
    }

    #[test]
    fn named_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        std::fs::write(&path, "id,six,three\na,1,1\nb,2,1\nc,3,2\n").unwrap();
        let (_, three) = read_label_column(&path, Some("three")).unwrap();
        assert_eq!(three.labels(), &[0, 0, 1]);
        let (_, first) = read_labels(&path).unwrap();
        assert_eq!(first.k(), 3);
        assert!(read_label_column(&path, Some("four")).is_err());
    }

    #[test]
    fn square_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let ids = vec!["x".to_string(), "y".into()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        write_square_matrix(&path, &ids, &m).unwrap();
        let (ids2, m2) = read_square_matrix(&path).unwrap();
        assert_eq!((ids2, m2), (ids, m));
    }
}
