use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-column affine standardisation fitted on a reference set of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over `rows` of `features`; all rows if `None`.
    pub fn fit(features: &Matrix, rows: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..features.rows()).collect();
                &all
            }
        };
        if rows.is_empty() {
            return Err(Error::Domain("cannot standardise on zero rows".into()));
        }
        let d = features.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).max(VARIANCE_FLOOR).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardiser fitted on {} columns, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

struct Table {
    ids: Vec<String>,
    labels: Option<Vec<usize>>,
    features: Matrix,
}

fn read_table(path: &Path, label_column: Option<&str>, id_column: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("{}: no column named `{name}`", path.display())))
    };
    let id_idx = find(id_column)?;
    let label_idx = label_column.map(find).transpose()?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&c| c != id_idx && Some(c) != label_idx)
        .collect();

    let mut ids = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion {
                row,
                column: String::new(),
                message: format!("{} cells, header has {}", record.len(), headers.len()),
            });
        }
        ids.push(record[id_idx].trim().to_string());
        if let (Some(li), Some(labels)) = (label_idx, labels.as_mut()) {
            let cell = record[li].trim();
            let y: usize = cell.parse().map_err(|_| {
                Error::Schema(format!("row {row}: label `{cell}` is not a nonnegative integer"))
            })?;
            labels.push(y);
        }
        for &c in &feature_idx {
            let cell = record[c].trim();
            let bad = |message: &str| Error::Ingestion {
                row,
                column: headers[c].to_string(),
                message: message.to_string(),
            };
            if cell.is_empty() {
                return Err(bad("missing value"));
            }
            let v: f64 = cell.parse().map_err(|_| bad("not a number"))?;
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            values.push(v);
        }
    }
    Ok(Table {
        features: Matrix::from_vec(ids.len(), feature_idx.len(), values)?,
        ids,
        labels,
    })
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(2, |&m| (m + 1).max(2))
}

/// Parses a CSV without standardising features.
pub fn read_tabular(path: impl AsRef<Path>, label_column: &str, id_column: &str) -> Result<RawDataset> {
    let t = read_table(path.as_ref(), Some(label_column), id_column)?;
    let labels = t.labels.unwrap_or_default();
    let z = class_count(&labels);
    RawDataset::new(t.features, labels, t.ids, z)
}

/// Parses a CSV and standardises every feature column over all rows.
pub fn load_tabular(path: impl AsRef<Path>, label_column: &str, id_column: &str) -> Result<RawDataset> {
    let mut ds = read_tabular(path, label_column, id_column)?;
    ds.features = Standardizer::fit(&ds.features, None)?.apply(&ds.features)?;
    Ok(ds)
}

/// Writes `id,label,x0,x1,...` with shortest round-trip float formatting.
pub fn write_tabular(dataset: &RawDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let d = dataset.features.cols();
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..d).map(|c| format!("x{c}")));
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(&header).map_err(io)?;
    for (r, (id, y)) in dataset.ids.iter().zip(&dataset.labels).enumerate() {
        let mut rec = vec![id.clone(), y.to_string()];
        rec.extend(dataset.features.row(r).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Joins per-party CSV files on the id column. The first file is the active
/// party's and carries the labels; the others must cover the same ids.
/// Returns the joined (unstandardised) dataset and each file's column count.
pub fn join_party_tables<P: AsRef<Path>>(
    paths: &[P],
    label_column: &str,
    id_column: &str,
) -> Result<(RawDataset, Vec<usize>)> {
    let Some((first, rest)) = paths.split_first() else {
        return Err(Error::Config("no party files given".into()));
    };
    let active = read_table(first.as_ref(), Some(label_column), id_column)?;
    let mut blocks = vec![active.features];
    let mut widths = vec![blocks[0].cols()];
    for p in rest {
        let t = read_table(p.as_ref(), None, id_column)?;
        let index: HashMap<&str, usize> = t.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if index.len() != active.ids.len() {
            return Err(Error::Schema(format!(
                "{} has {} ids, active party has {}",
                p.as_ref().display(),
                index.len(),
                active.ids.len()
            )));
        }
        let mut order = Vec::with_capacity(active.ids.len());
        for id in &active.ids {
            let &i = index.get(id.as_str()).ok_or_else(|| {
                Error::Schema(format!("{} lacks id {id:?}", p.as_ref().display()))
            })?;
            order.push(i);
        }
        widths.push(t.features.cols());
        blocks.push(t.features.select_rows(&order));
    }
    let labels = active.labels.unwrap_or_default();
    let z = class_count(&labels);
    let ds = RawDataset::new(Matrix::hcat(&blocks)?, labels, active.ids, z)?;
    Ok((ds, widths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_small_table() {
        let f = csv_file("id,a,label,b\nr1,1.0,0,2\nr2,3,1,4\nr3,5,1,6\n");
        let ds = read_tabular(f.path(), "label", "id").unwrap();
        assert_eq!(ds.features.shape(), (3, 2));
        assert_eq!(ds.features.row(1), &[3.0, 4.0]);
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn constant_column_standardises_to_zero() {
        let f = csv_file("id,label,a,b\n1,0,7,1\n2,1,7,2\n3,0,7,3\n");
        let ds = load_tabular(f.path(), "label", "id").unwrap();
        assert!(ds.features.column(0).iter().all(|&v| v == 0.0));
        let b = ds.features.column(1);
        assert!((b.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let f = csv_file("id,label,a,b\n1,0,7,1\n2,1,,2\n");
        match read_tabular(f.path(), "label", "id") {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = csv_file("id,label,a\n1,0,NaN\n");
        assert!(matches!(read_tabular(f.path(), "label", "id"), Err(Error::Ingestion { .. })));
        let f = csv_file("id,label,a\n1,0.5,1\n");
        assert!(matches!(read_tabular(f.path(), "label", "id"), Err(Error::Schema(_))));
    }

    #[test]
    fn joins_party_files_by_id() {
        let a = csv_file("id,label,a\nx,0,1\ny,1,2\n");
        let b = csv_file("id,b,c\ny,20,21\nx,10,11\n");
        let (ds, widths) = join_party_tables(&[a.path(), b.path()], "label", "id").unwrap();
        assert_eq!(widths, vec![1, 2]);
        assert_eq!(ds.features.row(0), &[1.0, 10.0, 11.0]);
        assert_eq!(ds.features.row(1), &[2.0, 20.0, 21.0]);
    }
}
