//! Tabular datasets with typed columns and explicit missing cells.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("DegenerateSplit: {0}")]
    DegenerateSplit(String),
    #[error("UnknownColumn: {0}")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Column storage. Numeric cells are always finite; `None` is a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    /// Builds a numeric column. Non-finite values are stored as missing.
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        let values = values
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite()))
            .collect();
        Self {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn numeric_dense(name: impl Into<String>, values: &[f64]) -> Self {
        Self::numeric(name, values.iter().map(|&v| Some(v)).collect())
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Categorical(values),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    /// Non-missing numeric values in row order. Empty for categorical columns.
    pub fn present_values(&self) -> Vec<f64> {
        match &self.data {
            ColumnData::Numeric(v) => v.iter().flatten().copied().collect(),
            ColumnData::Categorical(_) => Vec::new(),
        }
    }

    /// Number of distinct non-missing values.
    pub fn distinct_count(&self) -> usize {
        let mut seen: Vec<String> = (0..self.len()).filter(|&r| !self.is_missing(r)).map(|r| self.cell_text(r)).collect();
        seen.sort();
        seen.dedup();
        seen.len()
    }

    fn cell_text(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) => v[row].map(format_float).unwrap_or_default(),
            ColumnData::Categorical(v) => v[row].clone().unwrap_or_default(),
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Dataset {
    /// Checks the row-count and unique-name invariants.
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, DatasetError> {
        let row_count = columns.first().map(Column::len).unwrap_or(0);
        Self::with_rows(name, columns, row_count)
    }

    /// Like [`Dataset::new`] but keeps an explicit row count, which matters
    /// once every column has been removed.
    pub fn with_rows(
        name: impl Into<String>,
        columns: Vec<Column>,
        row_count: usize,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.len() != row_count {
                return Err(DatasetError::Format(format!(
                    "column {} has {} values, expected {}",
                    c.name,
                    c.len(),
                    row_count
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::Format(format!("duplicate column name {}", c.name)));
            }
        }
        Ok(Self {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<Column> {
        self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn without_column(&self, name: &str) -> Result<Dataset, DatasetError> {
        if self.column(name).is_none() {
            return Err(DatasetError::UnknownColumn(name.to_string()));
        }
        let cols = self.columns.iter().filter(|c| c.name != name).cloned().collect();
        Dataset::with_rows(self.name.clone(), cols, self.row_count)
    }

    pub fn select(&self, names: &[&str]) -> Result<Dataset, DatasetError> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let c = self
                .column(n)
                .ok_or_else(|| DatasetError::UnknownColumn(n.to_string()))?;
            cols.push(c.clone());
        }
        Dataset::with_rows(self.name.clone(), cols, self.row_count)
    }

    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            row_count: rows.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DatasetError> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<&str> = self.column_names();
        wr.write_record(&header).map_err(csv_err)?;
        let mut row = Vec::with_capacity(self.columns.len());
        for r in 0..self.row_count {
            row.clear();
            row.extend(self.columns.iter().map(|c| c.cell_text(r)));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Size in bytes of the CSV serialization, without materializing it.
    pub fn csv_byte_size(&self) -> u64 {
        let mut counter = ByteCounter(0);
        self.write_csv(&mut counter).expect("counting writer cannot fail");
        counter.0
    }

    /// Reads CSV text, inferring column kinds: a column is numeric iff every
    /// non-empty cell parses as a finite float.
    pub fn read_csv<R: Read>(name: &str, reader: R) -> Result<Dataset, DatasetError> {
        Self::read_csv_with_kinds(name, reader, None)
    }

    /// Reads CSV text with forced column kinds (used by cache payloads).
    pub fn read_csv_with_kinds<R: Read>(
        name: &str,
        reader: R,
        kinds: Option<&[ColumnKind]>,
    ) -> Result<Dataset, DatasetError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let headers: Vec<String> = rd
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(DatasetError::Format("missing header row".into()));
        }
        let mut seen = HashSet::new();
        for h in &headers {
            if !seen.insert(h.as_str()) {
                return Err(DatasetError::Format(format!("duplicate header {h}")));
            }
        }
        if let Some(k) = kinds {
            if k.len() != headers.len() {
                return Err(DatasetError::Format("column kind count mismatch".into()));
            }
        }
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| DatasetError::Format(format!("row {}: {e}", i + 1)))?;
            for (col, cell) in raw.iter_mut().zip(rec.iter()) {
                col.push(cell.to_string());
            }
        }
        let row_count = raw.first().map(Vec::len).unwrap_or(0);
        let columns = headers
            .into_iter()
            .zip(raw)
            .enumerate()
            .map(|(i, (h, cells))| {
                let numeric = match kinds {
                    Some(k) => k[i] == ColumnKind::Numeric,
                    None => cells
                        .iter()
                        .all(|c| c.is_empty() || parse_finite(c).is_some()),
                };
                if numeric {
                    let vals = cells
                        .iter()
                        .map(|c| if c.is_empty() { Ok(None) } else {
                            parse_finite(c).map(Some).ok_or_else(|| {
                                DatasetError::Format(format!("column {h}: {c:?} is not numeric"))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(Column::numeric(h, vals))
                } else {
                    let vals = cells
                        .into_iter()
                        .map(|c| if c.is_empty() { None } else { Some(c) })
                        .collect();
                    Ok(Column::categorical(h, vals))
                }
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        Dataset::with_rows(name, columns, row_count)
    }

    /// Fisher-Yates shuffle of row indices under `SeededRng(seed)`; the last
    /// `ceil(test_ratio * n)` shuffled rows form the test part.
    pub fn split(&self, test_ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
        let (train, test) = split_indices(self.row_count, test_ratio, seed)?;
        Ok((self.take_rows(&train), self.take_rows(&test)))
    }
}

/// Row partition used by [`Dataset::split`].
pub fn split_indices(
    n: usize,
    test_ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(DatasetError::DegenerateSplit(format!(
            "test_ratio {test_ratio} outside (0, 1)"
        )));
    }
    // The epsilon keeps products like 0.1 * 30 from rounding up a whole row.
    let n_test = ((test_ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_test == 0 || n_test >= n {
        return Err(DatasetError::DegenerateSplit(format!(
            "{n} rows with test_ratio {test_ratio} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::read_csv(&name, std::io::BufReader::new(file))
}

fn csv_err(e: csv::Error) -> DatasetError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DatasetError::Io(io),
            other => DatasetError::Format(format!("{other:?}")),
        }
    } else {
        DatasetError::Format(e.to_string())
    }
}

struct ByteCounter(u64);

impl Write for ByteCounter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} rows x {} columns)", self.name, self.row_count, self.columns.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset, DatasetError> {
        Dataset::read_csv("t", text.as_bytes())
    }

    #[test]
    fn infers_kinds() {
        let d = read("a,b\n1,x\n2,y\n").unwrap();
        assert_eq!(d.row_count(), 2);
        assert_eq!(d.columns()[0].data, ColumnData::Numeric(vec![Some(1.0), Some(2.0)]));
        assert_eq!(
            d.columns()[1].data,
            ColumnData::Categorical(vec![Some("x".into()), Some("y".into())])
        );
    }

    #[test]
    fn empty_cells_are_missing() {
        let d = read("a,b,c\n1,,\n2,3,x\n").unwrap();
        assert!(d.columns()[1].is_missing(0));
        assert_eq!(d.columns()[1].kind(), ColumnKind::Numeric);
        assert!(d.columns()[2].is_missing(0));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(read("a,b\n1,2\n3\n"), Err(DatasetError::Format(_))));
    }

    #[test]
    fn duplicate_headers_rejected() {
        assert!(matches!(read("a,a\n1,2\n"), Err(DatasetError::Format(_))));
    }

    #[test]
    fn quoted_cells() {
        let d = read("name,v\n\"x, y\",1\n\"say \"\"hi\"\"\",2\n").unwrap();
        let ColumnData::Categorical(v) = &d.columns()[0].data else { panic!() };
        assert_eq!(v[0].as_deref(), Some("x, y"));
        assert_eq!(v[1].as_deref(), Some("say \"hi\""));
    }

    #[test]
    fn nonfinite_text_is_categorical() {
        let d = read("a\ninf\n1\n").unwrap();
        assert_eq!(d.columns()[0].kind(), ColumnKind::Categorical);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csv("/nonexistent/x.csv"), Err(DatasetError::Io(_))));
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            "t",
            vec![
                Column::numeric("a", vec![Some(0.1), None, Some(1e-300), Some(-2.5e17)]),
                Column::categorical("b", vec![Some("p,q".into()), None, Some("r".into()), Some("s".into())]),
            ],
        )
        .unwrap();
        let text = d.to_csv_string();
        let back = Dataset::read_csv("t", text.as_bytes()).unwrap();
        assert_eq!(back, d);
        assert_eq!(d.csv_byte_size(), text.len() as u64);
    }

    #[test]
    fn split_sizes() {
        let d = Dataset::new("t", vec![Column::numeric_dense("a", &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        for seed in 0..10 {
            let (tr, te) = d.split(0.25, seed).unwrap();
            assert_eq!(te.row_count(), 1);
            assert_eq!(tr.row_count(), 3);
        }
    }

    #[test]
    fn split_769_rows() {
        let (tr, te) = split_indices(769, 0.25, 0).unwrap();
        assert_eq!(te.len(), 193);
        assert_eq!(tr.len(), 576);
    }

    #[test]
    fn split_deterministic_and_exact() {
        let a = split_indices(100, 0.3, 5).unwrap();
        let b = split_indices(100, 0.3, 5).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.0.iter().chain(a.1.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(a.1.len(), 30);
    }

    #[test]
    fn degenerate_splits() {
        assert!(matches!(split_indices(1, 0.5, 0), Err(DatasetError::DegenerateSplit(_))));
        assert!(matches!(split_indices(10, 0.0, 0), Err(DatasetError::DegenerateSplit(_))));
        assert!(matches!(split_indices(10, 1.0, 0), Err(DatasetError::DegenerateSplit(_))));
        assert!(matches!(split_indices(3, 0.999, 0), Err(DatasetError::DegenerateSplit(_))));
    }

    #[test]
    fn invariants_checked() {
        let err = Dataset::new(
            "t",
            vec![Column::numeric_dense("a", &[1.0]), Column::numeric_dense("b", &[1.0, 2.0])],
        );
        assert!(err.is_err());
        let err = Dataset::new(
            "t",
            vec![Column::numeric_dense("a", &[1.0]), Column::numeric_dense("a", &[2.0])],
        );
        assert!(err.is_err());
    }
}
