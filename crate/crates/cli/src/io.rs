//! Observation CSV input and fixed-format artifact output.

use std::path::Path;

use nalgebra::DVector;

use crate::error::CliError;

/// An observation that round-trips through a CSV row of `y1..yd`.
pub trait Observation: Sized {
    fn from_row(values: &[f64]) -> Option<Self>;
    fn to_row(&self) -> Vec<f64>;
}

impl Observation for f64 {
    fn from_row(values: &[f64]) -> Option<Self> {
        match values {
            [v] => Some(*v),
            _ => None,
        }
    }

    fn to_row(&self) -> Vec<f64> {
        vec![*self]
    }
}

impl Observation for DVector<f64> {
    fn from_row(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| DVector::from_column_slice(values))
    }

    fn to_row(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

/// Reads columns named `y1, y2, …` (or a single `y`); other columns are ignored.
pub fn read_observations<O: Observation>(path: &Path) -> Result<Vec<O>, CliError> {
    let bad = |m: String| CliError::validation("data.path", m);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut cols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| match h {
            "y" => Some((1, i)),
            _ => h.strip_prefix('y').and_then(|d| d.parse().ok()).map(|d| (d, i)),
        })
        .collect();
    cols.sort_unstable();
    if cols.is_empty() || cols.iter().enumerate().any(|(k, (d, _))| *d != k + 1) {
        return Err(bad("header must name columns y1..yd".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let values = cols
            .iter()
            .map(|&(_, i)| rec.get(i).and_then(|f| f.parse::<f64>().ok()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(format!("row {} is not numeric", row + 1)))?;
        out.push(O::from_row(&values).ok_or_else(|| bad(format!("row {} has {} components", row + 1, values.len())))?);
    }
    if out.is_empty() {
        return Err(bad("no observations".into()));
    }
    Ok(out)
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::F(v) => fmt_f64(*v),
                Cell::U(v) => v.to_string(),
                Cell::S(v) => v.clone(),
            }))
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
