//! Multivariate time series container, label series, and CSV ingestion.
//!
//! A [`TimeSeriesFrame`] is an `N × F` row-major matrix of finite values with
//! uniformly spaced integer timestamps and unique feature names. Frames are
//! immutable once built; every transformation returns a new frame.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame<T> {
    timestamps: Vec<i64>,
    step: i64,
    names: Vec<String>,
    data: Vec<T>,
}

impl<T: Scalar> TimeSeriesFrame<T> {
    /// Builds a frame from rows of values. The step is inferred from the
    /// first two timestamps (1 for single-row frames).
    pub fn new(timestamps: Vec<i64>, names: Vec<String>, data: Vec<T>) -> Result<Self> {
        let step = if timestamps.len() >= 2 {
            timestamps[1] - timestamps[0]
        } else {
            1
        };
        Self::with_step(timestamps, step, names, data)
    }

    pub fn with_step(timestamps: Vec<i64>, step: i64, names: Vec<String>, data: Vec<T>) -> Result<Self> {
        let frame = Self {
            timestamps,
            step,
            names,
            data,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frame over implicit timestamps `0..N`.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<T>]) -> Result<Self> {
        let f = names.len();
        let mut data = Vec::with_capacity(rows.len() * f);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != f {
                return Err(Error::Schema(format!(
                    "row {i} has {} values, expected {f}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new((0..rows.len() as i64).collect(), names, data)
    }

    /// Frame from feature columns over implicit timestamps `0..N`.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<T>]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Schema("columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(n * columns.len());
        for r in 0..n {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Self::new((0..n as i64).collect(), names, data)
    }

    /// Checks every frame invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        let f = self.names.len();
        if n == 0 {
            return Err(Error::Invariant("frame has no rows".into()));
        }
        if f == 0 {
            return Err(Error::Invariant("frame has no features".into()));
        }
        if self.data.len() != n * f {
            return Err(Error::Invariant(format!(
                "data length {} differs from {n} rows × {f} features",
                self.data.len()
            )));
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if gap == 0 {
                return Err(Error::DuplicateTimestamp {
                    row: i + 2,
                    timestamp: w[1],
                });
            }
            if gap != self.step {
                return Err(Error::Spacing {
                    row: i + 2,
                    expected: self.step,
                    found: gap,
                    timestamp: w[1],
                });
            }
        }
        if self.step <= 0 {
            return Err(Error::Invariant(format!("step must be positive, got {}", self.step)));
        }
        let mut seen = HashSet::with_capacity(f);
        for name in &self.names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Invariant(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite value at row {}, feature `{}`",
                pos / f,
                self.names[pos % f]
            )));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    /// Row-major values, `N × F`.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        let f = self.n_features();
        &self.data[r * f..(r + 1) * f]
    }

    pub fn value(&self, r: usize, c: usize) -> T {
        self.data[r * self.n_features() + c]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        let f = self.n_features();
        self.data.iter().skip(c).step_by(f).copied().collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_rows() {
            return Err(Error::Bounds(format!(
                "slice [{start}, {end}) of frame with {} rows",
                self.n_rows()
            )));
        }
        let f = self.n_features();
        Ok(Self {
            timestamps: self.timestamps[start..end].to_vec(),
            step: self.step,
            names: self.names.clone(),
            data: self.data[start * f..end * f].to_vec(),
        })
    }

    /// Keeps the given feature columns, in the given order.
    pub fn select(&self, features: &[usize]) -> Result<Self> {
        if let Some(&bad) = features.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::Bounds(format!(
                "feature index {bad} of frame with {} features",
                self.n_features()
            )));
        }
        let mut data = Vec::with_capacity(self.n_rows() * features.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            data.extend(features.iter().map(|&c| row[c]));
        }
        Self::with_step(
            self.timestamps.clone(),
            self.step,
            features.iter().map(|&c| self.names[c].clone()).collect(),
            data,
        )
    }

    /// Same timestamps and names over new values of identical shape.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::with_step(self.timestamps.clone(), self.step, self.names.clone(), data)
    }

    /// Replaces one feature column.
    pub fn with_column(&self, c: usize, values: &[T]) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::Schema(format!(
                "column of length {} for frame with {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        let f = self.n_features();
        let mut data = self.data.clone();
        for (r, &v) in values.iter().enumerate() {
            data[r * f + c] = v;
        }
        self.with_data(data)
    }

    /// Converts to another scalar type (values rounded as the target requires).
    pub fn cast<U: Scalar>(&self) -> Result<TimeSeriesFrame<U>> {
        TimeSeriesFrame::with_step(
            self.timestamps.clone(),
            self.step,
            self.names.clone(),
            self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        )
    }

    /// Writes `timestamp,<names...>` followed by one line per row. Values use
    /// the shortest representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(self.n_features() + 1);
        header.push("timestamp".to_string());
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.push(self.timestamps[r].to_string());
            record.extend(self.row(r).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Which CSV columns become the frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Timestamp column; `None` assigns `0..N` in file order.
    pub timestamp_column: Option<String>,
    /// Feature columns; `None` takes every non-timestamp column.
    pub feature_columns: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn with_timestamp(column: impl Into<String>) -> Self {
        Self {
            timestamp_column: Some(column.into()),
            feature_columns: None,
        }
    }
}

fn parse_cell<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    let v: T = s.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{s}`"),
        });
    }
    Ok(v)
}

/// Reads a headed CSV file. Rows are sorted by timestamp; duplicates and
/// uneven spacing are rejected. Row numbers in errors are 1-based data rows
/// after sorting.
pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesFrame<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let ts_idx = match &schema.timestamp_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("timestamp column `{name}` not in header")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => {
            if cols.is_empty() {
                return Err(Error::Schema("no feature columns requested".into()));
            }
            cols.iter()
                .map(|c| {
                    headers
                        .iter()
                        .position(|h| h == c)
                        .ok_or_else(|| Error::Schema(format!("feature column `{c}` not in header")))
                })
                .collect::<Result<_>>()?
        }
        None => (0..headers.len()).filter(|&i| Some(i) != ts_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Schema("file has no feature columns".into()));
    }

    let mut rows: Vec<(i64, Vec<T>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let ts = match ts_idx {
            Some(ti) => {
                let raw = record.get(ti).unwrap_or("").trim();
                raw.parse::<i64>().map_err(|_| Error::Parse {
                    row: row_no,
                    column: headers[ti].clone(),
                    message: format!("`{raw}` is not an integer timestamp"),
                })?
            }
            None => i as i64,
        };
        let values = feature_idx
            .iter()
            .map(|&c| parse_cell(record.get(c).unwrap_or(""), row_no, &headers[c]))
            .collect::<Result<Vec<T>>>()?;
        rows.push((ts, values));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("csv file has no data rows".into()));
    }
    rows.sort_by_key(|(ts, _)| *ts);

    let names = feature_idx.iter().map(|&c| headers[c].clone()).collect();
    let timestamps: Vec<i64> = rows.iter().map(|(t, _)| *t).collect();
    let data = rows.into_iter().flat_map(|(_, v)| v).collect();
    TimeSeriesFrame::new(timestamps, names, data)
}

/// Reads SMD-style raw files: comma-separated numeric rows, no header.
/// Features are named `f0..f{F-1}` and timestamps are row indices.
pub fn read_smd<T: Scalar, R: Read>(reader: R) -> Result<TimeSeriesFrame<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width = None;
    let mut data = Vec::new();
    let mut n = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let f = *width.get_or_insert(record.len());
        if record.len() != f {
            return Err(Error::Schema(format!(
                "row {} has {} columns, expected {f}",
                i + 1,
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(cell, i + 1, &format!("f{c}"))?);
        }
        n += 1;
    }
    let f = width.ok_or_else(|| Error::InsufficientData("smd file has no rows".into()))?;
    TimeSeriesFrame::new(
        (0..n as i64).collect(),
        (0..f).map(|c| format!("f{c}")).collect(),
        data,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Csv,
    Smd,
}

pub fn ingest<T: Scalar>(path: impl AsRef<Path>, format: DataFormat, schema: &CsvSchema) -> Result<TimeSeriesFrame<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = std::io::BufReader::new(file);
    match format {
        DataFormat::Csv => read_csv(reader, schema),
        DataFormat::Smd => read_smd(reader),
    }
}

/// Ground-truth anomaly flags aligned to a frame's rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    values: Vec<bool>,
}

impl LabelSeries {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn for_frame<T: Scalar>(values: Vec<bool>, frame: &TimeSeriesFrame<T>) -> Result<Self> {
        if values.len() != frame.n_rows() {
            return Err(Error::Alignment(format!(
                "{} labels for a frame of {} rows",
                values.len(),
                frame.n_rows()
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::Bounds(format!("label slice [{start}, {end}) of {}", self.len())));
        }
        Ok(Self::new(self.values[start..end].to_vec()))
    }

    /// `timestamp,label` with 0/1 labels.
    pub fn write_csv<W: Write>(&self, timestamps: &[i64], writer: W) -> Result<()> {
        if timestamps.len() != self.len() {
            return Err(Error::Alignment("label/timestamp length mismatch".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "label"])?;
        for (t, &v) in timestamps.iter().zip(&self.values) {
            w.write_record([t.to_string(), u8::from(v).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `timestamp,label` CSV (header required) or, for SMD, one 0/1
    /// value per line without header.
    pub fn read<R: Read>(reader: R, format: DataFormat) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(format == DataFormat::Csv)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let col = usize::from(format == DataFormat::Csv);
        let mut values = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let raw = record.get(col).or_else(|| record.get(0)).unwrap_or("");
            let v = match raw {
                "0" | "false" => false,
                "1" | "true" => true,
                other => {
                    let parsed: f64 = other.parse().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: "label".into(),
                        message: format!("`{other}` is not a label"),
                    })?;
                    parsed != 0.0
                }
            };
            values.push(v);
        }
        Ok(Self::new(values))
    }

    pub fn load(path: impl AsRef<Path>, format: DataFormat) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), format)
    }
}
