//! CSV ingestion and covariate/response scaling.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};
use crate::model::{positive_scale, Standardization};
use crate::partition::Dataset;

/// A numeric table read from CSV, with its header if one was present.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    pub ncols: usize,
}

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ResponseColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

impl FromStr for ResponseColumn {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("last") {
            return Ok(Self::Last);
        }
        Ok(s.parse::<usize>().map_or_else(|_| Self::Name(s.to_string()), Self::Index))
    }
}

fn is_header(record: &csv::StringRecord) -> bool {
    record.iter().any(|f| f.trim().parse::<f64>().is_err())
}

/// Reads a numeric CSV. The first row is a header when any of its cells is
/// not a number. Row and column numbers in errors are 1-based file positions.
pub fn load_table(path: &Path) -> Result<Table> {
    if !path.exists() {
        return Err(DcfError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_err)?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut ncols = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if i == 0 && is_header(&rec) {
            header = Some(rec.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
            ncols = Some(rec.len());
            continue;
        }
        let expected = *ncols.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(DcfError::Parse {
                row: line,
                col: rec.len().min(expected) + 1,
                msg: format!("expected {expected} columns, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DcfError::Parse {
                row: line,
                col: j + 1,
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DcfError::Parse { row: line, col: j + 1, msg: "non-finite value".into() });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DcfError::EmptyDataset);
    }
    Ok(Table { header, rows, ncols: ncols.unwrap_or(0) })
}

fn csv_err(e: csv::Error) -> DcfError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DcfError::Io(io),
        other => DcfError::Data(format!("{other:?}")),
    }
}

impl Table {
    pub fn response_index(&self, col: &ResponseColumn) -> Result<usize> {
        let idx = match col {
            ResponseColumn::Last => self.ncols.checked_sub(1).ok_or(DcfError::EmptyDataset)?,
            ResponseColumn::Index(i) => *i,
            ResponseColumn::Name(name) => self
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| DcfError::Data(format!("no column named '{name}'")))?,
        };
        if idx >= self.ncols {
            return Err(DcfError::Data(format!("response column {idx} out of range for {} columns", self.ncols)));
        }
        Ok(idx)
    }

    pub fn into_dataset(self, col: &ResponseColumn) -> Result<Dataset> {
        let r = self.response_index(col)?;
        if self.ncols < 2 {
            return Err(DcfError::Data("need at least one covariate column and a response".into()));
        }
        let mut x = Vec::with_capacity(self.rows.len() * (self.ncols - 1));
        let mut y = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            for (j, v) in row.iter().enumerate() {
                if j == r {
                    y.push(*v);
                } else {
                    x.push(*v);
                }
            }
        }
        Dataset::new(x, y, self.ncols - 1)
    }
}

pub fn load_csv(path: &Path, col: &ResponseColumn) -> Result<Dataset> {
    load_table(path)?.into_dataset(col)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// Min-max scaling of each covariate to `[0, 1]`.
    Mm,
    /// Zero mean and unit sample variance per covariate.
    #[default]
    Std,
    /// Covariates left as they are.
    Nofs,
}

impl ScalingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mm => "mm",
            Self::Std => "std",
            Self::Nofs => "nofs",
        }
    }
}

impl FromStr for ScalingMode {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mm" => Ok(Self::Mm),
            "std" => Ok(Self::Std),
            "nofs" => Ok(Self::Nofs),
            other => Err(DcfError::InvalidArgument(format!("unknown scaling mode '{other}'"))),
        }
    }
}

/// Covariate maps `(x - shift) / scale` and the response standardization,
/// which is applied in every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub mode: ScalingMode,
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl ScalingSpec {
    pub fn fit(data: &Dataset, mode: ScalingMode) -> Self {
        let std = Standardization::fit(data);
        let d = data.d();
        let (x_shift, x_scale) = match mode {
            ScalingMode::Std => (std.x_shift, std.x_scale),
            ScalingMode::Nofs => (vec![0.0; d], vec![1.0; d]),
            ScalingMode::Mm => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in data.rows() {
                    for j in 0..d {
                        lo[j] = lo[j].min(r[j]);
                        hi[j] = hi[j].max(r[j]);
                    }
                }
                let scale = lo.iter().zip(&hi).map(|(a, b)| positive_scale(b - a)).collect();
                (lo, scale)
            }
        };
        Self { mode, x_shift, x_scale, y_mean: std.y_shift, y_std: std.y_scale }
    }

    pub fn standardization(&self) -> Standardization {
        Standardization {
            x_shift: self.x_shift.clone(),
            x_scale: self.x_scale.clone(),
            y_shift: self.y_mean,
            y_scale: self.y_std,
        }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        self.standardization().map_dataset(data)
    }

    pub fn invert(&self, scaled: &Dataset) -> Result<Dataset> {
        let d = scaled.d();
        let mut x = scaled.x().to_vec();
        for row in x.chunks_exact_mut(d) {
            for (v, (scale, shift)) in row.iter_mut().zip(self.x_scale.iter().zip(&self.x_shift)) {
                *v = *v * scale + shift;
            }
        }
        let y = scaled.y().iter().map(|v| v * self.y_std + self.y_mean).collect();
        Dataset::new(x, y, d)
    }
}

pub fn apply_scaling(data: &Dataset, mode: ScalingMode) -> (Dataset, ScalingSpec) {
    let spec = ScalingSpec::fit(data, mode);
    (spec.apply(data), spec)
}

/// Writes rows under a header with `.` decimals and `\n` line endings.
pub fn write_csv<W: std::io::Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that parses back to the same double; empty for non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        String::new()
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}
