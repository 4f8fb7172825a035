//! Measured-versus-predicted rows and their CSV/JSON rendering.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

/// How `predicted` relates to `measured`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// Measurement must equal the prediction.
    Exact,
    /// Prediction is an expected value over random challenges.
    Mean,
    /// Prediction is an upper bound on the measurement.
    Bound,
    /// No implementation behind the row; prediction only.
    Analytical,
}

/// CSV header, in serialization order.
pub const COLUMNS: [&str; 14] = [
    "mechanism",
    "k",
    "n",
    "a",
    "y",
    "metric",
    "operation",
    "phase",
    "role",
    "formula",
    "measured",
    "predicted",
    "delta",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub mechanism: String,
    pub k: u64,
    pub n: u64,
    pub a: u64,
    pub y: u64,
    pub metric: String,
    pub operation: String,
    pub phase: String,
    pub role: String,
    pub formula: String,
    #[serde(serialize_with = "number_opt")]
    pub measured: Option<f64>,
    #[serde(serialize_with = "number")]
    pub predicted: f64,
    #[serde(serialize_with = "number_opt")]
    pub delta: Option<f64>,
    pub status: Status,
}

impl Row {
    /// `measured` and `predicted` agree as the status demands.
    pub fn holds(&self) -> bool {
        match (self.status, self.measured) {
            (Status::Analytical, _) | (_, None) | (Status::Mean, _) => true,
            (Status::Exact, Some(m)) => m == self.predicted,
            (Status::Bound, Some(m)) => m <= self.predicted,
        }
    }
}

// Integral values print without a fractional part so reprinted constants
// read exactly as published.
fn number<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        s.serialize_i64(*value as i64)
    } else {
        s.serialize_f64(*value)
    }
}

fn number_opt<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => number(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverheadReport {
    pub rows: Vec<Row>,
}

impl OverheadReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: OverheadReport) {
        self.rows.extend(other.rows);
    }

    /// Rows matching every given `(column, value)` pair.
    pub fn select<'a>(&'a self, filter: &'a [(&'a str, &'a str)]) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |row| {
            filter.iter().all(|(column, want)| {
                let got = match *column {
                    "mechanism" => row.mechanism.as_str(),
                    "metric" => row.metric.as_str(),
                    "operation" => row.operation.as_str(),
                    "phase" => row.phase.as_str(),
                    "role" => row.role.as_str(),
                    other => panic!("cannot filter on column {other}"),
                };
                got == *want
            })
        })
    }

    /// Rows whose measurement contradicts their status.
    pub fn violations(&self) -> Vec<&Row> {
        self.rows.iter().filter(|r| !r.holds()).collect()
    }

    pub fn render(&self, format: Format) -> io::Result<String> {
        match format {
            Format::Json => {
                let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
                text.push('\n');
                Ok(text)
            }
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                w.write_record(COLUMNS).map_err(io::Error::other)?;
                for row in &self.rows {
                    w.serialize(row).map_err(io::Error::other)?;
                }
                let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
                String::from_utf8(bytes).map_err(io::Error::other)
            }
        }
    }

    pub fn parse(text: &str, format: Format) -> io::Result<Self> {
        match format {
            Format::Json => serde_json::from_str(text).map_err(io::Error::other),
            Format::Csv => {
                let mut r = csv::Reader::from_reader(text.as_bytes());
                let rows = r.deserialize().collect::<Result<Vec<Row>, _>>().map_err(io::Error::other)?;
                Ok(OverheadReport { rows })
            }
        }
    }
}

/// Writes `report` to `destination`, or to stdout when it is `None` or `-`.
pub fn emit(report: &OverheadReport, format: Format, destination: Option<&Path>) -> io::Result<()> {
    let text = report.render(format)?;
    match destination {
        Some(path) if path != Path::new("-") => std::fs::write(path, text),
        _ => {
            use io::Write;
            io::stdout().lock().write_all(text.as_bytes())
        }
    }
}
