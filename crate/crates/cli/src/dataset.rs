//! CSV time-series ingestion and the series transforms of the oil–output
//! application.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing value in column {column:?} on line(s) {}", fmt_lines(.lines))]
    Missing { column: String, lines: Vec<usize> },

    #[error("time index is not strictly increasing at line {line}")]
    NonMonotoneTime { line: usize },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("level {value} at position {index} is not positive")]
    NonPositiveLevel { index: usize, value: f64 },

    #[error("window {window} is too long for a series of length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("subsample {0} contains no observations")]
    EmptySubsample(String),

    #[error("{0}")]
    Invalid(String),
}

fn fmt_lines(lines: &[usize]) -> String {
    let shown: Vec<String> = lines.iter().take(10).map(|l| l.to_string()).collect();
    let more = if lines.len() > 10 {
        format!(" and {} more", lines.len() - 10)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(", "))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Quarterly,
    Generic,
}

/// A point of the time index. Dates order before integers, which never mix
/// within one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeKey {
    Date(NaiveDate),
    Int(i64),
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKey::Date(d) => write!(f, "{d}"),
            TimeKey::Int(i) => write!(f, "{i}"),
        }
    }
}

impl Serialize for TimeKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn quarter_start(year: i32, q: u32) -> Option<NaiveDate> {
    if (1..=4).contains(&q) {
        NaiveDate::from_ymd_opt(year, 3 * q - 2, 1)
    } else {
        None
    }
}

fn roman_quarter(s: &str) -> Option<u32> {
    match s {
        "I" => Some(1),
        "II" => Some(2),
        "III" => Some(3),
        "IV" => Some(4),
        _ => None,
    }
}

impl FromStr for TimeKey {
    type Err = String;

    /// Accepts `YYYY-MM-DD`, `YYYY-MM`, quarters written `1981Q1`, `1981:Q1`,
    /// `1981-Q1`, `1981 Q1` or `1981:I`, and plain integers.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(TimeKey::Date(d));
        }
        if let Ok(d) = NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d") {
            return Ok(TimeKey::Date(d));
        }
        let upper = s.to_ascii_uppercase();
        if upper.len() > 4 && upper.is_char_boundary(4) {
            let (year, rest) = upper.split_at(4);
            if let Ok(year) = year.parse::<i32>() {
                let rest = rest.trim_start_matches([':', '-', ' ']);
                let q = match rest.strip_prefix('Q') {
                    Some(d) => d.parse::<u32>().ok(),
                    None => roman_quarter(rest),
                };
                if let Some(d) = q.and_then(|q| quarter_start(year, q)) {
                    return Ok(TimeKey::Date(d));
                }
            }
        }
        if let Ok(i) = s.parse::<i64>() {
            return Ok(TimeKey::Int(i));
        }
        Err(format!("unrecognized time value {s:?}"))
    }
}

/// Where to find the time column and which columns must be complete.
#[derive(Clone, Debug, Default)]
pub struct SchemaHints {
    /// Defaults to the first column.
    pub time_column: Option<String>,
    /// Columns that may not contain missing values; defaults to all.
    pub required: Option<Vec<String>>,
    /// Inferred from the dates when absent.
    pub frequency: Option<Frequency>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub index: Vec<TimeKey>,
    pub names: Vec<String>,
    /// Column-major values; `NaN` marks a missing entry in a column that was
    /// not required.
    pub columns: Vec<Vec<f64>>,
    pub frequency: Frequency,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "." | "NA" | "NaN" | "nan" | "#N/A")
}

fn infer_frequency(index: &[TimeKey]) -> Frequency {
    let months: Option<Vec<i32>> = index
        .iter()
        .map(|k| match k {
            TimeKey::Date(d) if d.day() == 1 => Some(d.year() * 12 + d.month0() as i32),
            _ => None,
        })
        .collect();
    let Some(m) = months else {
        return Frequency::Generic;
    };
    if m.len() < 2 {
        return Frequency::Generic;
    }
    if m.windows(2).all(|w| w[1] - w[0] == 1) {
        Frequency::Monthly
    } else if m.windows(2).all(|w| w[1] - w[0] == 3) {
        Frequency::Quarterly
    } else {
        Frequency::Generic
    }
}

/// Reads a CSV with a header row and one time column.
pub fn ingest_csv(path: &Path, hints: &SchemaHints) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_dataset(file, hints)
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    hints: &SchemaHints,
) -> Result<Dataset, DataError> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(DataError::Parse {
            line: 1,
            message: "need a time column and at least one series".into(),
        });
    }
    let time_col = match &hints.time_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.clone()))?,
        None => 0,
    };
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != time_col)
        .map(|(_, h)| h.clone())
        .collect();
    let required: Vec<bool> = match &hints.required {
        Some(req) => {
            for r in req {
                if !names.contains(r) {
                    return Err(DataError::UnknownColumn(r.clone()));
                }
            }
            names.iter().map(|n| req.contains(n)).collect()
        }
        None => vec![true; names.len()],
    };
    let mut index = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    let mut missing: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for (row, rec) in rd.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let key: TimeKey = rec[time_col]
            .parse()
            .map_err(|message| DataError::Parse { line, message })?;
        if let Some(prev) = index.last() {
            if key <= *prev {
                return Err(DataError::NonMonotoneTime { line });
            }
        }
        index.push(key);
        let mut j = 0;
        for (i, field) in rec.iter().enumerate() {
            if i == time_col {
                continue;
            }
            let v = if is_missing(field) {
                missing[j].push(line);
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| DataError::Parse {
                    line,
                    message: format!("column {:?}: {field:?} is not a number", names[j]),
                })?
            };
            columns[j].push(v);
            j += 1;
        }
    }
    for (j, lines) in missing.into_iter().enumerate() {
        if required[j] && !lines.is_empty() {
            return Err(DataError::Missing {
                column: names[j].clone(),
                lines,
            });
        }
    }
    let frequency = hints.frequency.unwrap_or_else(|| infer_frequency(&index));
    Ok(Dataset {
        index,
        names,
        columns,
        frequency,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    /// Rows whose time key lies in `[start, end]` (either bound optional).
    pub fn subsample(
        &self,
        start: Option<TimeKey>,
        end: Option<TimeKey>,
    ) -> Result<Dataset, DataError> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                start.is_none_or(|s| self.index[i] >= s) && end.is_none_or(|e| self.index[i] <= e)
            })
            .collect();
        if keep.is_empty() {
            let fmt = |k: Option<TimeKey>| k.map(|k| k.to_string()).unwrap_or_else(|| "..".into());
            return Err(DataError::EmptySubsample(format!(
                "{}–{}",
                fmt(start),
                fmt(end)
            )));
        }
        Ok(Dataset {
            index: keep.iter().map(|&i| self.index[i]).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| keep.iter().map(|&i| c[i]).collect())
                .collect(),
            frequency: self.frequency,
        })
    }
}

/// 100·Δlog x; one element shorter than the input.
pub fn growth_rate(series: &[f64]) -> Result<Vec<f64>, DataError> {
    if let Some((index, &value)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(DataError::NonPositiveLevel { index, value });
    }
    Ok(series
        .windows(2)
        .map(|w| 100.0 * (w[1].ln() - w[0].ln()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OilTransform {
    /// The percentage change itself.
    O,
    /// Positive changes only.
    OPlus,
    /// Excess of the log level over its running maximum of the previous
    /// `window` periods, floored at zero.
    ONet,
}

impl FromStr for OilTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "o" => Ok(OilTransform::O),
            "o_plus" | "o-plus" | "oplus" => Ok(OilTransform::OPlus),
            "o_net" | "o-net" | "onet" => Ok(OilTransform::ONet),
            other => Err(format!(
                "unknown oil transform {other:?} (o, o_plus, o_net)"
            )),
        }
    }
}

/// Applies `kind` to a change series (`O`, `OPlus`) or to log levels (`ONet`).
///
/// `ONet` output starts at position `window` of the input.
pub fn oil_transform(
    series: &[f64],
    kind: OilTransform,
    window: usize,
) -> Result<Vec<f64>, DataError> {
    match kind {
        OilTransform::O => Ok(series.to_vec()),
        OilTransform::OPlus => Ok(series
            .iter()
            .map(|&o| if o > 0.0 { o } else { 0.0 })
            .collect()),
        OilTransform::ONet => {
            if window == 0 || window >= series.len() {
                return Err(DataError::WindowTooLong {
                    window,
                    len: series.len(),
                });
            }
            Ok((window..series.len())
                .map(|t| {
                    let peak = series[t - window..t]
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    (series[t] - peak).max(0.0)
                })
                .collect())
        }
    }
}
