//! CSV ingestion of price levels or returns.

use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputKind {
    /// Price levels; converted to natural-log differences.
    Levels,
    #[default]
    Returns,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub kind: InputKind,
    /// Multiplies every return after the log transform.
    pub scale: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { kind: InputKind::Returns, scale: 1.0 }
    }
}

/// Return series ready for filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsTable {
    pub columns: Vec<String>,
    pub times: Option<Vec<String>>,
    pub values: Vec<DVector<f64>>,
}

impl ReturnsTable {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<ReturnsTable> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(file, path, opts)
}

/// Parse CSV text. `path` is only used in error messages.
pub fn parse_csv<R: Read>(reader: R, path: &Path, opts: &LoadOptions) -> Result<ReturnsTable> {
    if !(opts.scale > 0.0 && opts.scale.is_finite()) {
        return Err(CliError::config(format!("scale {} must be positive and finite", opts.scale)));
    }
    let path_buf = PathBuf::from(path);
    let parse_err = |line: u64, msg: String| CliError::Parse { path: path_buf.clone(), line, msg };

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();

    let mut times = Vec::new();
    let mut raw: Vec<DVector<f64>> = Vec::new();
    let mut lines: Vec<u64> = Vec::new();
    let mut has_date: Option<bool> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let date = *has_date.get_or_insert_with(|| record.get(0).is_some_and(|f| f.parse::<f64>().is_err()));
        let fields: Vec<&str> = record.iter().collect();
        let numeric = if date { &fields[1..] } else { &fields[..] };
        if numeric.is_empty() {
            return Err(parse_err(line, "no numeric columns".into()));
        }
        let mut row = Vec::with_capacity(numeric.len());
        for (j, field) in numeric.iter().enumerate() {
            if field.is_empty() {
                return Err(parse_err(line, format!("missing value in column {}", j + 1 + date as usize)));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("'{field}' is not finite")));
            }
            row.push(v);
        }
        if date {
            times.push(fields[0].to_owned());
        }
        raw.push(DVector::from_vec(row));
        lines.push(line);
    }
    let date = has_date.unwrap_or(false);
    let columns: Vec<String> = header[date as usize..].to_vec();

    let (values, times) = match opts.kind {
        InputKind::Returns => (raw, times),
        InputKind::Levels => {
            for (row, &line) in raw.iter().zip(&lines) {
                if let Some(j) = row.iter().position(|&x| x <= 0.0) {
                    return Err(CliError::NonPositivePrice {
                        path: path_buf.clone(),
                        line,
                        column: columns[j].clone(),
                        value: row[j],
                    });
                }
            }
            let returns = raw.windows(2).map(|w| w[1].map(f64::ln) - w[0].map(f64::ln)).collect();
            (returns, times.into_iter().skip(1).collect())
        }
    };
    let values: Vec<DVector<f64>> = values.into_iter().map(|v| v * opts.scale).collect();
    if values.len() < 2 {
        return Err(CliError::config(format!(
            "{}: need at least 2 return rows, got {}",
            path.display(),
            values.len()
        )));
    }
    Ok(ReturnsTable { columns, times: date.then_some(times), values })
}
