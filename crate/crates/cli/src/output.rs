//! Flat-file outputs. Every float is written with 17 significant digits,
//! which round-trips `f64` exactly.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use giwvol::matstat::vech;
use giwvol::search::TraceEntry;
use giwvol::{StepRecord, SymPosDefMatrix};

use crate::error::{CliError, Result};

pub const VOLATILITY_FILE: &str = "volatility.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "search_trace.csv";
pub const RETURNS_FILE: &str = "returns.csv";
pub const TRUTH_FILE: &str = "truth.csv";

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // CSV only; JSON writes non-finite values as null
        format!("{x}")
    }
}

/// Pretty JSON with floats in 17-significant-digit exponent form.
struct SigDigits(PrettyFormatter<'static>);

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory JSON serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::io(path, io::Error::other(format!("{other:?}"))),
    }
}

/// Row-major lower-triangle labels `prefix_i_j`, 1-based.
pub fn vech_labels(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).flat_map(|i| (1..=i).map(move |j| format!("{prefix}_{i}_{j}"))).collect()
}

fn indexed_labels(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("{prefix}_{j}")).collect()
}

/// Correlation matrix in vech order; the diagonal is exactly one.
pub fn correlations(s: &SymPosDefMatrix) -> Vec<f64> {
    let p = s.dim();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in 0..=i {
            out.push(if i == j {
                1.0
            } else {
                (s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt()).clamp(-1.0, 1.0)
            });
        }
    }
    out
}

struct Sink {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl Sink {
    fn create(path: &Path) -> Result<Self> {
        Ok(Sink { path: path.to_path_buf(), w: csv_writer(path)? })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.w.write_record(&fields).map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn time_columns(t: usize, times: Option<&[String]>) -> Vec<String> {
    let mut v = vec![t.to_string()];
    if let Some(times) = times {
        v.push(times[t - 1].clone());
    }
    v
}

fn header(times: Option<&[String]>) -> Vec<String> {
    let mut v = vec!["t".to_owned()];
    if times.is_some() {
        v.push("date".to_owned());
    }
    v
}

/// `S_t*` (vech, row-major lower triangle) and the implied correlations.
pub fn write_volatility(path: &Path, records: &[StepRecord], times: Option<&[String]>) -> Result<()> {
    let p = records.first().map_or(0, |r| r.e.len());
    let mut sink = Sink::create(path)?;
    sink.row(header(times).into_iter().chain(vech_labels("s", p)).chain(vech_labels("rho", p)))?;
    for r in records {
        let vals = vech(r.s_star.as_matrix()).into_iter().chain(correlations(&r.s_star)).map(fmt_f64);
        sink.row(time_columns(r.t, times).into_iter().chain(vals))?;
    }
    sink.finish()
}

/// One-step forecast mean `f_t`, error `e_t`, standardized error `u_t` and
/// the step's log-likelihood contribution.
pub fn write_forecast(path: &Path, records: &[StepRecord], times: Option<&[String]>) -> Result<()> {
    let p = records.first().map_or(0, |r| r.e.len());
    let mut sink = Sink::create(path)?;
    sink.row(
        header(times)
            .into_iter()
            .chain(indexed_labels("f", p))
            .chain(indexed_labels("e", p))
            .chain(indexed_labels("u", p))
            .chain(["loglik".to_owned()]),
    )?;
    for r in records {
        let vals = r
            .forecast
            .location
            .iter()
            .chain(r.e.iter())
            .chain(r.u.iter())
            .chain(std::iter::once(&r.loglik))
            .map(|&x| fmt_f64(x));
        sink.row(time_columns(r.t, times).into_iter().chain(vals))?;
    }
    sink.finish()
}

pub fn write_series(path: &Path, columns: &[String], rows: &[DVector<f64>]) -> Result<()> {
    let mut sink = Sink::create(path)?;
    sink.row(columns.iter().cloned())?;
    for r in rows {
        sink.row(r.iter().map(|&x| fmt_f64(x)))?;
    }
    sink.finish()
}

/// Simulated `Σ_t` (vech) for `t = 0 … N` and `θ_t` for `t = 1 … N` (empty at `t = 0`).
pub fn write_truth(path: &Path, sigmas: &[SymPosDefMatrix], thetas: &[DVector<f64>]) -> Result<()> {
    let p = sigmas.first().map_or(0, |s| s.dim());
    let mut sink = Sink::create(path)?;
    sink.row(["t".to_owned()].into_iter().chain(vech_labels("sigma", p)).chain(indexed_labels("theta", p)))?;
    for (t, s) in sigmas.iter().enumerate() {
        let theta: Vec<String> = match t {
            0 => vec![String::new(); p],
            _ => thetas[t - 1].iter().map(|&x| fmt_f64(x)).collect(),
        };
        sink.row([t.to_string()].into_iter().chain(vech(s.as_matrix()).into_iter().map(fmt_f64)).chain(theta))?;
    }
    sink.finish()
}

pub fn write_trace(path: &Path, trace: &[TraceEntry], p: usize) -> Result<()> {
    let mut sink = Sink::create(path)?;
    sink.row(
        ["delta", "sweep", "coordinate"]
            .map(str::to_owned)
            .into_iter()
            .chain(indexed_labels("z", p))
            .chain(["objective", "accepted", "error"].map(str::to_owned)),
    )?;
    for e in trace {
        let head = [
            fmt_f64(e.delta),
            e.sweep.to_string(),
            e.coordinate.map_or(String::new(), |c| (c + 1).to_string()),
        ];
        let tail = [fmt_f64(e.objective), e.accepted.to_string(), e.error.clone().unwrap_or_default()];
        sink.row(head.into_iter().chain(e.z.iter().map(|&z| fmt_f64(z))).chain(tail))?;
    }
    sink.finish()
}

/// Forecast and standardized errors read back from a `forecast.csv`.
pub struct ForecastErrors {
    pub e: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

pub fn read_forecast(path: &Path) -> Result<ForecastErrors> {
    let parse_err = |line: u64, msg: String| CliError::Parse { path: path.to_path_buf(), line, msg };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let head: Vec<String> = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.iter().map(str::to_owned).collect();
    let find = |prefix: &str| -> Vec<usize> {
        let mut idx = Vec::new();
        while let Some(pos) = head.iter().position(|h| *h == format!("{prefix}_{}", idx.len() + 1)) {
            idx.push(pos);
        }
        idx
    };
    let (ei, ui) = (find("e"), find("u"));
    if ei.is_empty() || ei.len() != ui.len() {
        return Err(parse_err(1, "expected matching e_1..e_p and u_1..u_p columns".into()));
    }
    let mut out = ForecastErrors { e: Vec::new(), u: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let pick = |cols: &[usize]| -> Result<DVector<f64>> {
            let vals: std::result::Result<Vec<f64>, _> = cols.iter().map(|&c| rec[c].parse::<f64>()).collect();
            vals.map(DVector::from_vec).map_err(|e| parse_err(line, e.to_string()))
        };
        out.e.push(pick(&ei)?);
        out.u.push(pick(&ui)?);
    }
    if out.e.is_empty() {
        return Err(parse_err(2, "no forecast rows".into()));
    }
    Ok(out)
}
