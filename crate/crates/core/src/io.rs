//! CSV and JSON persistence.
//!
//! Floats are written with 17 significant digits so every file re-loads to
//! the identical bit pattern. Missing values (degenerate surface cells) are
//! empty fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::campaign::{CampaignResult, CellSummary};
use crate::direct::Grid3;
use crate::error::{Error, Result};
use crate::measurement::{DataTrace, TracePoint};
use crate::spectral::LikelihoodSurface;

pub const TRACE_HEADER: [&str; 3] = ["t", "successes", "shots"];
pub const SURFACE_HEADER: [&str; 3] = ["omega", "delta_omega", "loglik"];
pub const GRID_HEADER: [&str; 4] = ["omega_cap", "alpha", "epsilon", "loglik"];
pub const PERIODOGRAM_HEADER: [&str; 2] = ["frequency", "power"];
pub const CAMPAIGN_HEADER: [&str; 12] = [
    "nt",
    "ne",
    "runs",
    "failures",
    "unphysical",
    "std_omega",
    "std_delta_omega",
    "std_a0",
    "std_a1",
    "std_a2",
    "std_a3",
    "median_relative_error",
];
pub const HISTOGRAM_HEADER: [&str; 4] = ["kind", "lower", "upper", "count"];

/// JSON has no infinity; non-finite values are written as `null` and read
/// back as `+∞`.
pub(crate) mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_rows<W: Write>(out: W, path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Data rows of a CSV table with the given header, paired with their line numbers.
fn read_rows<R: Read>(input: R, path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = r.records();
    let expected = header.join(",");
    let first = match records.next() {
        None => return Err(parse_err(1, format!("empty file, expected header `{expected}`"))),
        Some(rec) => rec.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if first.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{expected}`, found `{}`", first.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec.iter().map(|f| f.trim().to_string()).collect()));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad `{name}` value `{s}`: {e}"),
    })
}

fn opt_field(path: &Path, line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        field(path, line, name, s).map(Some)
    }
}

pub fn write_trace<W: Write>(trace: &DataTrace, out: W, path: &Path) -> Result<()> {
    let rows = trace
        .points()
        .iter()
        .map(|p| vec![fmt_f64(p.time()), p.successes.to_string(), p.shots.to_string()]);
    write_rows(out, path, &TRACE_HEADER, rows)
}

pub fn read_trace<R: Read>(input: R, path: &Path) -> Result<DataTrace> {
    let mut points = Vec::new();
    for (line, row) in read_rows(input, path, &TRACE_HEADER)? {
        let t: f64 = field(path, line, "t", &row[0])?;
        let successes: u64 = field(path, line, "successes", &row[1])?;
        let shots: u64 = field(path, line, "shots", &row[2])?;
        if !t.is_finite() || t < 0.0 || shots == 0 || successes > shots {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("invalid point t={t}, successes={successes}, shots={shots}"),
            });
        }
        points.push(TracePoint::new(t, successes, shots));
    }
    DataTrace::from_points(points)
}

pub fn save_trace(trace: &DataTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_trace(trace, create(path)?, path)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<DataTrace> {
    let path = path.as_ref();
    read_trace(open(path)?, path)
}

pub fn save_surface(surface: &LikelihoodSurface, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = surface.cells().map(|(w, d, v)| vec![fmt_f64(w), fmt_f64(d), fmt_opt(v)]);
    write_rows(create(path)?, path, &SURFACE_HEADER, rows)
}

/// First-appearance order of the distinct values in `xs`.
fn distinct(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for x in xs {
        if !out.iter().any(|y| y.to_bits() == x.to_bits()) {
            out.push(x);
        }
    }
    out
}

fn layout_error(path: &Path, what: &str) -> Error {
    Error::Parse { path: path.to_path_buf(), line: 0, message: format!("{what} is not a full row-major grid") }
}

pub fn load_surface(path: impl AsRef<Path>) -> Result<LikelihoodSurface> {
    let path = path.as_ref();
    let mut cells = Vec::new();
    for (line, row) in read_rows(open(path)?, path, &SURFACE_HEADER)? {
        cells.push((
            field::<f64>(path, line, "omega", &row[0])?,
            field::<f64>(path, line, "delta_omega", &row[1])?,
            opt_field(path, line, "loglik", &row[2])?,
        ));
    }
    let omega = distinct(cells.iter().map(|c| c.0));
    let delta_omega = distinct(cells.iter().map(|c| c.1));
    let s = LikelihoodSurface { omega, delta_omega, values: cells.iter().map(|c| c.2).collect() };
    let consistent = s.omega.len() * s.delta_omega.len() == cells.len()
        && s.cells().zip(&cells).all(|(a, b)| a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits());
    if !consistent {
        return Err(layout_error(path, "surface"));
    }
    Ok(s)
}

pub fn save_grid3(grid: &Grid3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (na, ne) = (grid.alpha.len(), grid.epsilon.len());
    let rows = grid.values.iter().enumerate().map(|(k, v)| {
        vec![
            fmt_f64(grid.omega_cap[k / (na * ne)]),
            fmt_f64(grid.alpha[(k / ne) % na]),
            fmt_f64(grid.epsilon[k % ne]),
            fmt_f64(*v),
        ]
    });
    write_rows(create(path)?, path, &GRID_HEADER, rows)
}

pub fn load_grid3(path: impl AsRef<Path>) -> Result<Grid3> {
    let path = path.as_ref();
    let mut cells = Vec::new();
    for (line, row) in read_rows(open(path)?, path, &GRID_HEADER)? {
        let mut c = [0.0; 4];
        for (k, name) in GRID_HEADER.iter().enumerate() {
            c[k] = field(path, line, name, &row[k])?;
        }
        cells.push(c);
    }
    let grid = Grid3 {
        omega_cap: distinct(cells.iter().map(|c| c[0])),
        alpha: distinct(cells.iter().map(|c| c[1])),
        epsilon: distinct(cells.iter().map(|c| c[2])),
        values: cells.iter().map(|c| c[3]).collect(),
    };
    let (na, ne) = (grid.alpha.len(), grid.epsilon.len());
    let consistent = grid.omega_cap.len() * na * ne == cells.len()
        && cells.iter().enumerate().all(|(k, c)| {
            c[0].to_bits() == grid.omega_cap[k / (na * ne)].to_bits()
                && c[1].to_bits() == grid.alpha[(k / ne) % na].to_bits()
                && c[2].to_bits() == grid.epsilon[k % ne].to_bits()
        });
    if !consistent {
        return Err(layout_error(path, "grid"));
    }
    Ok(grid)
}

pub fn save_periodogram(freqs: &[f64], power: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = freqs.iter().zip(power).map(|(f, p)| vec![fmt_f64(*f), fmt_f64(*p)]);
    write_rows(create(path)?, path, &PERIODOGRAM_HEADER, rows)
}

pub fn load_periodogram(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let path = path.as_ref();
    let mut out = (Vec::new(), Vec::new());
    for (line, row) in read_rows(open(path)?, path, &PERIODOGRAM_HEADER)? {
        out.0.push(field(path, line, "frequency", &row[0])?);
        out.1.push(field(path, line, "power", &row[1])?);
    }
    Ok(out)
}

/// One row per `(Nt, Ne)` cell.
pub fn save_campaign_cells(cells: &[CellSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = cells.iter().map(|c| {
        let mut row = vec![
            c.nt.to_string(),
            c.ne.to_string(),
            c.runs.to_string(),
            c.failures.to_string(),
            c.unphysical.to_string(),
            fmt_f64(c.std_omega),
            fmt_f64(c.std_delta_omega),
        ];
        row.extend(c.std_amplitudes.iter().map(|a| fmt_f64(*a)));
        row.push(fmt_f64(c.median_relative_error));
        row
    });
    write_rows(create(path)?, path, &CAMPAIGN_HEADER, rows)
}

pub fn load_campaign_cells(path: impl AsRef<Path>) -> Result<Vec<CellSummary>> {
    let path = path.as_ref();
    let mut cells = Vec::new();
    for (line, r) in read_rows(open(path)?, path, &CAMPAIGN_HEADER)? {
        let f = |k: usize| field::<f64>(path, line, CAMPAIGN_HEADER[k], &r[k]);
        cells.push(CellSummary {
            nt: field(path, line, "nt", &r[0])?,
            ne: field(path, line, "ne", &r[1])?,
            runs: field(path, line, "runs", &r[2])?,
            failures: field(path, line, "failures", &r[3])?,
            unphysical: field(path, line, "unphysical", &r[4])?,
            std_omega: f(5)?,
            std_delta_omega: f(6)?,
            std_amplitudes: [f(7)?, f(8)?, f(9)?, f(10)?],
            median_relative_error: f(11)?,
        });
    }
    Ok(cells)
}

/// Relative-error histogram over the whole campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistogram {
    /// `log10` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub unphysical: usize,
    pub failed: usize,
}

impl ErrorHistogram {
    /// `bins` equal bins in `log10(error)` spanning the observed errors.
    pub fn from_result(result: &CampaignResult, bins: usize) -> Self {
        let logs: Vec<f64> = result
            .runs
            .iter()
            .filter_map(|r| r.relative_error)
            .filter(|e| *e > 0.0)
            .map(f64::log10)
            .collect();
        let bins = bins.max(1);
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if logs.is_empty() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for l in logs {
            counts[(((l - lo) / width) as usize).min(bins - 1)] += 1;
        }
        ErrorHistogram {
            edges,
            counts,
            unphysical: result.runs.iter().filter(|r| r.failure.is_none() && !r.physical).count(),
            failed: result.runs.iter().filter(|r| r.failure.is_some()).count(),
        }
    }
}

/// Rows `physical,lo,hi,n` per bin, then `unphysical,,,n` and `failed,,,n`.
pub fn save_histogram(h: &ErrorHistogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bins = h.counts.iter().enumerate().map(|(k, c)| {
        vec!["physical".into(), fmt_f64(h.edges[k]), fmt_f64(h.edges[k + 1]), c.to_string()]
    });
    let tail = [("unphysical", h.unphysical), ("failed", h.failed)]
        .into_iter()
        .map(|(k, n)| vec![k.to_string(), String::new(), String::new(), n.to_string()]);
    write_rows(create(path)?, path, &HISTOGRAM_HEADER, bins.chain(tail))
}

pub fn load_histogram(path: impl AsRef<Path>) -> Result<ErrorHistogram> {
    let path = path.as_ref();
    let mut h = ErrorHistogram { edges: Vec::new(), counts: Vec::new(), unphysical: 0, failed: 0 };
    for (line, r) in read_rows(open(path)?, path, &HISTOGRAM_HEADER)? {
        let n: usize = field(path, line, "count", &r[3])?;
        match r[0].as_str() {
            "physical" => {
                let lo: f64 = field(path, line, "lower", &r[1])?;
                if h.edges.is_empty() {
                    h.edges.push(lo);
                }
                h.edges.push(field(path, line, "upper", &r[2])?);
                h.counts.push(n);
            }
            "unphysical" => h.unphysical = n,
            "failed" => h.failed = n,
            other => {
                return Err(Error::Parse { path: path.to_path_buf(), line, message: format!("unknown kind `{other}`") })
            }
        }
    }
    Ok(h)
}

pub fn save_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_reader(open(path)?).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

/// Writes the cell table, raw runs, error histogram and config of a campaign
/// into `dir`, returning the paths written.
pub fn save_campaign(result: &CampaignResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let paths: Vec<PathBuf> = ["campaign.csv", "runs.json", "histogram.csv", "config.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    save_campaign_cells(&result.cells, &paths[0])?;
    save_json(&result.runs, &paths[1])?;
    save_histogram(&ErrorHistogram::from_result(result, 40), &paths[2])?;
    // where the files went is not part of the experiment
    let config = crate::campaign::CampaignConfig { out: None, ..result.config.clone() };
    save_json(&config, &paths[3])?;
    Ok(paths)
}
