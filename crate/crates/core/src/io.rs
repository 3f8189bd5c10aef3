//! File formats.
//!
//! * Snapshots: CSV `path_id,index,x,y` (one row per pair) plus a JSON
//!   sidecar with the simulation metadata, named by swapping the extension.
//! * Matrices: CSV with a `n,t_step` header, one line holding those values,
//!   then `n` rows of the matrix; or JSON bundles via serde.
//! * Batch results: CSV `path_id,theta_1..theta_k,objective,converged,failed,iters,wall_time`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotData;
use crate::error::{Error, Result};
use crate::estimator::EstimateResult;
use crate::model::SdeModel;
use crate::sim::{Scheme, SimulatedPaths};

const SNAPSHOT_HEADER: [&str; 4] = ["path_id", "index", "x", "y"];

/// Metadata written next to a snapshot CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub model: SdeModel,
    pub theta: Vec<f64>,
    pub t_step: f64,
    /// Snapshot pairs per path.
    pub n_points: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub internal_dt: f64,
    pub clamp_count: u64,
}

impl SnapshotMeta {
    pub fn from_paths(sim: &SimulatedPaths) -> Self {
        let c = &sim.config;
        Self {
            model: sim.model,
            theta: c.theta.clone(),
            t_step: c.t_step,
            n_points: c.n_points,
            n_paths: c.n_paths,
            seed: c.seed,
            scheme: c.scheme,
            internal_dt: c.internal_dt,
            clamp_count: sim.clamp_count,
        }
    }
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn ingest(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn write_snapshots<W: Write>(out: W, paths: &[SnapshotData]) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", SNAPSHOT_HEADER.join(","))?;
    for (p, data) in paths.iter().enumerate() {
        for (j, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
            writeln!(w, "{p},{j},{x},{y}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the snapshot CSV and its JSON sidecar.
pub fn write_simulation(csv_path: &Path, sim: &SimulatedPaths) -> Result<()> {
    write_snapshots(File::create(csv_path)?, &sim.paths)?;
    write_json(&sidecar_path(csv_path), &SnapshotMeta::from_paths(sim))
}

/// Reads a snapshot CSV, one [`SnapshotData`] per path in file order.
///
/// The time step comes from `t_step` when given, otherwise from the
/// sidecar. Rows of a path must be contiguous with indices `0, 1, …`.
pub fn read_snapshots(csv_path: &Path, t_step: Option<f64>) -> Result<(Vec<SnapshotData>, Option<SnapshotMeta>)> {
    let side = sidecar_path(csv_path);
    let meta: Option<SnapshotMeta> = if side.exists() && side != csv_path {
        Some(read_json(&side)?)
    } else {
        None
    };
    let t_step = match (t_step, &meta) {
        (Some(t), _) => t,
        (None, Some(m)) => m.t_step,
        (None, None) => {
            return Err(ingest(csv_path, 0, "time step unknown: no sidecar metadata and none given"));
        }
    };
    let file = File::open(csv_path).map_err(|e| ingest(csv_path, 0, e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| ingest(csv_path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != SNAPSHOT_HEADER {
        return Err(ingest(
            csv_path,
            1,
            format!("expected header '{}'", SNAPSHOT_HEADER.join(",")),
        ));
    }

    let mut paths: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut current: Option<u64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(csv_path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(ingest(csv_path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let path_id: u64 = rec[0]
            .parse()
            .map_err(|_| ingest(csv_path, line, format!("bad path_id '{}'", &rec[0])))?;
        let index: usize = rec[1]
            .parse()
            .map_err(|_| ingest(csv_path, line, format!("bad index '{}'", &rec[1])))?;
        let x = parse_float(csv_path, line, &rec[2])?;
        let y = parse_float(csv_path, line, &rec[3])?;
        if current != Some(path_id) {
            if paths.len() as u64 != path_id {
                return Err(ingest(
                    csv_path,
                    line,
                    format!("path_id {path_id} out of order (expected {})", paths.len()),
                ));
            }
            paths.push((Vec::new(), Vec::new()));
            current = Some(path_id);
        }
        let (px, py) = paths.last_mut().expect("pushed above");
        if index != px.len() {
            return Err(ingest(csv_path, line, format!("index {index} out of order (expected {})", px.len())));
        }
        px.push(x);
        py.push(y);
    }
    if paths.is_empty() {
        return Err(ingest(csv_path, 1, "no snapshot rows"));
    }
    let data = paths
        .into_iter()
        .map(|(x, y)| SnapshotData::new(x, y, t_step))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, meta))
}

fn parse_float(path: &Path, line: u64, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ingest(path, line, format!("bad number '{s}'"))),
    }
}

pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>, t_step: f64) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "n,t_step")?;
    writeln!(w, "{},{}", m.nrows(), t_step)?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a square matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, f64)> {
    let text = std::fs::read_to_string(path).map_err(|e| ingest(path, 0, e.to_string()))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l.trim()));
    match lines.next() {
        Some((_, "n,t_step")) => {}
        _ => return Err(ingest(path, 1, "expected header 'n,t_step'")),
    }
    let (ln, dims) = lines.next().ok_or_else(|| ingest(path, 2, "missing size line"))?;
    let parts: Vec<&str> = dims.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(ingest(path, ln, "expected 'n,t_step'"));
    }
    let n: usize = parts[0]
        .parse()
        .map_err(|_| ingest(path, ln, format!("bad size '{}'", parts[0])))?;
    let t_step = parse_float(path, ln, parts[1])?;
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n {
            return Err(ingest(path, ln, format!("expected {n} values, found {}", cells.len())));
        }
        for c in cells {
            values.push(parse_float(path, ln, c)?);
        }
        rows += 1;
        if rows > n {
            return Err(ingest(path, ln, format!("more than {n} rows")));
        }
    }
    if rows != n {
        return Err(ingest(path, 2 + rows as u64, format!("expected {n} rows, found {rows}")));
    }
    Ok((DMatrix::from_row_slice(n, n, &values), t_step))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ingest(path, 0, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| ingest(path, e.line() as u64, e.to_string()))
}

/// One row of a batch result file.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path_id: usize,
    pub result: EstimateResult,
}

pub fn write_batch_csv<W: Write>(out: W, rows: &[PathRecord]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.result.theta_hat.len());
    let mut w = BufWriter::new(out);
    let mut header = vec!["path_id".to_string()];
    header.extend((1..=k).map(|j| format!("theta_{j}")));
    header.extend(["objective", "converged", "failed", "iters", "wall_time"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let r = &row.result;
        let mut cells = vec![row.path_id.to_string()];
        cells.extend(r.theta_hat.iter().map(|v| v.to_string()));
        cells.push(r.objective_value.to_string());
        cells.push(r.converged.to_string());
        cells.push(r.failed.to_string());
        cells.push(r.iterations.to_string());
        cells.push(r.wall_time.to_string());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a batch CSV. Gradient norms are not stored and come back as NaN.
pub fn read_batch_csv(path: &Path) -> Result<Vec<PathRecord>> {
    let file = File::open(path).map_err(|e| ingest(path, 0, e.to_string()))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| ingest(path, 1, e.to_string()))?.clone();
    let k = header.len().saturating_sub(6);
    let ok = header.len() >= 7
        && &header[0] == "path_id"
        && (1..=k).all(|j| header[j] == format!("theta_{j}"))
        && header.iter().skip(k + 1).eq(["objective", "converged", "failed", "iters", "wall_time"]);
    if !ok {
        return Err(ingest(path, 1, "unexpected batch header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ingest(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| ingest(path, line, format!("bad {what}"));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad("number"));
        let path_id = rec[0].parse().map_err(|_| bad("path_id"))?;
        let theta_hat = (1..=k).map(num).collect::<Result<Vec<_>>>()?;
        out.push(PathRecord {
            path_id,
            result: EstimateResult {
                theta_hat,
                objective_value: num(k + 1)?,
                converged: rec[k + 2].parse().map_err(|_| bad("converged flag"))?,
                failed: rec[k + 3].parse().map_err(|_| bad("failed flag"))?,
                iterations: rec[k + 4].parse().map_err(|_| bad("iteration count"))?,
                wall_time: num(k + 5)?,
                gradient_norm: f64::NAN,
            },
        });
    }
    Ok(out)
}
