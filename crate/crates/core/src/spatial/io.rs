//! CSV formats for locations and ensembles.
//!
//! Locations: header `fidelity,x,y[,z...]`, rows sorted by fidelity.
//! Ensembles: one file per fidelity, header `rep,v1,...,vNr`, replicate ids
//! strictly increasing from 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Ensemble, MultiFidelityLocations};
use crate::error::{Error, Result};

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: path.display().to_string(), line, msg: msg.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_error(path, line, e.to_string())
}

fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

pub fn load_locations(path: impl AsRef<Path>) -> Result<MultiFidelityLocations> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("fidelity") || headers.len() < 2 {
        return Err(parse_error(path, 1, "header must be `fidelity,x[,y...]`"));
    }
    let dim = headers.len() - 1;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut last = 0usize;
    while rdr.read_record(&mut record).map_err(|e| csv_error(path, e))? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != dim + 1 {
            return Err(Error::DimensionMismatch { expected: dim, found: record.len().saturating_sub(1), line });
        }
        let fid: usize = record[0]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad fidelity {:?}", &record[0])))?;
        if fid == 0 {
            return Err(parse_error(path, line, "fidelities are numbered from 1"));
        }
        if fid < last {
            return Err(parse_error(path, line, "rows must be sorted by fidelity"));
        }
        last = fid;
        while coords.len() < fid {
            coords.push(Vec::new());
        }
        for field in record.iter().skip(1) {
            coords[fid - 1].push(parse_finite(path, line, field)?);
        }
    }
    if coords.is_empty() {
        return Err(parse_error(path, 1, "no locations"));
    }
    MultiFidelityLocations::from_flat(dim, coords)
}

/// Loads one ensemble file per fidelity.
pub fn load_ensemble<P: AsRef<Path>>(paths: &[P], locs: &MultiFidelityLocations) -> Result<Ensemble> {
    if paths.len() != locs.num_fidelities() {
        return Err(Error::InvalidArgument(format!(
            "expected {} ensemble files, got {}",
            locs.num_fidelities(),
            paths.len()
        )));
    }
    let mut values = Vec::with_capacity(paths.len());
    let mut counts = Vec::with_capacity(paths.len());
    for (r, p) in paths.iter().enumerate() {
        let (n, v) = load_fidelity(p.as_ref(), r, locs.len(r))?;
        counts.push(n);
        values.push(v);
    }
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InconsistentReplicates(counts));
    }
    Ensemble::new(counts[0], locs.sizes(), values)
}

fn load_fidelity(path: &Path, r: usize, nr: usize) -> Result<(usize, Vec<f64>)> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("rep") {
        return Err(parse_error(path, 1, "header must start with `rep`"));
    }
    if headers.len() - 1 != nr {
        return Err(Error::ColumnCount { fidelity: r + 1, expected: nr, found: headers.len() - 1 });
    }
    let mut values = Vec::new();
    let mut n = 0usize;
    let mut last_rep = 0u64;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(|e| csv_error(path, e))? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() - 1 != nr {
            return Err(Error::ColumnCount { fidelity: r + 1, expected: nr, found: record.len() - 1 });
        }
        let rep: u64 = record[0]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad replicate id {:?}", &record[0])))?;
        if (n == 0 && rep != 1) || (n > 0 && rep <= last_rep) {
            return Err(parse_error(path, line, "replicate ids must increase strictly from 1"));
        }
        last_rep = rep;
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { fidelity: r + 1, row: n + 1, col: c + 1 });
            }
            values.push(v);
        }
        n += 1;
    }
    Ok((n, values))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_locations(path: impl AsRef<Path>, locs: &MultiFidelityLocations) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let axis = ["x", "y", "z"];
    let mut header = String::from("fidelity");
    for d in 0..locs.dim() {
        header.push(',');
        match axis.get(d) {
            Some(a) => header.push_str(a),
            None => header.push_str(&format!("x{}", d + 1)),
        }
    }
    let mut out = header;
    out.push('\n');
    for r in 0..locs.num_fidelities() {
        for i in 0..locs.len(r) {
            out.push_str(&(r + 1).to_string());
            for c in locs.point(r, i) {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes one fidelity (row-major n x N_r) in the ensemble format.
pub fn write_ensemble_fidelity(path: impl AsRef<Path>, n: usize, nr: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut out = String::from("rep");
    for i in 1..=nr {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for j in 0..n {
        out.push_str(&(j + 1).to_string());
        for v in &values[j * nr..(j + 1) * nr] {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes every fidelity of `ens`, one file per path.
pub fn write_ensemble<P: AsRef<Path>>(paths: &[P], ens: &Ensemble) -> Result<()> {
    if paths.len() != ens.num_fidelities() {
        return Err(Error::InvalidArgument("one output path per fidelity is required".into()));
    }
    for (r, p) in paths.iter().enumerate() {
        write_ensemble_fidelity(p, ens.replicates(), ens.sizes()[r], ens.fidelity(r))?;
    }
    Ok(())
}
