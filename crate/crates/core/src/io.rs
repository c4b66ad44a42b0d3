//! File formats: disturbance samples, gain matrices and plain numeric CSV.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lifting::CausalMask;

const GAIN_MAGIC: &[u8; 8] = b"DRRLQK1\0";

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Column names for stacked trajectories: `x0_1 … x0_nx, w0_1 … w{T-1}_nx`.
pub fn sample_header(nx: usize, horizon: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=nx).map(|i| format!("x0_{i}")).collect();
    for t in 0..horizon {
        cols.extend((1..=nx).map(|i| format!("w{t}_{i}")));
    }
    cols
}

/// Infers `(nx, T)` from a sample header.
pub fn parse_sample_header(cols: &[String]) -> Option<(usize, usize)> {
    let nx = cols.iter().take_while(|c| c.starts_with("x0_")).count();
    if nx == 0 || cols.len() % nx != 0 {
        return None;
    }
    let horizon = cols.len() / nx - 1;
    (sample_header(nx, horizon) == cols).then_some((nx, horizon))
}

/// One trajectory per row.
pub fn write_samples(path: &Path, samples: &[DVector<f64>], nx: usize, horizon: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(sample_header(nx, horizon))?;
    for s in samples {
        if s.len() != nx * (horizon + 1) {
            return Err(Error::dim("sample length", nx * (horizon + 1), s.len()));
        }
        w.write_record(s.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads trajectories and the `(nx, T)` encoded in the header.
pub fn read_samples(path: &Path) -> Result<(Vec<DVector<f64>>, usize, usize)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let (nx, horizon) = parse_sample_header(&header)
        .ok_or_else(|| parse_err(path, "header must read x0_1..x0_nx, w0_1..w{T-1}_nx"))?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("row {}: {e}", row + 1)))?;
        if vals.len() != header.len() {
            return Err(parse_err(path, format!("row {}: expected {} values", row + 1, header.len())));
        }
        out.push(DVector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok((out, nx, horizon))
}

/// Free gain entries as `row,col,value` (0-based indices).
pub fn write_gain_csv(path: &Path, k: &DMatrix<f64>, mask: &CausalMask) -> Result<()> {
    mask.check(k)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value"])?;
    for (r, c) in mask.free_indices() {
        w.write_record([r.to_string(), c.to_string(), format!("{:e}", k[(r, c)])])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a gain from `row,col,value` records; unlisted entries are zero and
/// any listed entry outside the causal pattern is an error.
pub fn read_gain_csv(path: &Path, mask: &CausalMask) -> Result<DMatrix<f64>> {
    let (rows, cols) = mask.shape();
    let mut k = DMatrix::zeros(rows, cols);
    let mut outside = Vec::new();
    let mut r = csv::Reader::from_path(path)?;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let bad = |what: &str| parse_err(path, format!("record {}: invalid {what}", line + 1));
        let row: usize = field(0).parse().map_err(|_| bad("row"))?;
        let col: usize = field(1).parse().map_err(|_| bad("col"))?;
        let value: f64 = field(2).parse().map_err(|_| bad("value"))?;
        if row >= rows || col >= cols {
            return Err(parse_err(path, format!("entry ({row}, {col}) outside a {rows}x{cols} gain")));
        }
        if !mask.is_free(row, col) {
            if value != 0.0 {
                outside.push((row, col));
            }
            continue;
        }
        k[(row, col)] = value;
    }
    if !outside.is_empty() {
        let list: Vec<String> = outside.iter().map(|(r, c)| format!("({r}, {c})")).collect();
        return Err(parse_err(path, format!("entries outside the causal pattern: {}", list.join(", "))));
    }
    Ok(k)
}

/// Little-endian binary: 8-byte magic, `u64` rows, `u64` cols, row-major `f64`.
pub fn write_matrix_bin(path: &Path, k: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(GAIN_MAGIC)?;
    put(&(k.nrows() as u64).to_le_bytes())?;
    put(&(k.ncols() as u64).to_le_bytes())?;
    for r in 0..k.nrows() {
        for c in 0..k.ncols() {
            put(&k[(r, c)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_bin(path: &Path) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != GAIN_MAGIC {
        return Err(parse_err(path, "not a gain matrix file"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (word(8), word(16));
    if bytes.len() != 24 + 8 * rows * cols {
        return Err(parse_err(path, format!("truncated {rows}x{cols} matrix")));
    }
    Ok(DMatrix::from_row_iterator(
        rows,
        cols,
        bytes[24..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
    ))
}

/// Headerless numeric CSV, one matrix row per line.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    matrix_from_rows(&rows).map_err(|reason| parse_err(path, reason))
}

/// Long-format `row,col,<name>...` table of equally shaped matrices, 0-based.
pub fn write_matrices_long(path: &Path, columns: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    let (rows, cols) = columns.first().map_or((0, 0), |(_, m)| m.shape());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row", "col"];
    header.extend(columns.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    for r in 0..rows {
        for c in 0..cols {
            let mut rec = vec![r.to_string(), c.to_string()];
            rec.extend(columns.iter().map(|(_, m)| format!("{:e}", m[(r, c)])));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Dense matrix from equally long rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(format!("row {} has {} entries, expected {ncols}", i + 1, row.len()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}
