//! Matrix and vector files.
//!
//! Paths ending in `.bin` use the binary layout: an 8-byte magic (`MIDBFMR1`
//! for real, `MIDBFMC1` for complex data), `u32` rows, `u32` cols, then the
//! entries in row-major order as little-endian `f64` (complex entries as
//! `re, im` pairs). Anything else is CSV without a header: one matrix row per
//! line, complex vectors as `re,im` lines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use midbf_core::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

const REAL_MAGIC: &[u8; 8] = b"MIDBFMR1";
const COMPLEX_MAGIC: &[u8; 8] = b"MIDBFMC1";

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], rows: usize, cols: usize) -> Result<()> {
    let dim = |x: usize| u32::try_from(x).map_err(|_| Error::Format(format!("dimension {x} exceeds u32")));
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(dim(rows)?)?;
    w.write_u32::<LittleEndian>(dim(cols)?)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<([u8; 8], usize, usize)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != REAL_MAGIC && &magic != COMPLEX_MAGIC {
        return Err(Error::Format("unknown binary matrix magic".into()));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    Ok((magic, rows, cols))
}

fn parse(field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad number {field:?}: {e}")))
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(parse).collect::<Result<Vec<f64>>>()?);
    }
    Ok(rows)
}

/// Write a real matrix.
pub fn write_real_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if is_binary(path) {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, REAL_MAGIC, m.nrows(), m.ncols())?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_f64::<LittleEndian>(m[(i, j)])?;
            }
        }
        w.flush()?;
    } else {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        for i in 0..m.nrows() {
            w.write_record(m.row(i).iter().map(|x| format!("{x:e}"))).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read a real matrix.
pub fn read_real_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if is_binary(path) {
        let mut r = BufReader::new(File::open(path)?);
        let (magic, rows, cols) = read_header(&mut r)?;
        if &magic != REAL_MAGIC {
            return Err(Error::Format("expected a real matrix".into()));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = r.read_f64::<LittleEndian>()?;
            }
        }
        return Ok(m);
    }
    let rows = csv_rows(path)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("rows of unequal length".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Write a complex vector (`n × 1`).
pub fn write_complex_vector(path: &Path, v: &[Complex64]) -> Result<()> {
    if is_binary(path) {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, COMPLEX_MAGIC, v.len(), 1)?;
        for z in v {
            w.write_f64::<LittleEndian>(z.re)?;
            w.write_f64::<LittleEndian>(z.im)?;
        }
        w.flush()?;
    } else {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        for z in v {
            w.write_record([format!("{:e}", z.re), format!("{:e}", z.im)]).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read a complex vector. CSV lines hold `re` or `re,im`; binary files may be
/// real or complex with a single column.
pub fn read_complex_vector(path: &Path) -> Result<Vec<Complex64>> {
    if is_binary(path) {
        let mut r = BufReader::new(File::open(path)?);
        let (magic, rows, cols) = read_header(&mut r)?;
        if cols != 1 {
            return Err(Error::Format(format!("expected one column, found {cols}")));
        }
        return (0..rows)
            .map(|_| {
                let re = r.read_f64::<LittleEndian>()?;
                let im = if &magic == COMPLEX_MAGIC { r.read_f64::<LittleEndian>()? } else { 0.0 };
                Ok(Complex64::new(re, im))
            })
            .collect();
    }
    csv_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| match row.as_slice() {
            [re] => Ok(Complex64::new(*re, 0.0)),
            [re, im] => Ok(Complex64::new(*re, *im)),
            _ => Err(Error::Format(format!("line {} has {} fields", i + 1, row.len()))),
        })
        .collect()
}
