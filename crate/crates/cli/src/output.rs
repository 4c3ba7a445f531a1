//! Artifact emission: CSV tables with a fixed header row, and flat binary
//! field snapshots (one-line text header, then little-endian f64 payload,
//! row-major).

use chbc_core::{BulkField, StripGrid, SurfaceField};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Shortest round-trip decimal form; deterministic, so identical runs emit
/// byte-identical tables.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn write_field_payload(
    path: &Path,
    rows: usize,
    cols: usize,
    name: &str,
    time_index: usize,
    values: &[f64],
) -> std::io::Result<()> {
    debug_assert_eq!(values.len(), rows * cols);
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{rows} {cols} {name} {time_index}")?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn write_bulk_field(
    dir: &Path,
    name: &str,
    time_index: usize,
    field: &BulkField,
    grid: &StripGrid,
) -> std::io::Result<()> {
    let path = dir.join(format!("{name}_{time_index:04}.bin"));
    write_field_payload(&path, grid.ny + 1, grid.nx, name, time_index, field.as_slice())
}

pub fn write_surface_field(
    dir: &Path,
    name: &str,
    time_index: usize,
    field: &SurfaceField,
    grid: &StripGrid,
) -> std::io::Result<()> {
    let path = dir.join(format!("{name}_{time_index:04}.bin"));
    write_field_payload(&path, 2, grid.nx, name, time_index, field.as_slice())
}

/// Read one field file back: `(rows, cols, values)`.
pub fn read_field_file(path: &Path) -> std::io::Result<(usize, usize, Vec<f64>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    if toks.len() != 4 {
        return Err(bad("field header wants '<rows> <cols> <name> <time_index>'"));
    }
    let rows: usize = toks[0].parse().map_err(|_| bad("bad row count"))?;
    let cols: usize = toks[1].parse().map_err(|_| bad("bad column count"))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != rows * cols * 8 {
        return Err(bad(&format!(
            "payload is {} bytes, header shape {rows}x{cols} wants {}",
            payload.len(),
            rows * cols * 8
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}
