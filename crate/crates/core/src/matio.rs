//! Matrix file formats.
//!
//! Two interchangeable encodings:
//! - `ELF1` binary: 4-byte magic `ELF1`, then rows and cols as little-endian
//!   u64, then the row-major entries as little-endian f64.
//! - CSV text: a header line `rows,cols` carrying the two counts, then one
//!   matrix row per line. Values are written with Rust's shortest
//!   round-trip float formatting, so a write/read cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const ELF1_MAGIC: &[u8; 4] = b"ELF1";

/// Serialize in the ELF1 binary format.
pub fn write_elf1(m: &DenseMatrix, w: &mut impl Write) -> Result<()> {
    w.write_all(ELF1_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Deserialize from the ELF1 binary format.
pub fn read_elf1(r: &mut impl Read) -> Result<DenseMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ELF1_MAGIC {
        return Err(Error::Format {
            reason: format!("bad magic {magic:?}, expected \"ELF1\""),
        });
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let rows = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8)?;
    let cols = u64::from_le_bytes(buf8) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            reason: format!("degenerate shape {rows}x{cols}"),
        });
    }
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        reason: "shape overflow".into(),
    })?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf8)?;
        data.push(f64::from_le_bytes(buf8));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Serialize as CSV text.
pub fn write_csv(m: &DenseMatrix, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{},{}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let line = m
            .row(r)
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Deserialize from CSV text.
pub fn read_csv(r: &mut impl Read) -> Result<DenseMatrix> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format {
        reason: "empty csv".into(),
    })?;
    let mut dims = header.split(',');
    let rows: usize = parse_count(dims.next(), "rows")?;
    let cols: usize = parse_count(dims.next(), "cols")?;
    if dims.next().is_some() {
        return Err(Error::Format {
            reason: "header must be `rows,cols`".into(),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        if i >= rows {
            return Err(Error::Format {
                reason: format!("more than {rows} data rows"),
            });
        }
        let mut n = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                reason: format!("bad number `{field}` on row {i}"),
            })?;
            data.push(v);
            n += 1;
        }
        if n != cols {
            return Err(Error::Format {
                reason: format!("row {i} has {n} fields, expected {cols}"),
            });
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Format {
            reason: format!(
                "expected {rows} data rows, got {}",
                data.len() / cols.max(1)
            ),
        });
    }
    DenseMatrix::from_vec(rows, cols, data)
}

fn parse_count(field: Option<&str>, name: &str) -> Result<usize> {
    field
        .and_then(|f| f.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Format {
            reason: format!("bad {name} in csv header"),
        })
}

/// Write to a path, choosing CSV for a `.csv` extension and ELF1 otherwise.
pub fn save_matrix(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    if is_csv(path) {
        write_csv(m, &mut f)
    } else {
        write_elf1(m, &mut f)
    }
}

/// Read from a path, choosing the format by extension as in `save_matrix`.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut f = std::fs::File::open(path)?;
    if is_csv(path) {
        read_csv(&mut f)
    } else {
        read_elf1(&mut f)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}
