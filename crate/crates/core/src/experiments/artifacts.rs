//! On-disk output of experiment runs.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

use super::config::FieldFormat;

/// First eight bytes of a binary field dump.
pub const FIELD_MAGIC: [u8; 8] = *b"AAOFIELD";

/// Writes `field` as comma-separated rows, one time level per line.
pub fn write_field_csv(field: &Field, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in field.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// 16-byte header (magic, `nt` and `nx` as little-endian `u32`) followed by
/// the row-major values as little-endian `f64`.
pub fn write_field_binary(field: &Field, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FIELD_MAGIC)?;
    let nt = u32::try_from(field.rows().saturating_sub(1))
        .map_err(|_| Error::Shape("too many rows".into()))?;
    let nx = u32::try_from(field.cols()).map_err(|_| Error::Shape("too many columns".into()))?;
    w.write_all(&nt.to_le_bytes())?;
    w.write_all(&nx.to_le_bytes())?;
    for v in field.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_binary(path: &Path) -> Result<Field> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || bytes[..8] != FIELD_MAGIC {
        return Err(Error::Shape(format!(
            "{} is not a field dump",
            path.display()
        )));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(8) + 1, word(12));
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(Error::Shape(format!(
            "{}: header says {rows}x{cols}, body has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Field::from_vec(rows, cols, data)
}

/// Writes `field` as `<name>.csv` or `<name>.bin`; does nothing for
/// [`FieldFormat::None`].
pub fn write_field(field: &Field, dir: &Path, name: &str, format: FieldFormat) -> Result<()> {
    match format {
        FieldFormat::Csv => write_field_csv(field, &dir.join(format!("{name}.csv"))),
        FieldFormat::Binary => write_field_binary(field, &dir.join(format!("{name}.bin"))),
        FieldFormat::None => Ok(()),
    }
}

/// Writes a CSV with a header line and equally long columns.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    assert_eq!(header.len(), columns.len());
    let n = columns.first().map_or(0, |c| c.len());
    assert!(
        columns.iter().all(|c| c.len() == n),
        "columns must have equal length"
    );
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for k in 0..n {
        let line: Vec<String> = columns.iter().map(|c| c[k].to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `x` followed by true and recovered state at the given time rows.
pub fn write_state_slices(
    path: &Path,
    grid: &Grid,
    truth: &Field,
    rec: &Field,
    rows: &[usize],
) -> Result<()> {
    let xs = grid.xs();
    let mut header = vec!["x".to_string()];
    let mut cols: Vec<&[f64]> = vec![&xs];
    for &j in rows {
        header.push(format!("true_t{j}"));
        header.push(format!("recovered_t{j}"));
        cols.push(truth.row(j));
        cols.push(rec.row(j));
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_columns(path, &h, &cols)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("aao-artifacts-{}-{name}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid::unit(7, 3).unwrap();
        let f = Field::from_fn(&g, |t, x| t * 1e3 + x.sin());
        let d = tmp("bin");
        write_field(&f, &d, "u", FieldFormat::Binary).unwrap();
        let bytes = fs::read(d.join("u.bin")).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 7 * 8);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &7u32.to_le_bytes());
        assert_eq!(read_field_binary(&d.join("u.bin")).unwrap(), f);
        fs::remove_dir_all(d).unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::unit(5, 2).unwrap();
        let f = Field::from_fn(&g, |t, x| t / 3.0 - x);
        let d = tmp("csv");
        write_field(&f, &d, "u", FieldFormat::Csv).unwrap();
        let text = fs::read_to_string(d.join("u.csv")).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(Field::from_rows(&rows).unwrap(), f);
        fs::remove_dir_all(d).unwrap();
    }
}
