//! On-disk formats.
//!
//! * `CTC1` cumulant: magic, `u32` n, then `n * n^2` little-endian `f64`
//!   in row-major unfolding order.
//! * `CTX1` samples: magic, `u32` n, `u32` N, then `N * n` little-endian
//!   `f64`, one sample per row.
//! * Filter CSV: one filter per row, `n` columns, 17 significant digits.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::circulant::FilterBank;
use crate::cumulant::CumulantUnfolding;
use crate::error::{Error, Result};

pub const CUMULANT_MAGIC: &[u8; 4] = b"CTC1";
pub const SAMPLES_MAGIC: &[u8; 4] = b"CTX1";

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

/// Scientific notation with 17 significant digits, enough to round-trip.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_magic(reader: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| format_err(path, "file too short for header"))?;
    if &buf != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    Ok(())
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| format_err(path, "file too short for header"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(reader: &mut impl Read, path: &Path, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| format_err(path, format!("truncated payload, expected {count} values")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn expect_eof(reader: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match reader.read(&mut probe).map_err(io_err(path))? {
        0 => Ok(()),
        _ => Err(format_err(path, "trailing bytes after payload")),
    }
}

fn write_f64s(writer: &mut impl Write, values: &[f64]) -> io::Result<()> {
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_cumulant(path: &Path, cum: &CumulantUnfolding) -> Result<()> {
    let n = u32::try_from(cum.n()).map_err(|_| format_err(path, "n does not fit in u32"))?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| {
        w.write_all(CUMULANT_MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        write_f64s(&mut w, cum.as_slice())?;
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_cumulant(path: &Path) -> Result<CumulantUnfolding> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    read_magic(&mut r, path, CUMULANT_MAGIC)?;
    let n = read_u32(&mut r, path)? as usize;
    if n == 0 {
        return Err(format_err(path, "n = 0"));
    }
    let data = read_f64s(&mut r, path, n * n * n)?;
    expect_eof(&mut r, path)?;
    CumulantUnfolding::from_row_major(n, data).map_err(|e| format_err(path, e))
}

/// Writes a `CTX1` file whose sample count is known up front, row by row.
pub struct SampleWriter {
    path: PathBuf,
    writer: BufWriter<File>,
    n: usize,
    expected: u64,
    written: u64,
}

impl SampleWriter {
    pub fn create(path: &Path, n: usize, count: usize) -> Result<Self> {
        let n32 = u32::try_from(n).map_err(|_| format_err(path, "n does not fit in u32"))?;
        let c32 = u32::try_from(count).map_err(|_| format_err(path, "N does not fit in u32"))?;
        let file = File::create(path).map_err(io_err(path))?;
        let mut writer = BufWriter::new(file);
        (|| {
            writer.write_all(SAMPLES_MAGIC)?;
            writer.write_all(&n32.to_le_bytes())?;
            writer.write_all(&c32.to_le_bytes())
        })()
        .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            n,
            expected: count as u64,
            written: 0,
        })
    }

    /// Appends whole rows.
    pub fn write(&mut self, rows: &[f64]) -> Result<()> {
        if !rows.len().is_multiple_of(self.n) {
            return Err(format_err(&self.path, "partial sample row"));
        }
        self.written += (rows.len() / self.n) as u64;
        if self.written > self.expected {
            return Err(format_err(&self.path, "more samples than declared"));
        }
        write_f64s(&mut self.writer, rows).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(format_err(
                &self.path,
                format!("declared {} samples, wrote {}", self.expected, self.written),
            ));
        }
        self.writer.flush().map_err(io_err(&self.path))
    }
}

pub fn write_samples(path: &Path, n: usize, rows: &[f64]) -> Result<()> {
    if n == 0 || !rows.len().is_multiple_of(n) {
        return Err(format_err(path, "sample data is not a multiple of n"));
    }
    let mut w = SampleWriter::create(path, n, rows.len() / n)?;
    w.write(rows)?;
    w.finish()
}

/// Streams a `CTX1` file in chunks of whole samples.
pub struct SampleReader {
    path: PathBuf,
    reader: BufReader<File>,
    n: usize,
    total: usize,
    remaining: usize,
}

impl SampleReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let len = file.metadata().map_err(io_err(path))?.len();
        let mut reader = BufReader::new(file);
        read_magic(&mut reader, path, SAMPLES_MAGIC)?;
        let n = read_u32(&mut reader, path)? as usize;
        let total = read_u32(&mut reader, path)? as usize;
        if n == 0 {
            return Err(format_err(path, "n = 0"));
        }
        let expected = 12 + 8 * (n as u64) * (total as u64);
        if len != expected {
            return Err(format_err(
                path,
                format!("size {len} bytes does not match header (n = {n}, N = {total}, expected {expected})"),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            n,
            total,
            remaining: total,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Next chunk of up to `max_samples` rows, or `None` at the end.
    pub fn next_chunk(&mut self, max_samples: usize) -> Result<Option<Vec<f64>>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        let take = self.remaining.min(max_samples.max(1));
        let data = read_f64s(&mut self.reader, &self.path, take * self.n)?;
        self.remaining -= take;
        Ok(Some(data))
    }

    pub fn read_all(mut self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.total * self.n);
        while let Some(chunk) = self.next_chunk(1 << 16)? {
            out.extend_from_slice(&chunk);
        }
        Ok(out)
    }
}

/// Reads a whole `CTX1` file: `(n, rows)`.
pub fn read_samples(path: &Path) -> Result<(usize, Vec<f64>)> {
    let reader = SampleReader::open(path)?;
    let n = reader.n();
    Ok((n, reader.read_all()?))
}

/// Writes rows of numbers as CSV.
pub fn write_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| {
        for row in rows {
            let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads a CSV of numbers; blank lines and lines starting with `#` are
/// skipped.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(path, format!("line {}: bad number {t:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_filters(path: &Path, bank: &FilterBank) -> Result<()> {
    let rows: Vec<Vec<f64>> = bank.iter().map(|f| f.coeffs().to_vec()).collect();
    write_rows(path, &rows)
}

pub fn read_filters(path: &Path) -> Result<FilterBank> {
    FilterBank::from_rows(read_rows(path)?).map_err(|e| format_err(path, e))
}

/// One value per line.
pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    write_rows(path, &rows)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let rows = read_rows(path)?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(format_err(path, "expected one value per line"));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}
