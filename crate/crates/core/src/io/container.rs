//! Binary matrix container and named-section model files.
//!
//! A matrix block is `"UALK"`, `u32` version, `u64` rows, `u64` cols and
//! then `rows · cols` little-endian `f64` values in row-major order. A
//! section file is a sequence of `u32` name length, UTF-8 name and matrix
//! block, read until end of input.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 4] = *b"UALK";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the first value of a matrix block.
pub const HEADER_LEN: usize = 24;

fn format<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(&encode_matrix(m))?;
    Ok(())
}

/// Fills `buf`, returning `false` on a clean end of input before the first byte.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return format(format!("truncated input: expected {} bytes, got {filled}", buf.len())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_header_rest<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<(usize, usize)> {
    if magic != MAGIC {
        return format(format!("bad magic {:?}, expected \"UALK\"", String::from_utf8_lossy(&magic)));
    }
    let mut rest = [0u8; HEADER_LEN - 4];
    if !read_exact_or_eof(r, &mut rest)? {
        return format("truncated header");
    }
    let version = u32::from_le_bytes(rest[0..4].try_into().unwrap());
    if version != FORMAT_VERSION {
        return format(format!("unsupported container version {version}, expected {FORMAT_VERSION}"));
    }
    let rows = u64::from_le_bytes(rest[4..12].try_into().unwrap());
    let cols = u64::from_le_bytes(rest[12..20].try_into().unwrap());
    let (Ok(rows), Ok(cols)) = (usize::try_from(rows), usize::try_from(cols)) else {
        return format(format!("shape {rows}x{cols} does not fit in memory"));
    };
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).is_none() {
        return format(format!("shape {rows}x{cols} does not fit in memory"));
    }
    Ok((rows, cols))
}

fn read_body<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let bytes = rows * cols * 8;
    let mut buf = Vec::new();
    r.take(bytes as u64).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return format(format!(
            "truncated data: {rows}x{cols} needs {bytes} bytes, got {}",
            buf.len()
        ));
    }
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))
}

/// Reads one matrix block. A clean end of input before the block is a
/// format error.
pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    if !read_exact_or_eof(r, &mut magic)? {
        return format("empty input, expected a matrix header");
    }
    let (rows, cols) = read_header_rest(r, magic)?;
    read_body(r, rows, cols)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut r = bytes;
    let m = read_matrix(&mut r)?;
    if !r.is_empty() {
        return format(format!("{} trailing bytes after matrix", r.len()));
    }
    Ok(m)
}

/// True if `bytes` begins with the container magic.
pub fn is_container(bytes: &[u8]) -> bool {
    bytes.starts_with(&MAGIC)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    decode_matrix(&std::fs::read(path)?)
}

/// Ordered named matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sections {
    entries: Vec<(String, Matrix)>,
}

impl Sections {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) -> Result<()> {
        let name = name.into();
        if name.len() > u32::MAX as usize {
            return format("section name is too long");
        }
        if self.contains(&name) {
            return format(format!("duplicate section '{name}'"));
        }
        self.entries.push((name, m));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("missing section '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn write_sections<W: Write>(w: &mut W, s: &Sections) -> Result<()> {
    for (name, m) in s.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_matrix(w, m)?;
    }
    Ok(())
}

pub fn read_sections<R: Read>(r: &mut R) -> Result<Sections> {
    let mut out = Sections::new();
    let mut len = [0u8; 4];
    while read_exact_or_eof(r, &mut len)? {
        let n = u32::from_le_bytes(len) as usize;
        let mut name = Vec::new();
        r.take(n as u64).read_to_end(&mut name)?;
        if name.len() != n {
            return format(format!("truncated section name: expected {n} bytes, got {}", name.len()));
        }
        let name = String::from_utf8(name).map_err(|_| Error::Format("section name is not UTF-8".into()))?;
        let m = read_matrix(r).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("section '{name}': {msg}")),
            other => other,
        })?;
        out.insert(name, m)?;
    }
    Ok(out)
}

pub fn save_sections(path: impl AsRef<Path>, s: &Sections) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sections(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn load_sections(path: impl AsRef<Path>) -> Result<Sections> {
    read_sections(&mut BufReader::new(File::open(path)?))
}
