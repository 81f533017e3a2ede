//! Reader and writer for the EMBS embedding-matrix container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "EMBS"
//! version u16      1
//! dim     u32
//! n       u64      number of rows
//! data    n * dim  IEEE-754 binary32, row-major
//! ```
//!
//! [`EmbsReader`] reads rows in bounded chunks so very large reference sets
//! can be scanned without holding the whole matrix in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 4 + 2 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbsHeader {
    pub dim: u32,
    pub n_samples: u64,
}

impl EmbsHeader {
    fn payload_len(&self) -> Option<u64> {
        (self.dim as u64)
            .checked_mul(self.n_samples)
            .and_then(|v| v.checked_mul(4))
    }
}

pub struct EmbsReader {
    path: PathBuf,
    inner: BufReader<File>,
    header: EmbsHeader,
    rows_read: u64,
}

impl EmbsReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut inner = BufReader::with_capacity(1 << 20, file);

        let mut head = [0u8; HEADER_LEN as usize];
        if file_len < HEADER_LEN {
            return Err(Error::Format(format!(
                "{}: file shorter than the {HEADER_LEN}-byte header",
                path.display()
            )));
        }
        inner
            .read_exact(&mut head)
            .map_err(|e| Error::io(&path, e))?;
        if &head[0..4] != MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let dim = u32::from_le_bytes(head[6..10].try_into().unwrap());
        let n_samples = u64::from_le_bytes(head[10..18].try_into().unwrap());
        let header = EmbsHeader { dim, n_samples };
        if dim == 0 {
            return Err(Error::Format(format!("{}: dim is zero", path.display())));
        }
        let expected = header
            .payload_len()
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format(format!("{}: header overflows", path.display())))?;
        if expected != file_len {
            return Err(Error::Format(format!(
                "{}: header announces {expected} bytes, file has {file_len}",
                path.display()
            )));
        }
        Ok(Self {
            path,
            inner,
            header,
            rows_read: 0,
        })
    }

    pub fn header(&self) -> EmbsHeader {
        self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn rows_read(&self) -> u64 {
        self.rows_read
    }

    /// Reads up to `max_rows` rows as one flat row-major buffer, or `None`
    /// once the matrix is exhausted.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<Vec<f32>>> {
        let remaining = self.header.n_samples - self.rows_read;
        if remaining == 0 {
            return Ok(None);
        }
        let rows = remaining.min(max_rows.max(1) as u64) as usize;
        let dim = self.dim();
        let mut bytes = vec![0u8; rows * dim * 4];
        self.inner
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        self.rows_read += rows as u64;
        Ok(Some(values))
    }
}

/// Writes a row-major matrix. Rows are taken from an iterator so callers can
/// stream very large matrices.
pub fn write_embs<'a, I>(path: impl AsRef<Path>, dim: usize, n_samples: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);

    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&(n_samples as u64).to_le_bytes()).map_err(io)?;
    let mut written = 0usize;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimMismatch(row.len(), dim));
        }
        for v in row {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        written += 1;
    }
    if written != n_samples {
        return Err(Error::InvalidParameter(format!(
            "announced {n_samples} rows, wrote {written}"
        )));
    }
    out.flush().map_err(io)
}
