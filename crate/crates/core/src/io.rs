//! Binary matrix persistence and small file helpers.
//!
//! Matrices go to disk in a fixed little-endian layout: magic "RMDM",
//! format version (u16), rows and cols (u64 each), the row-major f64
//! payload, and a trailing CRC32 of the payload bytes. Loads verify the
//! checksum; corrupt files are hard errors, never regenerated silently.

use crate::mlp::{Activation, Mlp};
use nalgebra::DMatrix;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MATRIX_MAGIC: &[u8; 4] = b"RMDM";
pub const MATRIX_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a matrix file)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed net file: {0}")]
    BadNet(String),
}

pub fn write_matrix_to<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<(), IoError> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    let mut hasher = crc32fast::Hasher::new();
    let mut buf = Vec::with_capacity(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    hasher.update(&buf);
    w.write_all(&buf)?;
    w.write_all(&hasher.finalize().to_le_bytes())?;
    Ok(())
}

pub fn read_matrix_from<R: Read>(r: &mut R) -> Result<DMatrix<f64>, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != MATRIX_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let mut dim = [0u8; 8];
    r.read_exact(&mut dim)?;
    let rows = u64::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let cols = u64::from_le_bytes(dim) as usize;
    let mut payload = vec![0u8; rows * cols * 8];
    r.read_exact(&mut payload)?;
    let mut crc = [0u8; 4];
    r.read_exact(&mut crc)?;
    let stored = u32::from_le_bytes(crc);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(IoError::Checksum { stored, computed });
    }
    let mut m = DMatrix::zeros(rows, cols);
    for r_ in 0..rows {
        for c in 0..cols {
            let off = (r_ * cols + c) * 8;
            m[(r_, c)] = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
        }
    }
    Ok(m)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_to(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_matrix_from(&mut f)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<(), IoError> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, IoError> {
    let m = read_matrix(path)?;
    Ok(m.iter().copied().collect())
}

/// Net file: one JSON header line (layer sizes + activation tag),
/// followed by the parameter blocks in matrix format.
pub fn write_net(path: &Path, net: &Mlp<f64>) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::json!({
        "sizes": net.layer_sizes(),
        "activation": net.activation(),
    });
    writeln!(f, "{header}")?;
    for block in net.export_blocks() {
        write_matrix_to(&mut f, &block)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_net(path: &Path) -> Result<Mlp<f64>, IoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut b = [0u8; 1];
        f.read_exact(&mut b)?;
        if b[0] == b'\n' {
            break;
        }
        header.push(b[0]);
    }
    #[derive(serde::Deserialize)]
    struct Header {
        sizes: Vec<usize>,
        activation: Activation,
    }
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| IoError::BadNet(e.to_string()))?;
    if header.sizes.len() < 2 {
        return Err(IoError::BadNet("too few layers".into()));
    }
    let n_blocks = 2 * (header.sizes.len() - 1) + 2;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        blocks.push(read_matrix_from(&mut f)?);
    }
    let net = Mlp::from_blocks(header.activation, &blocks)
        .map_err(|e| IoError::BadNet(e.to_string()))?;
    if net.layer_sizes() != header.sizes {
        return Err(IoError::BadNet("header sizes disagree with blocks".into()));
    }
    Ok(net)
}
