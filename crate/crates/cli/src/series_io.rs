//! Binary series files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `CIRS` |
//! | 2     | version (1) |
//! | 3 x 4 | dims `(n_bins, height, width)` as u32 |
//! | 1     | dtype: 1 = f32, 2 = complex64 (re, im f32 pairs) |
//! | ...   | row-major payload |
//! | 4     | CRC32 of everything above |

use std::fs;
use std::path::Path;

use dynmri_core::{ComplexSeries, ImageSeries};
use ndarray::Array3;
use num_complex::Complex32;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"CIRS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 12 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    C64 = 2,
}

impl Dtype {
    pub fn element_size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::C64 => 8,
        }
    }
}

/// A decoded series file.
#[derive(Debug, Clone, PartialEq)]
pub enum SeriesData {
    Real(ImageSeries),
    Complex(ComplexSeries),
}

fn encode(dim: (usize, usize, usize), dtype: Dtype, payload: impl Iterator<Item = f32>) -> CliResult<Vec<u8>> {
    let (n, h, w) = dim;
    let mut buf = Vec::with_capacity(HEADER_LEN + n * h * w * dtype.element_size() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [n, h, w] {
        let d = u32::try_from(d).map_err(|_| CliError::Data(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.push(dtype as u8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn encode_real(series: &ImageSeries) -> CliResult<Vec<u8>> {
    encode(series.dim(), Dtype::F32, series.frames().iter().copied())
}

pub fn encode_complex(series: &ComplexSeries) -> CliResult<Vec<u8>> {
    encode(series.dim(), Dtype::C64, series.frames.iter().flat_map(|z| [z.re, z.im]))
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Data(format!("corrupt series file: {}", msg.into()))
}

pub fn decode(bytes: &[u8]) -> CliResult<SeriesData> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    let dtype = match bytes[18] {
        1 => Dtype::F32,
        2 => Dtype::C64,
        t => return Err(corrupt(format!("unknown dtype tag {t}"))),
    };
    let payload_len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(dtype.element_size()))
        .ok_or_else(|| corrupt("dimensions overflow"))?;
    if bytes.len() != HEADER_LEN + payload_len + 4 {
        return Err(corrupt(format!("expected {} payload bytes, file holds {}", payload_len, bytes.len().saturating_sub(HEADER_LEN + 4))));
    }
    let body = &bytes[..HEADER_LEN + payload_len];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("CRC mismatch"));
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + payload_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape_err = |e: ndarray::ShapeError| corrupt(e.to_string());
    Ok(match dtype {
        Dtype::F32 => SeriesData::Real(ImageSeries::new(Array3::from_shape_vec((n, h, w), floats).map_err(shape_err)?)?),
        Dtype::C64 => {
            let values = floats.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect();
            SeriesData::Complex(ComplexSeries { frames: Array3::from_shape_vec((n, h, w), values).map_err(shape_err)? })
        }
    })
}

pub fn write_series(path: &Path, series: &ImageSeries) -> CliResult<()> {
    fs::write(path, encode_real(series)?).map_err(|e| CliError::io(path, e))
}

pub fn write_complex_series(path: &Path, series: &ComplexSeries) -> CliResult<()> {
    fs::write(path, encode_complex(series)?).map_err(|e| CliError::io(path, e))
}

pub fn read_series_data(path: &Path) -> CliResult<SeriesData> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Read a real-valued series; complex files are rejected.
pub fn read_series(path: &Path) -> CliResult<ImageSeries> {
    match read_series_data(path)? {
        SeriesData::Real(s) => Ok(s),
        SeriesData::Complex(_) => Err(CliError::Data(format!("{}: expected a real series, found complex", path.display()))),
    }
}
