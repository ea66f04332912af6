//! Versioned little-endian checkpoint files.
//!
//! Layout: magic, `u16` version, `u8` dtype tag (1 = f32), the network
//! config as seven `u32` values, the skip scale as `f64`, a `u64` tensor
//! count, then per tensor a `u64`-prefixed name and a `u64`-prefixed array of
//! `f32` values, and finally a CRC32 of everything before it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenoiserConfig, UNet};
use crate::error::{ensure, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CIRNCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;
const MAX_NAME: u64 = 1 << 12;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialize `net` to `w`.
pub fn write_checkpoint<W: Write>(mut w: W, net: &UNet<f32>) -> Result<()> {
    let cfg = net.config();
    let mut buf = Vec::with_capacity(64 + 4 * net.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    for v in [cfg.n_bins, cfg.height, cfg.width, cfg.base_width, cfg.depth, cfg.blocks_per_level, cfg.embed_dim] {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("config value {v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&net.skip_scale.to_le_bytes());
    put_u64(&mut buf, net.param_specs().len() as u64);
    for spec in net.param_specs() {
        put_u64(&mut buf, spec.name.len() as u64);
        buf.extend_from_slice(spec.name.as_bytes());
        put_u64(&mut buf, spec.len as u64);
        for v in &net.params()[spec.offset..spec.offset + spec.len] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.buf.len() - self.pos >= n, Corrupt, "checkpoint truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parse a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<UNet<f32>> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    ensure!(all.len() >= CHECKPOINT_MAGIC.len() + 4, Corrupt, "checkpoint too short");
    ensure!(&all[..8] == CHECKPOINT_MAGIC, Corrupt, "bad checkpoint magic");
    let (body, tail) = all.split_at(all.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    ensure!(crc32fast::hash(body) == stored, Corrupt, "checkpoint CRC mismatch");

    let mut c = Cursor { buf: body, pos: 8 };
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    ensure!(version == CHECKPOINT_VERSION, Corrupt, "unsupported checkpoint version {version}");
    let dtype = c.take(1)?[0];
    ensure!(dtype == DTYPE_F32, Corrupt, "unsupported checkpoint dtype {dtype}");
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let [n_bins, height, width, base_width, depth, blocks_per_level, embed_dim] = dims;
    let cfg = DenoiserConfig { n_bins, height, width, base_width, depth, blocks_per_level, embed_dim };
    cfg.validate().map_err(|e| Error::Corrupt(format!("checkpoint config: {e}")))?;
    let skip_scale = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));

    let mut net = UNet::<f32>::new(&cfg, 0)?;
    net.skip_scale = skip_scale;
    let n_tensors = c.u64()?;
    ensure!(n_tensors == net.param_specs().len() as u64, Corrupt, "checkpoint holds {n_tensors} tensors");
    let specs = net.param_specs().to_vec();
    for spec in &specs {
        let name_len = c.u64()?;
        ensure!(name_len <= MAX_NAME, Corrupt, "tensor name length {name_len}");
        let name = c.take(name_len as usize)?;
        ensure!(name == spec.name.as_bytes(), Corrupt, "unexpected tensor {:?}", String::from_utf8_lossy(name));
        let len = c.u64()?;
        ensure!(len == spec.len as u64, Corrupt, "tensor {} has {len} values, expected {}", spec.name, spec.len);
        let raw = c.take(spec.len * 4)?;
        for (dst, chunk) in net.params_mut()[spec.offset..spec.offset + spec.len].iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    ensure!(c.pos == body.len(), Corrupt, "trailing bytes in checkpoint");
    ensure!(net.params().iter().all(|v| v.is_finite()), Corrupt, "non-finite checkpoint weights");
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &UNet<f32>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), net)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<UNet<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNet<f32> {
        let cfg = DenoiserConfig { n_bins: 2, height: 8, width: 8, base_width: 8, depth: 1, blocks_per_level: 1, embed_dim: 4 };
        UNet::new(&cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let net = small();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.config(), net.config());
        assert_eq!(back.skip_scale, net.skip_scale);
    }

    #[test]
    fn damage_is_detected() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &small()).unwrap();
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() / 2]), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(read_checkpoint(flipped.as_slice()), Err(Error::Corrupt(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(read_checkpoint(magic.as_slice()), Err(Error::Corrupt(_))));
    }
}
