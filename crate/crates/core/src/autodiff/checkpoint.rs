//! Binary container for named tensors.
//!
//! Layout (all integers little-endian except where noted):
//!
//! ```text
//! offset 0: version        u8, currently 1 (checked before anything else)
//! offset 1: magic          4 bytes, "CLVC"
//! offset 5: config hash    32 bytes (sha256 of the canonical run config)
//! offset 37: tensor count  u32
//! then per tensor:
//!   name length            u16
//!   name                   utf-8 bytes
//!   dtype                  u8 (0 = f32, 1 = f64)
//!   rank                   u8
//!   dims                   rank x u32
//!   data                   product(dims) elements, little-endian
//! ```
//!
//! Round-trips are value-exact: bytes in equal bytes out for every element.

use super::graph::Graph;
use super::tensor::{Dtype, Real, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"CLVC";

pub fn save_tensors<T: Real>(
    path: &Path,
    entries: &[(String, Tensor<T>)],
    config_hash: &[u8; 32],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.push(CHECKPOINT_VERSION);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(config_hash);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let nb = name.as_bytes();
        if nb.len() > u16::MAX as usize {
            return Err(Error::checkpoint(format!("tensor name too long: {name:?}")));
        }
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(T::DTYPE as u8);
        if t.shape().len() > u8::MAX as usize {
            return Err(Error::checkpoint(format!("tensor rank too large: {name:?}")));
        }
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            if d > u32::MAX as usize {
                return Err(Error::checkpoint(format!("dimension too large in {name:?}")));
            }
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.put_le(&mut buf);
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::checkpoint(format!(
                "{}: truncated at byte {} (wanted {} more)",
                self.path.display(),
                self.pos,
                n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_tensors<T: Real>(
    path: &Path,
    expected_hash: Option<&[u8; 32]>,
) -> Result<Vec<(String, Tensor<T>)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };

    let version = c.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint(format!(
            "{}: unsupported container version {version} (this build reads version {CHECKPOINT_VERSION})",
            path.display()
        )));
    }
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::checkpoint(format!(
            "{}: bad magic {magic:02x?}",
            path.display()
        )));
    }
    let hash: [u8; 32] = c.take(32)?.try_into().unwrap();
    if let Some(want) = expected_hash {
        if &hash != want {
            return Err(Error::checkpoint(format!(
                "{}: config hash {} does not match expected {}",
                path.display(),
                hex_prefix(&hash),
                hex_prefix(want)
            )));
        }
    }

    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::checkpoint(format!("{}: non-utf8 tensor name", path.display())))?;
        let dtype_byte = c.u8()?;
        let dtype = Dtype::from_byte(dtype_byte).ok_or_else(|| {
            Error::checkpoint(format!(
                "{}: unknown dtype byte {dtype_byte} for {name:?}",
                path.display()
            ))
        })?;
        if dtype != T::DTYPE {
            return Err(Error::checkpoint(format!(
                "{}: tensor {name:?} has dtype {dtype:?}, reader expects {:?}",
                path.display(),
                T::DTYPE
            )));
        }
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = c.take(len * T::BYTES)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::checkpoint(format!(
            "{}: {} trailing bytes after last tensor",
            path.display(),
            buf.len() - c.pos
        )));
    }
    Ok(out)
}

/// Read back the stored config hash without loading tensor data.
pub fn peek_hash(path: &Path) -> Result<[u8; 32]> {
    let mut head = [0u8; 37];
    let mut f = std::fs::File::open(path)?;
    f.read_exact(&mut head).map_err(|_| {
        Error::checkpoint(format!("{}: shorter than a container header", path.display()))
    })?;
    if head[0] != CHECKPOINT_VERSION {
        return Err(Error::checkpoint(format!(
            "{}: unsupported container version {} (this build reads version {CHECKPOINT_VERSION})",
            path.display(),
            head[0]
        )));
    }
    if &head[1..5] != MAGIC {
        return Err(Error::checkpoint(format!("{}: bad magic", path.display())));
    }
    Ok(head[5..37].try_into().unwrap())
}

impl<T: Real> Graph<T> {
    /// Write all parameters to a container file.
    pub fn save_checkpoint(&self, path: &Path, config_hash: &[u8; 32]) -> Result<()> {
        save_tensors(path, &self.param_entries(), config_hash)
    }

    /// Load parameters from a container file; names and shapes must match
    /// this graph exactly, and the stored hash must match when given.
    pub fn load_checkpoint(&mut self, path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<()> {
        let entries = load_tensors::<T>(path, expected_hash)?;
        self.load_param_values(entries)
    }
}

fn hex_prefix(h: &[u8; 32]) -> String {
    h[..6].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // keep the dir alive by leaking it; test processes are short-lived
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn round_trip_is_value_exact() {
        let path = tmpfile("rt.ckpt");
        let entries = vec![
            (
                "enc.w".to_string(),
                Tensor::<f32>::new(vec![2, 3], vec![1.5, -2.25, 0.1, f32::MIN_POSITIVE, 7.0, -0.0])
                    .unwrap(),
            ),
            ("enc.b".to_string(), Tensor::<f32>::zeros(&[3])),
        ];
        let hash = [7u8; 32];
        save_tensors(&path, &entries, &hash).unwrap();
        let back = load_tensors::<f32>(&path, Some(&hash)).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (&a, &b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(peek_hash(&path).unwrap(), hash);
    }

    #[test]
    fn future_version_is_rejected_first() {
        let path = tmpfile("v9.ckpt");
        save_tensors::<f32>(&path, &[], &[0u8; 32]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_tensors::<f32>(&path, None).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn wrong_hash_and_wrong_dtype_are_rejected() {
        let path = tmpfile("h.ckpt");
        let entries = vec![("w".to_string(), Tensor::<f32>::zeros(&[2]))];
        save_tensors(&path, &entries, &[1u8; 32]).unwrap();
        assert!(load_tensors::<f32>(&path, Some(&[2u8; 32])).is_err());
        assert!(load_tensors::<f64>(&path, Some(&[1u8; 32])).is_err());
    }

    #[test]
    fn truncation_is_a_structured_error() {
        let path = tmpfile("t.ckpt");
        let entries = vec![("w".to_string(), Tensor::<f32>::zeros(&[100]))];
        save_tensors(&path, &entries, &[0u8; 32]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = load_tensors::<f32>(&path, None).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
