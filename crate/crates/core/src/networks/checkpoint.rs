//! Flat named-tensor container for checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "DAVENTC1"
//! count    u32      number of entries
//! entry*   repeated:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims: ndim x u32
//!   data     product(dims) x f64 little-endian
//! ```

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;

const MAGIC: &[u8; 8] = b"DAVENTC1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    /// Not a container file or a corrupted one.
    Format(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Format(msg) => write!(f, "invalid checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// Writes named tensors in declaration order.
pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let shape = tensor.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in &shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads every entry of a container file.
pub fn load(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(CheckpointError::Format("bad magic; not a named-tensor container".into()));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("tensor name is not utf-8".into()))?;
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        out.push((name, shape, data));
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

/// Convenience accessor for scalar metadata entries.
pub fn find_scalar(entries: &[(String, Vec<usize>, Vec<f64>)], name: &str) -> Option<f64> {
    entries.iter().find(|(n, _, _)| n == name).and_then(|(_, _, d)| d.first().copied())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = std::env::temp_dir().join("dave_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.bin");
        let entries = vec![
            ("a.w".to_string(), Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.0, 3.0, 4.5, -6.0]).unwrap()),
            ("meta.k".to_string(), Tensor::scalar(7.5)),
        ];
        save(&path, &entries).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a.w");
        assert_eq!(loaded[0].1, vec![2, 3]);
        assert_eq!(loaded[0].2, entries[0].1.to_vec());
        assert_eq!(find_scalar(&loaded, "meta.k"), Some(7.5));
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = std::env::temp_dir().join("dave_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.bin");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Format(_))));
        fs::remove_file(&path).unwrap();
    }
}
