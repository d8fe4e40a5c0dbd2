//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MGCK"
//! version  u32      1
//! width    u8       bytes per value (4 = f32, 8 = f64)
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8), rank u32, dims u64 × rank,
//!   values   width × product(dims), little-endian IEEE-754
//! ```
//!
//! Tensors are written in name order. A checkpoint written at one width can
//! be loaded at the other; values are converted through `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Result, Scalar, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<F: Scalar, W: Write>(mut w: W, store: &ParamStore<F>) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[F::WIDTH])?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        buf.clear();
        for v in t.data() {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn bad(reason: impl Into<String>) -> TensorError {
    TensorError::Checkpoint { path: String::new(), reason: reason.into() }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<F: Scalar, R: Read>(mut r: R) -> Result<ParamStore<F>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("truncated: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut width = [0u8; 1];
    r.read_exact(&mut width).map_err(|e| bad(format!("truncated: {e}")))?;
    let width = width[0] as usize;
    if width != 4 && width != 8 {
        return Err(bad(format!("unsupported value width {width}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| bad(format!("truncated: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw).map_err(|e| bad(format!("truncated in {name}: {e}")))?;
        let data: Vec<F> = raw
            .chunks_exact(width)
            .map(|c| if width == 4 { F::from_f64(f32::read_le(c) as f64) } else { F::from_f64(f64::read_le(c)) })
            .collect();
        if store.contains(&name) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save_checkpoint<F: Scalar>(path: &Path, store: &ParamStore<F>) -> Result<()> {
    let file = File::create(path).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })?;
    write_checkpoint(BufWriter::new(file), store).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<ParamStore<F>> {
    let file = File::open(path).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })?;
    read_checkpoint(BufReader::new(file)).map_err(|e| match e {
        TensorError::Checkpoint { reason, .. } => TensorError::Checkpoint { path: path.display().to_string(), reason },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::new([3], vec![1.5f32, -0.0, f32::MIN_POSITIVE]).unwrap());
        s.insert("a.weight", Tensor::from_fn([2, 2], |i| i as f32 * 0.1));
        s.insert("scalar", Tensor::scalar(7.0));
        s
    }

    #[test]
    fn header_layout() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();
        assert_eq!(&bytes[..4], b"MGCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 4);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
        // first tensor in name order is "a.weight"
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 8);
        assert_eq!(&bytes[17..25], b"a.weight");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s).unwrap();
        let back: ParamStore<f32> = read_checkpoint(bytes.as_slice()).unwrap();
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();
        assert!(read_checkpoint::<f32, _>(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_checkpoint::<f32, _>(bytes.as_slice()).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_checkpoint::<f32>(Path::new("/nonexistent/ckpt.bin")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.bin"));
    }
}
