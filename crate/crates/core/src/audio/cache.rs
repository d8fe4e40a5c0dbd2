//! Feature cache files.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic        4 bytes "MGFC"
//! version      u32     1
//! fingerprint  u64     FeatureConfig::fingerprint()
//! id_len       u32, clip id (UTF-8)
//! frames       u32
//! channels     u32
//! values       f32 × frames × channels, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{AudioError, FeatureMatrix, Result};

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"MGFC";
pub const FEATURE_CACHE_VERSION: u32 = 1;

pub fn write_feature_cache(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(32 + feat.source.len() + feat.values.len() * 4);
    out.extend_from_slice(FEATURE_CACHE_MAGIC);
    out.extend_from_slice(&FEATURE_CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&feat.fingerprint.to_le_bytes());
    out.extend_from_slice(&(feat.source.len() as u32).to_le_bytes());
    out.extend_from_slice(feat.source.as_bytes());
    out.extend_from_slice(&(feat.frames as u32).to_le_bytes());
    out.extend_from_slice(&(feat.channels as u32).to_le_bytes());
    for v in &feat.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| AudioError::Io { path: path.display().to_string(), source: e })
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| AudioError::Io { path: path.display().to_string(), source: e })?;
    let bad = |reason: &str| AudioError::Cache { path: path.display().to_string(), reason: reason.to_string() };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != FEATURE_CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FEATURE_CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let fingerprint = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let id_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let source = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("clip id is not UTF-8"))?;
    let frames = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let raw = take(frames * channels * 4)?;
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(FeatureMatrix { frames, channels, values, fingerprint, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_header_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.feat");
        let mut f = FeatureMatrix::new(3, 2, vec![0.5, -1.25, 3.0, 1e-3, 0.0, 7.0]);
        f.fingerprint = 0xdead_beef_1234;
        f.source = "clip-7#2".into();
        write_feature_cache(&p, &f).unwrap();
        let back = read_feature_cache(&p).unwrap();
        assert_eq!(back.fingerprint, f.fingerprint);
        assert_eq!(back.source, f.source);
        assert_eq!((back.frames, back.channels), (3, 2));
        for (a, b) in back.values.iter().zip(&f.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"MGFC");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 8 + 4 + 4 + 6 * 4);
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.feat");
        write_feature_cache(&p, &FeatureMatrix::zeros(4, 4)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_feature_cache(&p), Err(AudioError::Cache { .. })));
    }
}
