//! Per-chunk feature cache with a text index.
//!
//! The index (`index.tsv`) starts with a `# fingerprint=<hex>` line covering
//! the feature and window settings, followed by one
//! `record-id TAB chunk-file TAB T TAB H` line per chunk. Rebuilding with
//! the same fingerprint is a no-op; a different fingerprint rebuilds
//! everything.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{io_err, load_chunks, DataError, Manifest, Result, Split, WindowConfig};
use crate::audio::{read_feature_cache, write_feature_cache, FeatureConfig, FeatureExtractor, FeatureMatrix};

pub const CACHE_INDEX_FILE: &str = "index.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub record: String,
    /// Relative to the cache directory.
    pub file: String,
    pub frames: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheIndex {
    pub dir: PathBuf,
    pub fingerprint: u64,
    pub entries: Vec<CacheEntry>,
    /// False when an up-to-date cache was found and left alone.
    pub rebuilt: bool,
}

impl CacheIndex {
    pub fn load_features(&self, entry: &CacheEntry) -> Result<FeatureMatrix> {
        Ok(read_feature_cache(&self.dir.join(&entry.file))?)
    }

    /// Entries whose record is in `records`, in index order.
    pub fn entries_for<'a>(&'a self, records: &'a [String]) -> impl Iterator<Item = &'a CacheEntry> {
        self.entries.iter().filter(move |e| records.contains(&e.record))
    }
}

fn cache_fingerprint(cfg: &FeatureConfig, window: &WindowConfig) -> u64 {
    let text = format!("features={:016x};window_s={:e};hop_s={:e}", cfg.fingerprint(), window.window_s, window.hop_s);
    u64::from_le_bytes(Sha256::digest(text.as_bytes())[..8].try_into().unwrap())
}

fn chunk_file_name(chunk_id: &str) -> String {
    let safe: String = chunk_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{safe}.mgf")
}

pub fn load_cache_index(dir: &Path) -> Result<CacheIndex> {
    let path = dir.join(CACHE_INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut fingerprint = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: &str| DataError::Parse { path: path.display().to_string(), line: i + 1, reason: reason.to_string() };
        if let Some(fp) = line.strip_prefix("# fingerprint=") {
            fingerprint = Some(u64::from_str_radix(fp.trim(), 16).map_err(|_| bad("bad fingerprint"))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        entries.push(CacheEntry {
            record: cols[0].to_string(),
            file: cols[1].to_string(),
            frames: cols[2].parse().map_err(|_| bad("bad frame count"))?,
            channels: cols[3].parse().map_err(|_| bad("bad channel count"))?,
        });
    }
    let fingerprint = fingerprint.ok_or_else(|| DataError::Parse { path: path.display().to_string(), line: 1, reason: "missing fingerprint line".into() })?;
    Ok(CacheIndex { dir: dir.to_path_buf(), fingerprint, entries, rebuilt: false })
}

fn write_index(index: &CacheIndex) -> Result<()> {
    let mut out = format!("# fingerprint={:016x}\n", index.fingerprint);
    for e in &index.entries {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.record, e.file, e.frames, e.channels));
    }
    let path = index.dir.join(CACHE_INDEX_FILE);
    std::fs::write(&path, out).map_err(io_err(&path))
}

/// Writes one feature file per chunk of every record and an index mapping
/// records to their chunk files.
pub fn cache_features(manifest: &Manifest, cfg: &FeatureConfig, window: &WindowConfig, out_dir: &Path) -> Result<CacheIndex> {
    let cfg = &FeatureConfig { sample_rate: manifest.sample_rate, ..cfg.clone() };
    let fingerprint = cache_fingerprint(cfg, window);
    if let Ok(existing) = load_cache_index(out_dir) {
        let ids: Vec<String> = manifest.records.iter().map(|r| r.id()).collect();
        let same_records = {
            let mut seen: Vec<&str> = existing.entries.iter().map(|e| e.record.as_str()).collect();
            seen.dedup();
            seen == ids.iter().map(String::as_str).collect::<Vec<_>>()
        };
        if existing.fingerprint == fingerprint && same_records && existing.entries.iter().all(|e| out_dir.join(&e.file).is_file()) {
            return Ok(existing);
        }
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let extractor = FeatureExtractor::new(cfg)?;

    let mut entries = Vec::new();
    for &split in Split::ALL {
        let chunks = load_chunks(manifest, split, window)?;
        let written: Vec<CacheEntry> = chunks
            .par_iter()
            .map(|c| {
                let mut feat = extractor.extract(&c.audio)?;
                feat.source = c.id.clone();
                let file = chunk_file_name(&c.id);
                write_feature_cache(&out_dir.join(&file), &feat)?;
                Ok(CacheEntry { record: c.record.clone(), file, frames: feat.frames, channels: feat.channels })
            })
            .collect::<Result<_>>()?;
        entries.extend(written);
    }
    // Keep the index in manifest order regardless of split grouping.
    let order: Vec<String> = manifest.records.iter().map(|r| r.id()).collect();
    entries.sort_by_key(|e| order.iter().position(|id| *id == e.record));
    let index = CacheIndex { dir: out_dir.to_path_buf(), fingerprint, entries, rebuilt: true };
    write_index(&index)?;
    Ok(index)
}
