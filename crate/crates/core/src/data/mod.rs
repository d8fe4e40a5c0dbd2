//! Manifests, balancing, chunk loading, feature caches and the synthetic
//! corpus.
//!
//! A manifest is tab-separated text. Lines starting with `#` are comments;
//! a `# sample_rate=<Hz>` comment sets the working rate (16000 otherwise).
//! An optional header line names the columns:
//!
//! ```text
//! # sample_rate=16000
//! path	label	sex	split	duration_s
//! wav/patient_000.wav	patient	M	train	7.25
//! ```
//!
//! Paths are relative to the manifest's directory.

mod cache;
mod chunks;
mod synth;

pub use cache::{cache_features, load_cache_index, CacheEntry, CacheIndex, CACHE_INDEX_FILE};
pub use chunks::{load_chunks, AudioChunk, WindowConfig};
pub use synth::{band_energy, synth_corpus, synth_noise_clips, SynthConfig};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;

use crate::audio::AudioError;
use crate::rng::stream;

pub const MANIFEST_HEADER: &str = "path\tlabel\tsex\tsplit\tduration_s";
pub const DEFAULT_SAMPLE_RATE: u32 = 16000;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path} appears in both {first} and {second} splits")]
    Leakage { path: String, first: Split, second: Split },
    #[error("cell {split}/{label}/{sex} is empty; cannot balance")]
    EmptyCell { split: Split, label: Label, sex: Sex },
    #[error("cannot read clip {path}: {source}")]
    Clip { path: String, source: AudioError },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

macro_rules! text_enum {
    ($name:ident, $what:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {other:?}", $what)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

text_enum!(Label, "label", { Control => "control", Patient => "patient" });
text_enum!(Sex, "sex", { Male => "M", Female => "F" });
text_enum!(Split, "split", { Train => "train", Validation => "validation", Test => "test" });

impl Label {
    /// Classifier output index: control 0, patient 1.
    pub fn index(self) -> usize {
        match self {
            Label::Control => 0,
            Label::Patient => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Control),
            1 => Some(Label::Patient),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleRecord {
    /// As written in the manifest, relative to its directory.
    pub path: PathBuf,
    pub label: Label,
    pub sex: Sex,
    pub split: Split,
    pub duration_s: f64,
}

impl ExampleRecord {
    /// Path without extension, with `/` separators; unique per record.
    pub fn id(&self) -> String {
        self.path.with_extension("").to_string_lossy().replace('\\', "/")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<ExampleRecord>,
    /// Free-text comment lines (without the leading `#`).
    pub provenance: Vec<String>,
    pub sample_rate: u32,
    /// Directory the record paths are relative to.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, sample_rate: u32) -> Self {
        Self { records: Vec::new(), provenance: Vec::new(), sample_rate, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, record: &ExampleRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ExampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for r in &self.records {
            n[r.split as usize] += 1;
        }
        n
    }

    /// Errors if any path is listed under two different splits.
    pub fn check_leakage(&self) -> Result<()> {
        let mut seen: HashMap<&Path, Split> = HashMap::new();
        for r in &self.records {
            match seen.get(r.path.as_path()) {
                Some(&first) if first != r.split => {
                    return Err(DataError::Leakage { path: r.path.display().to_string(), first, second: r.split })
                }
                _ => {
                    seen.insert(&r.path, r.split);
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# sample_rate={}\n", self.sample_rate);
        for p in &self.provenance {
            out.push_str(&format!("# {p}\n"));
        }
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.path.display(), r.label, r.sex, r.split, r.duration_s));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }
}

pub fn parse_manifest(text: &str, source: &Path, base_dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new(base_dir, DEFAULT_SAMPLE_RATE);
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: String| DataError::Parse { path: source.display().to_string(), line: i + 1, reason };
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rate) = comment.strip_prefix("sample_rate=") {
                m.sample_rate = rate.trim().parse().ok().filter(|r| *r > 0).ok_or_else(|| bad(format!("bad sample rate {rate:?}")))?;
            } else {
                m.provenance.push(comment.to_string());
            }
            continue;
        }
        if trimmed == MANIFEST_HEADER {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let duration_s: f64 = cols[4].parse().map_err(|_| bad(format!("bad duration {:?}", cols[4])))?;
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(bad(format!("duration must be positive, got {duration_s}")));
        }
        m.records.push(ExampleRecord {
            path: PathBuf::from(cols[0]),
            label: cols[1].parse().map_err(bad)?,
            sex: cols[2].parse().map_err(bad)?,
            split: cols[3].parse().map_err(bad)?,
            duration_s,
        });
    }
    m.check_leakage()?;
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, &base)
}

/// Down-samples every split so its four class × sex cells are all as large
/// as the smallest. Survivors keep their original order; which records
/// are dropped depends only on `seed`.
pub fn balance(manifest: &Manifest, seed: u64) -> Result<Manifest> {
    let mut keep = vec![false; manifest.records.len()];
    for &split in Split::ALL {
        let mut cells: BTreeMap<(Label, Sex), Vec<usize>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate().filter(|(_, r)| r.split == split) {
            cells.entry((r.label, r.sex)).or_default().push(i);
        }
        if cells.is_empty() {
            continue;
        }
        for &label in Label::ALL {
            for &sex in Sex::ALL {
                if !cells.contains_key(&(label, sex)) {
                    return Err(DataError::EmptyCell { split, label, sex });
                }
            }
        }
        let min = cells.values().map(Vec::len).min().unwrap_or(0);
        for ((label, sex), idx) in &cells {
            let mut rng = stream(seed, "balance", &[split as u64, *label as u64, *sex as u64]);
            for j in sample(&mut rng, idx.len(), min) {
                keep[idx[j]] = true;
            }
        }
    }
    let mut out = manifest.clone();
    out.records = manifest.records.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect();
    Ok(out)
}
