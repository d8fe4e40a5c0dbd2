//! Per-seed results, summary statistics and the on-disk report format.

use std::fmt::Write as _;
use std::path::Path;

use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// Chunk-level test accuracy in percent.
    pub acc_with_noise: f64,
    pub acc_without_noise: f64,
    /// Majority-vote accuracy over source recordings, in percent.
    pub file_acc_with_noise: f64,
    pub file_acc_without_noise: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    /// Fingerprint of the run configuration.
    pub fingerprint: String,
    pub seeds: Vec<SeedResult>,
}

/// Mean and sample standard deviation (n - 1 denominator). The deviation is
/// `None` for fewer than two values.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

fn format_stat(values: &[f64]) -> String {
    match mean_and_sample_std(values) {
        (m, Some(s)) => format!("{m:.2} ± {s:.2}"),
        (m, None) => format!("{m:.2}"),
    }
}

pub const REPORT_FILE: &str = "report.tsv";
const REPORT_HEADER: &str = "seed\tacc_with_noise\tacc_without_noise\tfile_acc_with_noise\tfile_acc_without_noise\tbest_epoch";
const CURVE_HEADER: &str = "seed\tepoch\ttrain_loss\tval_loss\tval_acc";

impl RunReport {
    pub fn with_noise(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.acc_with_noise).collect()
    }

    pub fn without_noise(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.acc_without_noise).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fingerprint {}", self.fingerprint);
        let _ = writeln!(s, "seeds {}", self.seeds.len());
        let _ = writeln!(s, "chunk accuracy with noise    {}", format_stat(&self.with_noise()));
        let _ = writeln!(s, "chunk accuracy without noise {}", format_stat(&self.without_noise()));
        let f: Vec<f64> = self.seeds.iter().map(|s| s.file_acc_with_noise).collect();
        let _ = writeln!(s, "file accuracy with noise     {}", format_stat(&f));
        let f: Vec<f64> = self.seeds.iter().map(|s| s.file_acc_without_noise).collect();
        let _ = writeln!(s, "file accuracy without noise  {}", format_stat(&f));
        s
    }

    /// Floats are written with Rust's shortest round-trip formatting, so
    /// `read` restores the report exactly.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# fingerprint={}\n# std=sample\n{REPORT_HEADER}\n", self.fingerprint);
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.seed, r.acc_with_noise, r.acc_without_noise, r.file_acc_with_noise, r.file_acc_without_noise, r.best_epoch
            );
        }
        s
    }

    pub fn curves_tsv(&self) -> String {
        let mut s = format!("{CURVE_HEADER}\n");
        for r in &self.seeds {
            for e in &r.curve {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.seed, e.epoch, e.train_loss, e.val_loss, e.val_acc);
            }
        }
        s
    }

    /// Writes `report.tsv`, `curves.tsv`, `summary.txt` and
    /// `fingerprint.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        for (name, text) in [
            (REPORT_FILE, self.to_tsv()),
            ("curves.tsv", self.curves_tsv()),
            ("summary.txt", self.summary()),
            ("fingerprint.txt", format!("{}\n", self.fingerprint)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| TrainError::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads a report written by [`RunReport::write`]. Curves are restored
    /// when `curves.tsv` is present.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| TrainError::io(&path, e))?;
        let mut report = Self::parse(&text).map_err(|reason| TrainError::Report { path: path.display().to_string(), reason })?;
        let cpath = dir.join("curves.tsv");
        if let Ok(text) = std::fs::read_to_string(&cpath) {
            report.parse_curves(&text).map_err(|reason| TrainError::Report { path: cpath.display().to_string(), reason })?;
        }
        Ok(report)
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut fingerprint = None;
        let mut seeds = Vec::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if let Some(c) = line.strip_prefix('#') {
                if let Some(fp) = c.trim().strip_prefix("fingerprint=") {
                    fingerprint = Some(fp.to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                if !line.starts_with("seed\tacc_with_noise\tacc_without_noise") {
                    return Err(format!("line {}: expected header", n + 1));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 3 {
                return Err(format!("line {}: expected at least 3 fields", n + 1));
            }
            let num = |i: usize| -> std::result::Result<f64, String> {
                f.get(i).map_or(Ok(f64::NAN), |v| v.parse().map_err(|_| format!("line {}: bad number {v:?}", n + 1)))
            };
            seeds.push(SeedResult {
                seed: f[0].parse().map_err(|_| format!("line {}: bad seed {:?}", n + 1, f[0]))?,
                acc_with_noise: num(1)?,
                acc_without_noise: num(2)?,
                file_acc_with_noise: num(3)?,
                file_acc_without_noise: num(4)?,
                best_epoch: f.get(5).map_or(Ok(0), |v| v.parse().map_err(|_| format!("line {}: bad epoch {v:?}", n + 1)))?,
                curve: Vec::new(),
            });
        }
        if !header_seen {
            return Err("missing header".into());
        }
        Ok(Self { fingerprint: fingerprint.ok_or("missing fingerprint comment")?, seeds })
    }

    fn parse_curves(&mut self, text: &str) -> std::result::Result<(), String> {
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || format!("line {}: malformed curve row", n + 1);
            if f.len() != 5 {
                return Err(bad());
            }
            let seed: u64 = f[0].parse().map_err(|_| bad())?;
            let stats = EpochStats {
                epoch: f[1].parse().map_err(|_| bad())?,
                train_loss: f[2].parse().map_err(|_| bad())?,
                val_loss: f[3].parse().map_err(|_| bad())?,
                val_acc: f[4].parse().map_err(|_| bad())?,
            };
            let r = self.seeds.iter_mut().find(|r| r.seed == seed).ok_or_else(|| format!("line {}: unknown seed {seed}", n + 1))?;
            r.curve.push(stats);
        }
        Ok(())
    }
}

/// One row per named run: mean ± sample std of chunk accuracy with and
/// without noise. Rows are sorted by name.
pub fn comparison_table(rows: &[(String, RunReport)]) -> String {
    let mut rows: Vec<&(String, RunReport)> = rows.iter().collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut s = String::from("run\tseeds\twith_noise\twithout_noise\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name}\t{}\t{}\t{}", r.seeds.len(), format_stat(&r.with_noise()), format_stat(&r.without_noise()));
    }
    s
}
