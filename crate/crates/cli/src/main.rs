//! `mfccgram`: synthetic data, feature caches, noise augmentation,
//! pretraining, finetuning, evaluation and report tables.
//!
//! Exit status is 0 on success, 1 on a runtime failure (one
//! `error<TAB>kind<TAB>message` line on stderr) and 2 on a usage error.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mfccgram", version, about = "MFCC-gram Transformer pipeline for respiratory insufficiency detection from speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the training verbs. `--config` replaces the profile;
/// the remaining flags override single fields of either.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Named settings: `desk` (reduced encoder) or `paper` (512/3/2048).
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Run configuration TOML, as written next to every training output.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed for initialization, shuffling, dropout and noise draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the epoch count of the verb.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

/// Noise-injection settings for verbs that read audio.
#[derive(Args, Debug, Clone)]
pub struct NoiseArgs {
    /// Directory of noise WAVs. Without it no noise is injected.
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    /// Noise files mixed into each patient clip (0..=3).
    #[arg(long)]
    pub patient_count: Option<u8>,
    /// Noise files mixed into each control clip (0..=3).
    #[arg(long)]
    pub control_count: Option<u8>,
    /// Peak of a noise draw in full-scale units, or `auto` for the median
    /// peak of the noise files.
    #[arg(long)]
    pub max_amplitude: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic two-class corpus, its manifest and noise clips.
    SynthData {
        /// Clips per class.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        noise_clips: usize,
        #[arg(long, default_value_t = 10.0)]
        noise_seconds: f64,
    },
    /// Caches per-chunk features of every manifest record.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `mfcc` or `mel`.
        #[arg(long, default_value = "mfcc")]
        kind: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Mixes noise into every record and writes the new WAVs and manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Masked-reconstruction pretraining on every chunk of a corpus.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature cache to read instead of featurizing the audio.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Alterations: any of `time`, `channel`, `noise`, comma separated.
        #[arg(long)]
        alterations: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Supervised training repeated over seeds, with a report per run.
    Finetune {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature cache to read instead of featurizing (noise-free only).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Pretrained encoder checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Number of seeds, counted up from `--seed`.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Accuracy of a checkpoint on one split, with and without noise.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Model config; defaults to `model.toml` beside the checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Mean ± sample std table over finetuning run directories.
    Report {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> error::Result<()> {
    match cli.command {
        Command::SynthData { n, seed, out, noise_clips, noise_seconds } => commands::synth_data(n, seed, &out, noise_clips, noise_seconds),
        Command::Featurize { manifest, out, kind, run } => commands::featurize(&manifest, &out, &kind, &run),
        Command::Augment { manifest, out, seed, noise } => commands::augment(&manifest, &out, seed, &noise),
        Command::Pretrain { manifest, cache, out, alterations, run } => commands::pretrain(&manifest, cache.as_deref(), &out, alterations.as_deref(), &run),
        Command::Finetune { manifest, cache, init, seeds, out, run, noise } => {
            commands::finetune(&manifest, cache.as_deref(), init.as_deref(), seeds, &out, &run, &noise)
        }
        Command::Evaluate { checkpoint, manifest, model, split, out, run, noise } => {
            commands::evaluate(&checkpoint, &manifest, model.as_deref(), &split, out.as_deref(), &run, &noise)
        }
        Command::Report { runs, out } => commands::report(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(1)
        }
    }
}
