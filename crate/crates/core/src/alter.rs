//! Input alterations for masked acoustic pretraining.
//!
//! Each alteration takes a feature matrix and returns the altered copy, a
//! `T × H` mask of altered positions and the untouched original as the
//! reconstruction target.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::FeatureMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AlterError {
    #[error("invalid alteration config: {0}")]
    InvalidConfig(String),
    #[error("time alteration needs at least {chunk} frames, got {frames}")]
    TooFewFrames { frames: usize, chunk: usize },
    #[error("channel alteration needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
}

pub type Result<T, E = AlterError> = std::result::Result<T, E>;

/// Small tolerance when flooring products like `0.15 · 140 / 7` that should
/// be integral but land just below in binary.
const FLOOR_SLACK: f64 = 1e-9;

fn floor_count(x: f64) -> usize {
    (x + FLOOR_SLACK).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAlterationConfig {
    /// Upper bound on the fraction of frames selected. Zero disables.
    pub fraction: f64,
    pub chunk_size: usize,
    pub p_zero: f64,
    pub p_random: f64,
    pub p_keep: f64,
    /// Draw the zero/random/keep category for each chunk instead of once per
    /// input.
    #[serde(default)]
    pub per_chunk_category: bool,
}

impl Default for TimeAlterationConfig {
    fn default() -> Self {
        Self { fraction: 0.15, chunk_size: 7, p_zero: 0.8, p_random: 0.1, p_keep: 0.1, per_chunk_category: false }
    }
}

impl TimeAlterationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlterError::InvalidConfig(m.into()));
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.fraction) {
            return bad("fraction must be in [0, 1)");
        }
        let ps = [self.p_zero, self.p_random, self.p_keep];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("p_zero + p_random + p_keep must equal 1");
        }
        Ok(())
    }

    /// Chunks selected for an input of `frames` frames.
    pub fn chunk_count(&self, frames: usize) -> usize {
        floor_count(self.fraction * frames as f64 / self.chunk_size as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelAlterationConfig {
    pub width_fraction: f64,
}

impl Default for ChannelAlterationConfig {
    fn default() -> Self {
        Self { width_fraction: 0.1 }
    }
}

impl ChannelAlterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.width_fraction) {
            return Err(AlterError::InvalidConfig("width_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Largest block width `W` for `channels` channels.
    pub fn max_width(&self, channels: usize) -> usize {
        floor_count(self.width_fraction * channels as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAlterationConfig {
    pub apply_prob: f64,
    pub noise_variance: f64,
}

impl Default for NoiseAlterationConfig {
    fn default() -> Self {
        Self { apply_prob: 0.1, noise_variance: 0.2 }
    }
}

impl NoiseAlterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(AlterError::InvalidConfig("apply_prob must be in [0, 1]".into()));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(AlterError::InvalidConfig("noise_variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Which alterations run; `None` skips a stage without consuming randomness.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlterationConfigs {
    pub time: Option<TimeAlterationConfig>,
    pub channel: Option<ChannelAlterationConfig>,
    pub noise: Option<NoiseAlterationConfig>,
}

impl AlterationConfigs {
    pub fn all() -> Self {
        Self { time: Some(Default::default()), channel: Some(Default::default()), noise: Some(Default::default()) }
    }

    pub fn time_only() -> Self {
        Self { time: Some(Default::default()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.time {
            c.validate()?;
        }
        if let Some(c) = &self.channel {
            c.validate()?;
        }
        if let Some(c) = &self.noise {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeCategory {
    Zero,
    RandomFrame,
    Keep,
}

/// What the random draws decided, for inspection and statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlterationRecord {
    /// `(first frame, category)` for every selected chunk, in frame order.
    pub time_chunks: Vec<(usize, TimeCategory)>,
    /// `(I_C, W_C)` when channel alteration ran.
    pub channel_block: Option<(usize, usize)>,
    pub noise_applied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlterationOutcome {
    pub altered: FeatureMatrix,
    /// Row-major `T × H`; true where the position was altered.
    pub mask: Vec<bool>,
    pub target: FeatureMatrix,
    pub record: AlterationRecord,
}

impl AlterationOutcome {
    pub fn identity(feat: &FeatureMatrix) -> Self {
        Self { altered: feat.clone(), mask: vec![false; feat.values.len()], target: feat.clone(), record: AlterationRecord::default() }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Frames with at least one masked position.
    pub fn masked_rows(&self) -> usize {
        let h = self.target.channels;
        (0..self.target.frames).filter(|&t| self.mask[t * h..(t + 1) * h].iter().any(|m| *m)).count()
    }
}

fn draw_category<R: Rng + ?Sized>(cfg: &TimeAlterationConfig, rng: &mut R) -> TimeCategory {
    let u: f64 = rng.random();
    if u < cfg.p_zero {
        TimeCategory::Zero
    } else if u < cfg.p_zero + cfg.p_random {
        TimeCategory::RandomFrame
    } else {
        TimeCategory::Keep
    }
}

/// Selects `floor(fraction·T/chunk)` chunks from the `floor(T/chunk)`
/// non-overlapping chunk slots and zeroes, replaces or keeps them.
pub fn time_alteration<R: Rng + ?Sized>(feat: &FeatureMatrix, cfg: &TimeAlterationConfig, rng: &mut R) -> Result<AlterationOutcome> {
    let mut out = AlterationOutcome::identity(feat);
    apply_time(&mut out, cfg, rng)?;
    Ok(out)
}

fn apply_time<R: Rng + ?Sized>(out: &mut AlterationOutcome, cfg: &TimeAlterationConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let (t, h) = (out.target.frames, out.target.channels);
    if t < cfg.chunk_size {
        return Err(AlterError::TooFewFrames { frames: t, chunk: cfg.chunk_size });
    }
    let n_chunks = cfg.chunk_count(t);
    if n_chunks == 0 {
        return Ok(());
    }
    let slots = t / cfg.chunk_size;
    let mut chosen: Vec<usize> = sample(rng, slots, n_chunks).into_iter().collect();
    chosen.sort_unstable();
    let shared = (!cfg.per_chunk_category).then(|| draw_category(cfg, rng));

    for slot in chosen {
        let first = slot * cfg.chunk_size;
        let category = shared.unwrap_or_else(|| draw_category(cfg, rng));
        for frame in first..first + cfg.chunk_size {
            match category {
                TimeCategory::Zero => out.altered.row_mut(frame).fill(0.0),
                TimeCategory::RandomFrame => {
                    let src = rng.random_range(0..t);
                    out.altered.row_mut(frame).copy_from_slice(out.target.row(src));
                }
                TimeCategory::Keep => {}
            }
            out.mask[frame * h..(frame + 1) * h].fill(true);
        }
        out.record.time_chunks.push((first, category));
    }
    Ok(())
}

/// Zeroes channels `I_C .. I_C+W_C` of every frame with
/// `W_C ~ U{0..W}` and `I_C ~ U{0..H−W_C−1}`.
pub fn channel_alteration<R: Rng + ?Sized>(feat: &FeatureMatrix, cfg: &ChannelAlterationConfig, rng: &mut R) -> Result<AlterationOutcome> {
    let mut out = AlterationOutcome::identity(feat);
    apply_channel(&mut out, cfg, rng)?;
    Ok(out)
}

fn apply_channel<R: Rng + ?Sized>(out: &mut AlterationOutcome, cfg: &ChannelAlterationConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let h = out.target.channels;
    if h < 2 {
        return Err(AlterError::TooFewChannels(h));
    }
    let width = rng.random_range(0..=cfg.max_width(h));
    let start = rng.random_range(0..h - width);
    for frame in 0..out.target.frames {
        out.altered.row_mut(frame)[start..start + width].fill(0.0);
        out.mask[frame * h + start..frame * h + start + width].fill(true);
    }
    out.record.channel_block = Some((start, width));
    Ok(())
}

/// With probability `apply_prob`, adds i.i.d. `N(0, noise_variance)` to every
/// position and marks the whole matrix.
pub fn noise_alteration<R: Rng + ?Sized>(feat: &FeatureMatrix, cfg: &NoiseAlterationConfig, rng: &mut R) -> Result<AlterationOutcome> {
    let mut out = AlterationOutcome::identity(feat);
    apply_noise(&mut out, cfg, rng)?;
    Ok(out)
}

fn apply_noise<R: Rng + ?Sized>(out: &mut AlterationOutcome, cfg: &NoiseAlterationConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    if rng.random::<f64>() >= cfg.apply_prob {
        return Ok(());
    }
    let normal = Normal::new(0.0, cfg.noise_variance.sqrt()).map_err(|e| AlterError::InvalidConfig(e.to_string()))?;
    for v in &mut out.altered.values {
        *v += normal.sample(rng);
    }
    out.mask.fill(true);
    out.record.noise_applied = true;
    Ok(())
}

/// Time, then channel, then noise on the running altered matrix. The mask
/// is the union of the stage masks; the target stays the original.
pub fn compose_alterations<R: Rng + ?Sized>(feat: &FeatureMatrix, cfgs: &AlterationConfigs, rng: &mut R) -> Result<AlterationOutcome> {
    let mut out = AlterationOutcome::identity(feat);
    if let Some(c) = &cfgs.time {
        if c.fraction > 0.0 {
            apply_time(&mut out, c, rng)?;
        }
    }
    if let Some(c) = &cfgs.channel {
        apply_channel(&mut out, c, rng)?;
    }
    if let Some(c) = &cfgs.noise {
        apply_noise(&mut out, c, rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_feat(t: usize, h: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(t, h, (0..t * h).map(|_| rng.random_range(-5.0..5.0)).collect())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn time_alteration_selects_fourteen_of_hundred() {
        let f = random_feat(100, 8, 1);
        for seed in 0..200 {
            let o = time_alteration(&f, &TimeAlterationConfig::default(), &mut rng(seed)).unwrap();
            assert_eq!(o.masked_rows(), 14);
            assert_eq!(o.record.time_chunks.len(), 2);
            assert_eq!(o.target, f);
        }
    }

    #[test]
    fn keep_category_leaves_values() {
        let f = random_feat(100, 8, 2);
        let cfg = TimeAlterationConfig { p_zero: 0.0, p_random: 0.0, p_keep: 1.0, ..Default::default() };
        let o = time_alteration(&f, &cfg, &mut rng(3)).unwrap();
        assert_eq!(o.altered, o.target);
        assert_eq!(o.masked_rows(), 14);
    }

    #[test]
    fn zero_category_zeroes_whole_rows() {
        let f = random_feat(50, 4, 3);
        let cfg = TimeAlterationConfig { p_zero: 1.0, p_random: 0.0, p_keep: 0.0, ..Default::default() };
        let o = time_alteration(&f, &cfg, &mut rng(4)).unwrap();
        for t in 0..50 {
            let masked = o.mask[t * 4];
            assert!(o.mask[t * 4..t * 4 + 4].iter().all(|m| *m == masked));
            if masked {
                assert!(o.altered.row(t).iter().all(|v| *v == 0.0));
            } else {
                assert_eq!(o.altered.row(t), f.row(t));
            }
        }
    }

    #[test]
    fn random_category_copies_frames_of_the_input() {
        let f = random_feat(60, 5, 4);
        let cfg = TimeAlterationConfig { p_zero: 0.0, p_random: 1.0, p_keep: 0.0, ..Default::default() };
        let o = time_alteration(&f, &cfg, &mut rng(5)).unwrap();
        for t in 0..60 {
            if o.mask[t * 5] {
                assert!((0..60).any(|s| f.row(s) == o.altered.row(t)));
            }
        }
    }

    #[test]
    fn time_alteration_rejects_short_input() {
        let f = random_feat(6, 4, 5);
        let err = time_alteration(&f, &TimeAlterationConfig::default(), &mut rng(0)).unwrap_err();
        assert_eq!(err, AlterError::TooFewFrames { frames: 6, chunk: 7 });
    }

    #[test]
    fn exact_products_are_not_floored_down() {
        let cfg = TimeAlterationConfig::default();
        assert_eq!(cfg.chunk_count(140), 3);
        assert_eq!(ChannelAlterationConfig::default().max_width(128), 12);
        assert_eq!(ChannelAlterationConfig::default().max_width(130), 13);
    }

    #[test]
    fn channel_block_is_contiguous_and_bounded() {
        let f = random_feat(20, 128, 6);
        for seed in 0..300 {
            let o = channel_alteration(&f, &ChannelAlterationConfig::default(), &mut rng(seed)).unwrap();
            let (start, width) = o.record.channel_block.unwrap();
            assert!(width <= 12);
            assert!(start + width <= 127);
            for t in 0..20 {
                for c in 0..128 {
                    let inside = (start..start + width).contains(&c);
                    assert_eq!(o.mask[t * 128 + c], inside);
                    let want = if inside { 0.0 } else { f.at(t, c) };
                    assert_eq!(o.altered.at(t, c).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_width_channel_block_is_identity() {
        let f = random_feat(10, 8, 7);
        let o = channel_alteration(&f, &ChannelAlterationConfig { width_fraction: 0.0 }, &mut rng(1)).unwrap();
        assert_eq!(o.altered, f);
        assert_eq!(o.masked_count(), 0);
        assert!(channel_alteration(&random_feat(3, 1, 0), &ChannelAlterationConfig::default(), &mut rng(0)).is_err());
    }

    #[test]
    fn noise_branches() {
        let f = random_feat(30, 8, 8);
        let never = noise_alteration(&f, &NoiseAlterationConfig { apply_prob: 0.0, ..Default::default() }, &mut rng(1)).unwrap();
        assert_eq!(never.altered, f);
        assert_eq!(never.masked_count(), 0);
        let always = NoiseAlterationConfig { apply_prob: 1.0, ..Default::default() };
        let a = noise_alteration(&f, &always, &mut rng(2)).unwrap();
        let b = noise_alteration(&f, &always, &mut rng(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.record.noise_applied);
        assert_eq!(a.masked_count(), 240);
        assert_ne!(a.altered, f);
    }

    #[test]
    fn disabled_composition_is_identity() {
        let f = random_feat(10, 8, 9);
        let cfgs = AlterationConfigs {
            time: Some(TimeAlterationConfig { fraction: 0.0, ..Default::default() }),
            channel: Some(ChannelAlterationConfig { width_fraction: 0.0 }),
            noise: Some(NoiseAlterationConfig { apply_prob: 0.0, ..Default::default() }),
        };
        let o = compose_alterations(&f, &cfgs, &mut rng(3)).unwrap();
        assert_eq!(o.altered, f);
        assert_eq!(o.masked_count(), 0);
    }

    #[test]
    fn time_only_composition_matches_time_alteration() {
        let f = random_feat(100, 8, 10);
        let a = compose_alterations(&f, &AlterationConfigs::time_only(), &mut rng(4)).unwrap();
        let b = time_alteration(&f, &TimeAlterationConfig::default(), &mut rng(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(TimeAlterationConfig { p_zero: 0.5, ..Default::default() }.validate().is_err());
        assert!(TimeAlterationConfig { chunk_size: 0, ..Default::default() }.validate().is_err());
        assert!(ChannelAlterationConfig { width_fraction: 1.0 }.validate().is_err());
        assert!(NoiseAlterationConfig { apply_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(AlterationConfigs::all().validate().is_ok());
    }
}
