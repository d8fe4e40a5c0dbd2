//! Transformer encoder over feature frames.
//!
//! Each frame is projected to `d_model`, summed with a sinusoidal position
//! code and passed through post-norm encoder layers
//! (`x ← LN(x + attn(x))`, `x ← LN(x + ffn(x))`). Two heads sit on top: a
//! per-frame linear map back to feature space for reconstruction, and mean
//! pooling over time followed by a linear classifier.
//!
//! Parameters live in a [`ParamStore`] under these names:
//!
//! ```text
//! input.weight [H, d]            input.bias [d]
//! layers.{i}.attn.{q,k,v,out}.weight [d, d]   .bias [d]
//! layers.{i}.ffn.in.weight [d, d_ff]          .bias [d_ff]
//! layers.{i}.ffn.out.weight [d_ff, d]         .bias [d]
//! layers.{i}.norm{1,2}.gain [d]               .bias [d]
//! recon.weight [d, H]            recon.bias [H]
//! cls.weight [d, n_classes]      cls.bias [n_classes]
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, hash_str, stream};
use crate::tensor::{Graph, NodeId, ParamStore, Result, Scalar, Tensor, TensorError};

pub const MODEL_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub activation: Activation,
    pub positional_encoding: bool,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// 512-wide, 3 layers, 8 heads, 2048 inner width.
    pub fn paper() -> Self {
        Self {
            input_dim: 128,
            d_model: 512,
            n_layers: 3,
            n_heads: 8,
            d_ff: 2048,
            dropout: 0.1,
            n_classes: 2,
            activation: Activation::Relu,
            positional_encoding: true,
            layer_norm_eps: 1e-5,
        }
    }

    /// Reduced profile that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, ..Self::paper() }
    }

    /// Gradient-check size.
    pub fn tiny() -> Self {
        Self { input_dim: 8, d_model: 16, n_layers: 2, n_heads: 2, d_ff: 32, dropout: 0.0, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(TensorError::Invalid { op: "model config", reason });
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model % 2 != 0 {
            return bad(format!("d_model {} must be even for the position code", self.d_model));
        }
        if self.n_layers == 0 || self.input_dim == 0 || self.d_ff == 0 || self.n_classes < 2 {
            return bad("n_layers, input_dim and d_ff must be positive and n_classes at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Every parameter name with its shape.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, d, f, c) = (self.input_dim, self.d_model, self.d_ff, self.n_classes);
        let mut v = vec![("input.weight".to_string(), vec![h, d]), ("input.bias".to_string(), vec![d])];
        for i in 0..self.n_layers {
            let p = format!("layers.{i}");
            for proj in ["q", "k", "v", "out"] {
                v.push((format!("{p}.attn.{proj}.weight"), vec![d, d]));
                v.push((format!("{p}.attn.{proj}.bias"), vec![d]));
            }
            v.push((format!("{p}.ffn.in.weight"), vec![d, f]));
            v.push((format!("{p}.ffn.in.bias"), vec![f]));
            v.push((format!("{p}.ffn.out.weight"), vec![f, d]));
            v.push((format!("{p}.ffn.out.bias"), vec![d]));
            for norm in ["norm1", "norm2"] {
                v.push((format!("{p}.{norm}.gain"), vec![d]));
                v.push((format!("{p}.{norm}.bias"), vec![d]));
            }
        }
        v.push(("recon.weight".to_string(), vec![d, h]));
        v.push(("recon.bias".to_string(), vec![h]));
        v.push(("cls.weight".to_string(), vec![d, c]));
        v.push(("cls.bias".to_string(), vec![c]));
        v
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Versioned<'a> {
            version: u32,
            #[serde(flatten)]
            cfg: &'a ModelConfig,
        }
        toml::to_string(&Versioned { version: MODEL_CONFIG_VERSION, cfg: self }).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Versioned {
            version: u32,
            #[serde(flatten)]
            cfg: ModelConfig,
        }
        let v: Versioned = toml::from_str(text).map_err(|e| TensorError::Invalid { op: "model config", reason: e.to_string() })?;
        if v.version != MODEL_CONFIG_VERSION {
            return Err(TensorError::Invalid { op: "model config", reason: format!("unsupported version {}", v.version) });
        }
        v.cfg.validate()?;
        Ok(v.cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml(&text).map_err(|e| TensorError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })
    }
}

/// Trainable tensors of the encoder and both heads.
pub type EncoderParams<F = f32> = ParamStore<F>;

/// How head weights start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    #[default]
    Xavier,
    Zero,
}

fn xavier<F: Scalar>(shape: &[usize], seed: u64, name: &str) -> Tensor<F> {
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = stream(seed, "init", &[hash_str(name)]);
    Tensor::from_fn(shape.to_vec(), |_| F::from_f64(rng.random_range(-bound..=bound)))
}

fn init_one<F: Scalar>(name: &str, shape: &[usize], seed: u64, heads: HeadInit) -> Tensor<F> {
    let is_head = name.starts_with("cls.") || name.starts_with("recon.");
    if name.ends_with(".gain") {
        Tensor::filled(shape.to_vec(), F::one())
    } else if name.ends_with(".bias") || (is_head && heads == HeadInit::Zero) {
        Tensor::zeros(shape.to_vec())
    } else {
        xavier(shape, seed, name)
    }
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains. Each tensor
/// has its own stream keyed by name, so adding or dropping a head never
/// changes the others.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64, heads: HeadInit) -> Result<EncoderParams<F>> {
    cfg.validate()?;
    Ok(cfg.param_shapes().into_iter().map(|(name, shape)| {
        let t = init_one(&name, &shape, seed, heads);
        (name, t)
    }).collect())
}

/// Re-initializes the classification head of `params` in place.
pub fn reset_classifier<F: Scalar>(params: &mut EncoderParams<F>, cfg: &ModelConfig, seed: u64, heads: HeadInit) {
    for (name, shape) in cfg.param_shapes() {
        if name.starts_with("cls.") {
            params.insert(name.clone(), init_one(&name, &shape, seed, heads));
        }
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(…)`.
pub fn positional_encoding<F: Scalar>(frames: usize, d_model: usize) -> Tensor<F> {
    let mut data = vec![F::zero(); frames * d_model];
    for pos in 0..frames {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = F::from_f64(angle.sin());
            data[pos * d_model + 2 * i + 1] = F::from_f64(angle.cos());
        }
    }
    Tensor::new(vec![frames, d_model], data).expect("shape matches data")
}

/// Training mode carries the dropout seed for this forward pass; `None` is
/// evaluation mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub dropout_seed: Option<u64>,
}

impl Mode {
    pub const EVAL: Mode = Mode { dropout_seed: None };

    pub fn train(seed: u64) -> Self {
        Self { dropout_seed: Some(seed) }
    }
}

fn linear<F: Scalar>(g: &mut Graph<F>, p: &ParamStore<F>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let w = g.param_from(p, &format!("{prefix}.weight"))?;
    let b = g.param_from(p, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_trailing(y, b)
}

struct Dropper {
    rate: f64,
    seed: Option<u64>,
}

impl Dropper {
    fn apply<F: Scalar>(&self, g: &mut Graph<F>, x: NodeId, layer: usize, site: u64) -> Result<NodeId> {
        match self.seed {
            Some(s) if self.rate > 0.0 => g.dropout(x, self.rate, derive_seed(s, &[layer as u64, site])),
            _ => Ok(x),
        }
    }
}

fn attention<F: Scalar>(g: &mut Graph<F>, p: &ParamStore<F>, cfg: &ModelConfig, x: NodeId, layer: usize) -> Result<NodeId> {
    let pre = format!("layers.{layer}.attn");
    let q = linear(g, p, x, &format!("{pre}.q"))?;
    let k = linear(g, p, x, &format!("{pre}.k"))?;
    let v = linear(g, p, x, &format!("{pre}.v"))?;
    let (q, k, v) = (g.split_heads(q, cfg.n_heads)?, g.split_heads(k, cfg.n_heads)?, g.split_heads(v, cfg.n_heads)?);
    // Scaling the queries is cheaper than scaling the T × T scores.
    let head_dim = cfg.d_model / cfg.n_heads;
    let q = g.scale(q, F::from_f64(1.0 / (head_dim as f64).sqrt()))?;
    let scores = g.batch_matmul(q, k, true)?;
    let weights = g.softmax(scores)?;
    let ctx = g.batch_matmul(weights, v, false)?;
    let ctx = g.merge_heads(ctx, cfg.n_heads)?;
    linear(g, p, ctx, &format!("{pre}.out"))
}

fn residual_norm<F: Scalar>(g: &mut Graph<F>, p: &ParamStore<F>, cfg: &ModelConfig, x: NodeId, sub: NodeId, name: &str) -> Result<NodeId> {
    let sum = g.add(x, sub)?;
    let gain = g.param_from(p, &format!("{name}.gain"))?;
    let bias = g.param_from(p, &format!("{name}.bias"))?;
    g.layer_norm(sum, gain, bias, F::from_f64(cfg.layer_norm_eps))
}

/// `[B, T, H] → [B, T, d_model]`.
pub fn encode<F: Scalar>(g: &mut Graph<F>, params: &ParamStore<F>, cfg: &ModelConfig, features: NodeId, mode: Mode) -> Result<NodeId> {
    let s = g.shape(features).to_vec();
    if s.len() != 3 || s[2] != cfg.input_dim {
        return Err(TensorError::Shape { op: "encode", lhs: s, rhs: vec![0, 0, cfg.input_dim] });
    }
    // Dropout sits on the embedding sum and on each sub-layer output before
    // its residual connection.
    let drop = Dropper { rate: cfg.dropout, seed: mode.dropout_seed };
    let mut x = linear(g, params, features, "input")?;
    if cfg.positional_encoding {
        let pe = g.input(positional_encoding(s[1], cfg.d_model))?;
        x = g.add_trailing(x, pe)?;
    }
    x = drop.apply(g, x, usize::MAX, 0)?;
    for layer in 0..cfg.n_layers {
        let a = attention(g, params, cfg, x, layer)?;
        let a = drop.apply(g, a, layer, 1)?;
        x = residual_norm(g, params, cfg, x, a, &format!("layers.{layer}.norm1"))?;

        let h = linear(g, params, x, &format!("layers.{layer}.ffn.in"))?;
        let h = match cfg.activation {
            Activation::Relu => g.relu(h)?,
            Activation::Gelu => g.gelu(h)?,
        };
        let h = linear(g, params, h, &format!("layers.{layer}.ffn.out"))?;
        let h = drop.apply(g, h, layer, 3)?;
        x = residual_norm(g, params, cfg, x, h, &format!("layers.{layer}.norm2"))?;
    }
    Ok(x)
}

/// `[B, T, d_model] → [B, T, H]`.
pub fn reconstruct<F: Scalar>(g: &mut Graph<F>, params: &ParamStore<F>, encoded: NodeId) -> Result<NodeId> {
    linear(g, params, encoded, "recon")
}

/// Mean over time, then `[B, d_model] → [B, n_classes]`.
pub fn classify<F: Scalar>(g: &mut Graph<F>, params: &ParamStore<F>, encoded: NodeId) -> Result<NodeId> {
    if g.shape(encoded).len() != 3 {
        return Err(TensorError::Shape { op: "classify", lhs: g.shape(encoded).to_vec(), rhs: vec![0, 0, 0] });
    }
    let pooled = g.mean(encoded, 1)?;
    linear(g, params, pooled, "cls")
}

/// Stacks equally shaped `T × H` matrices (row-major `f64`) into a
/// `[B, T, H]` tensor.
pub fn batch_tensor<F: Scalar>(frames: usize, channels: usize, items: &[&[f64]]) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(items.len() * frames * channels);
    for it in items {
        if it.len() != frames * channels {
            return Err(TensorError::Shape { op: "batch", lhs: vec![it.len()], rhs: vec![frames, channels] });
        }
        data.extend(it.iter().map(|&v| F::from_f64(v)));
    }
    Tensor::new(vec![items.len(), frames, channels], data)
}

/// Eval-mode logits for a batch, as `[B][n_classes]`.
pub fn predict_logits<F: Scalar>(params: &ParamStore<F>, cfg: &ModelConfig, batch: Tensor<F>) -> Result<Vec<Vec<F>>> {
    let mut g = Graph::new();
    let x = g.input(batch)?;
    let enc = encode(&mut g, params, cfg, x, Mode::EVAL)?;
    let logits = classify(&mut g, params, enc)?;
    Ok(g.value(logits).data().chunks(cfg.n_classes).map(<[F]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_input(b: usize, t: usize, h: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![b, t, h], |_| rng.random_range(-1.0..1.0))
    }

    fn run(params: &ParamStore<f64>, cfg: &ModelConfig, x: Tensor<f64>) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut g = Graph::new();
        let xi = g.input(x).unwrap();
        let enc = encode(&mut g, params, cfg, xi, Mode::EVAL).unwrap();
        let rec = reconstruct(&mut g, params, enc).unwrap();
        let cls = classify(&mut g, params, enc).unwrap();
        (g.value(enc).clone(), g.value(rec).clone(), g.value(cls).clone())
    }

    #[test]
    fn position_code_values() {
        let pe = positional_encoding::<f64>(50, 16);
        for c in 0..16 {
            assert_eq!(pe.data()[c], if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!((pe.data()[16] - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn shapes_through_both_heads() {
        let cfg = ModelConfig::tiny();
        let p = init_params::<f64>(&cfg, 1, HeadInit::Xavier).unwrap();
        let (enc, rec, cls) = run(&p, &cfg, random_input(3, 5, 8, 2));
        assert_eq!(enc.shape(), &[3, 5, 16]);
        assert_eq!(rec.shape(), &[3, 5, 8]);
        assert_eq!(cls.shape(), &[3, 2]);
    }

    #[test]
    fn names_are_unique_and_cover_the_config() {
        let cfg = ModelConfig::desk();
        let shapes = cfg.param_shapes();
        let p = init_params::<f32>(&cfg, 0, HeadInit::Xavier).unwrap();
        assert_eq!(p.len(), shapes.len());
        assert!(p.iter().all(|(_, t)| t.all_finite()));
    }

    #[test]
    fn zero_reconstruction_weights_emit_the_bias() {
        let cfg = ModelConfig::tiny();
        let mut p = init_params::<f64>(&cfg, 1, HeadInit::Zero).unwrap();
        let bias: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        p.insert("recon.bias", Tensor::new(vec![8], bias.clone()).unwrap());
        p.insert("cls.bias", Tensor::new(vec![2], vec![0.25, -1.0]).unwrap());
        let (_, rec, cls) = run(&p, &cfg, random_input(2, 5, 8, 3));
        for frame in rec.data().chunks(8) {
            assert_eq!(frame, bias.as_slice());
        }
        assert_eq!(cls.data(), &[0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn classify_ignores_frame_order_of_encodings() {
        let cfg = ModelConfig::tiny();
        let p = init_params::<f64>(&cfg, 4, HeadInit::Xavier).unwrap();
        let enc = random_input(2, 6, 16, 5);
        let mut perm = enc.data().to_vec();
        for b in 0..2 {
            for t in 0..6 {
                let src = (b * 6 + (t + 2) % 6) * 16;
                perm[(b * 6 + t) * 16..(b * 6 + t + 1) * 16].copy_from_slice(&enc.data()[src..src + 16]);
            }
        }
        let logits = |data: Vec<f64>| {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![2, 6, 16], data).unwrap()).unwrap();
            let c = classify(&mut g, &p, x).unwrap();
            g.value(c).data().to_vec()
        };
        let (a, b) = (logits(enc.data().to_vec()), logits(perm));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn permute_frames(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
        let (b, t, h) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ti in 0..t {
                let src = (bi * t + perm[ti]) * h;
                out[(bi * t + ti) * h..(bi * t + ti + 1) * h].copy_from_slice(&x.data()[src..src + h]);
            }
        }
        Tensor::new(vec![b, t, h], out).unwrap()
    }

    #[test]
    fn position_code_breaks_permutation_equivariance() {
        let cfg = ModelConfig::tiny();
        let p = init_params::<f64>(&cfg, 6, HeadInit::Xavier).unwrap();
        let x = random_input(1, 5, 8, 7);
        let perm = [3, 0, 4, 1, 2];
        let (enc, _, _) = run(&p, &cfg, x.clone());
        let (enc_p, _, _) = run(&p, &cfg, permute_frames(&x, &perm));
        let diff = permute_frames(&enc, &perm).data().iter().zip(enc_p.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-3, "max diff {diff}");
    }

    #[test]
    fn attention_without_position_code_is_equivariant() {
        let cfg = ModelConfig { positional_encoding: false, ..ModelConfig::tiny() };
        let p = init_params::<f64>(&cfg, 8, HeadInit::Xavier).unwrap();
        let x = random_input(2, 5, 8, 9);
        let perm = [3, 0, 4, 1, 2];
        let (enc, _, _) = run(&p, &cfg, x.clone());
        let (enc_p, _, _) = run(&p, &cfg, permute_frames(&x, &perm));
        let diff = permute_frames(&enc, &perm).data().iter().zip(enc_p.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let cfg = ModelConfig::tiny();
        let p = init_params::<f64>(&cfg, 1, HeadInit::Xavier).unwrap();
        let mut g = Graph::new();
        let x = g.input(random_input(1, 5, 7, 0)).unwrap();
        let err = encode(&mut g, &p, &cfg, x, Mode::EVAL).unwrap_err().to_string();
        assert!(err.contains("[1, 5, 7]"), "{err}");
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let cfg = ModelConfig { dropout: 0.3, ..ModelConfig::tiny() };
        let p = init_params::<f64>(&cfg, 1, HeadInit::Xavier).unwrap();
        let x = random_input(1, 5, 8, 1);
        let fwd = |mode: Mode| {
            let mut g = Graph::new();
            let xi = g.input(x.clone()).unwrap();
            let e = encode(&mut g, &p, &cfg, xi, mode).unwrap();
            g.value(e).data().to_vec()
        };
        assert_eq!(fwd(Mode::EVAL), fwd(Mode::EVAL));
        assert_eq!(fwd(Mode::train(3)), fwd(Mode::train(3)));
        assert_ne!(fwd(Mode::train(3)), fwd(Mode::EVAL));
        assert_ne!(fwd(Mode::train(3)), fwd(Mode::train(4)));
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ModelConfig::desk();
        let text = cfg.to_toml();
        assert!(text.contains("version = 1"));
        assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg);
        assert!(ModelConfig::from_toml(&text.replace("version = 1", "version = 9")).is_err());
        assert!(ModelConfig { n_heads: 3, ..cfg }.validate().is_err());
    }

    #[test]
    fn head_reset_touches_only_the_classifier() {
        let cfg = ModelConfig::tiny();
        let a = init_params::<f32>(&cfg, 1, HeadInit::Xavier).unwrap();
        let mut b = a.clone();
        reset_classifier(&mut b, &cfg, 2, HeadInit::Zero);
        for (name, t) in a.iter() {
            if name.starts_with("cls.") {
                assert!(b.get(name).unwrap().data().iter().all(|v| *v == 0.0));
            } else {
                assert_eq!(b.get(name), Some(t));
            }
        }
    }
}
