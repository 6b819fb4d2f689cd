use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::graph::{Gradients, Graph, Var};
use super::params::{fan_in_uniform, trunc_normal, ParamStore};
use crate::error::{Error, Result};
use crate::masking::MaskLocation;
use crate::rng::{stream_rng, Stream};
use crate::signal::FrameSequence;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// Parameter name prefixes that make up the backbone (encoder, positional
/// encoder and Transformer).
pub const BACKBONE_PREFIXES: [&str; 3] = ["enc.", "pos.", "tf."];

pub fn is_backbone(name: &str) -> bool {
    BACKBONE_PREFIXES.iter().any(|p| name.starts_with(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierHead {
    /// Two fully connected layers with a GeLU in between.
    Mlp { hidden: usize },
    /// A single linear layer (linear probe).
    Linear,
}

impl Default for ClassifierHead {
    fn default() -> Self {
        ClassifierHead::Mlp { hidden: 64 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Average the frame outputs and emit one prediction per sequence.
    #[default]
    Mean,
    /// One prediction per frame.
    PerFrame,
}

/// Mask to apply inside a forward pass.
#[derive(Debug, Clone)]
pub struct MaskSpec {
    pub masked: Vec<bool>,
    pub location: MaskLocation,
    /// Replacement rows, `[S, d]` at the embeddings or `[S, C*N]` at the
    /// inputs. `None` selects the learnable `mask_token` parameter.
    pub fill: Option<Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneOut {
    /// Encoder outputs before masking, `[S, d]`.
    pub embeddings: Var,
    /// Transformer outputs, `[S, d]`.
    pub outputs: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

fn linear_params<R: Rng + ?Sized>(p: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) {
    p.insert(format!("{name}.weight"), trunc_normal(&[out, inp], INIT_STD, rng));
    p.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
}

fn ln_params(p: &mut ParamStore, name: &str, dim: usize) {
    p.insert(format!("{name}.gamma"), Tensor::ones(&[dim]));
    p.insert(format!("{name}.beta"), Tensor::zeros(&[dim]));
}

impl Model {
    /// Build a backbone with freshly initialized weights drawn from the
    /// `Init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0, 0);
        let mut p = ParamStore::new();
        let mut cin = config.encoder.in_channels;
        for (i, layer) in config.encoder.layers.iter().enumerate() {
            let shape = [layer.out_channels, cin, layer.kernel];
            p.insert(format!("enc.{i}.conv.weight"), fan_in_uniform(&shape, cin * layer.kernel, &mut rng));
            p.insert(format!("enc.{i}.conv.bias"), Tensor::zeros(&[layer.out_channels]));
            if layer.layer_norm {
                ln_params(&mut p, &format!("enc.{i}.ln"), layer.out_channels);
            }
            cin = layer.out_channels;
        }
        let d = config.transformer.model_dim;
        let pc = &config.positional;
        let cin_g = d / pc.groups;
        p.insert("pos.conv.weight", fan_in_uniform(&[d, cin_g, pc.kernel], cin_g * pc.kernel, &mut rng));
        p.insert("pos.conv.bias", Tensor::zeros(&[d]));
        ln_params(&mut p, "pos.ln", d);
        let ff = config.transformer.ff_dim;
        for b in 0..config.transformer.blocks {
            ln_params(&mut p, &format!("tf.{b}.ln1"), d);
            for proj in ["q", "k", "v", "o"] {
                linear_params(&mut p, &format!("tf.{b}.attn.{proj}"), d, d, &mut rng);
            }
            ln_params(&mut p, &format!("tf.{b}.ln2"), d);
            linear_params(&mut p, &format!("tf.{b}.ff1"), d, ff, &mut rng);
            linear_params(&mut p, &format!("tf.{b}.ff2"), ff, d, &mut rng);
        }
        ln_params(&mut p, "tf.ln_f", d);
        Ok(Self { config, params: p })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Model::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        name.clone(),
                        format!("expected {:?}, found {:?}", t.shape(), p.shape()),
                    ))
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.transformer.model_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn add_projection_head<R: Rng + ?Sized>(&mut self, out_dim: usize, rng: &mut R) {
        let d = self.dim();
        linear_params(&mut self.params, "head.proj", d, out_dim, rng);
    }

    /// Add a learnable mask token sized for `location`.
    pub fn add_mask_token<R: Rng + ?Sized>(&mut self, location: MaskLocation, rng: &mut R) {
        let dim = match location {
            MaskLocation::Embeddings => self.dim(),
            MaskLocation::Inputs => self.config.encoder.in_channels * self.config.frame_len,
        };
        self.params.insert("mask_token", trunc_normal(&[dim], INIT_STD, rng));
    }

    /// Replace any classifier with a freshly initialized one.
    pub fn add_classifier<R: Rng + ?Sized>(&mut self, head: ClassifierHead, classes: usize, rng: &mut R) {
        self.params.remove_prefix("cls.");
        let d = self.dim();
        match head {
            ClassifierHead::Mlp { hidden } => {
                linear_params(&mut self.params, "cls.fc1", d, hidden, rng);
                linear_params(&mut self.params, "cls.fc2", hidden, classes, rng);
            }
            ClassifierHead::Linear => linear_params(&mut self.params, "cls.fc", d, classes, rng),
        }
    }

    pub fn classifier_head(&self) -> Option<ClassifierHead> {
        if let Some(w) = self.params.get("cls.fc1.weight") {
            Some(ClassifierHead::Mlp { hidden: w.shape()[0] })
        } else if self.params.contains("cls.fc.weight") {
            Some(ClassifierHead::Linear)
        } else {
            None
        }
    }

    /// Drop every non-backbone parameter.
    pub fn strip_heads(&mut self) {
        self.params.retain(is_backbone);
    }

    /// SHA-256 of the backbone weights.
    pub fn backbone_digest(&self) -> String {
        self.params.digest(is_backbone)
    }

    /// Start a forward pass. Parameters selected by `trainable` become
    /// gradient leaves; a `dropout` generator switches on training mode.
    pub fn session<'a>(&'a self, trainable: &'a dyn Fn(&str) -> bool, dropout: Option<ChaCha8Rng>) -> Session<'a> {
        Session {
            graph: Graph::new(),
            model: self,
            bound: BTreeMap::new(),
            trainable,
            dropout,
        }
    }

    /// Transformer outputs `[S, d]` for an unmasked sequence in evaluation mode.
    pub fn embed(&self, seq: &FrameSequence) -> Result<Tensor> {
        let none = |_: &str| false;
        let mut s = self.session(&none, None);
        let x = s.frames(seq)?;
        let out = s.backbone(x, None)?;
        Ok(s.graph.value(out.outputs).clone())
    }
}

pub struct Session<'a> {
    pub graph: Graph,
    model: &'a Model,
    bound: BTreeMap<String, Var>,
    trainable: &'a dyn Fn(&str) -> bool,
    dropout: Option<ChaCha8Rng>,
}

impl Session<'_> {
    /// The graph leaf for parameter `name`, created on first use.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .model
            .params
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?
            .clone();
        let v = if (self.trainable)(name) {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Frames as a constant `[S, C, N]` input.
    pub fn frames(&mut self, seq: &FrameSequence) -> Result<Var> {
        let cfg = self.model.config();
        if seq.channels() != cfg.encoder.in_channels || seq.frame_len() != cfg.frame_len {
            return Err(Error::shape(
                "input",
                format!(
                    "frames are {}x{}, model expects {}x{}",
                    seq.channels(),
                    seq.frame_len(),
                    cfg.encoder.in_channels,
                    cfg.frame_len
                ),
            ));
        }
        let t = Tensor::new(vec![seq.len(), seq.channels(), seq.frame_len()], seq.as_slice().to_vec())?;
        Ok(self.graph.constant(t))
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.graph.shape(x).to_vec();
        let keep = 1.0 / (1.0 - rate);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.graph.mul_const(x, Tensor::new(shape, data)?)
    }

    /// `x W^T + b` for a `[out, in]` weight.
    pub fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        let y = self.graph.matmul_bt(x, w)?;
        self.graph.add_bias(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.p(&format!("{name}.gamma"))?;
        let b = self.p(&format!("{name}.beta"))?;
        self.graph.layer_norm(x, g, b)
    }

    /// Encode `[B, C, N]` frames into `[B, d]` embeddings.
    pub fn encode(&mut self, x: Var) -> Result<Var> {
        let cfg = &self.model.config.encoder;
        let last = cfg.layers.len() - 1;
        let mut h = x;
        for (i, layer) in cfg.layers.iter().enumerate() {
            let w = self.p(&format!("enc.{i}.conv.weight"))?;
            let b = self.p(&format!("enc.{i}.conv.bias"))?;
            h = self.graph.conv1d(h, w, Some(b), layer.stride, layer.padding, 1)?;
            if layer.layer_norm {
                let t = self.graph.permute021(h)?;
                let t = self.layer_norm(t, &format!("enc.{i}.ln"))?;
                h = self.graph.permute021(t)?;
            }
            h = self.graph.gelu(h);
            if i == last {
                if let Some(k) = cfg.pool_kernel {
                    h = self.graph.avg_pool(h, k)?;
                }
            }
            h = self.dropout(h, cfg.dropout)?;
        }
        let shape = self.graph.shape(h).to_vec();
        if shape[2] != 1 {
            return Err(Error::shape("encoder", format!("output length {} instead of 1", shape[2])));
        }
        self.graph.reshape(h, &[shape[0], shape[1]])
    }

    /// `z + LN(GeLU(conv(z)))` with a grouped "same" convolution over time.
    pub fn positional(&mut self, z: Var) -> Result<Var> {
        let pc = &self.model.config.positional;
        let (kernel, groups) = (pc.kernel, pc.groups);
        let (s, d) = (self.graph.shape(z)[0], self.graph.shape(z)[1]);
        let t = self.graph.transpose(z)?;
        let t = self.graph.reshape(t, &[1, d, s])?;
        let w = self.p("pos.conv.weight")?;
        let b = self.p("pos.conv.bias")?;
        let c = self.graph.conv1d(t, w, Some(b), 1, kernel / 2, groups)?;
        let c = self.graph.reshape(c, &[d, s])?;
        let c = self.graph.transpose(c)?;
        let c = self.graph.gelu(c);
        let c = self.layer_norm(c, "pos.ln")?;
        self.graph.add(z, c)
    }

    fn attention(&mut self, h: Var, block: usize) -> Result<Var> {
        let tc = &self.model.config.transformer;
        let (heads, d) = (tc.heads, tc.model_dim);
        let dh = d / heads;
        let q = self.linear(h, &format!("tf.{block}.attn.q"))?;
        let k = self.linear(h, &format!("tf.{block}.attn.k"))?;
        let v = self.linear(h, &format!("tf.{block}.attn.v"))?;
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = self.graph.slice_cols(q, i * dh, dh)?;
            let kh = self.graph.slice_cols(k, i * dh, dh)?;
            let vh = self.graph.slice_cols(v, i * dh, dh)?;
            let scores = self.graph.matmul_bt(qh, kh)?;
            let scores = self.graph.scale(scores, 1.0 / (dh as f64).sqrt());
            let probs = self.graph.softmax(scores);
            outs.push(self.graph.matmul(probs, vh)?);
        }
        let cat = self.graph.concat_cols(&outs)?;
        self.linear(cat, &format!("tf.{block}.attn.o"))
    }

    /// Pre-norm Transformer over `[S, d]`, followed by a final layer norm.
    pub fn transformer(&mut self, z: Var) -> Result<Var> {
        let tc = &self.model.config.transformer;
        let (blocks, rate) = (tc.blocks, tc.dropout);
        let mut x = z;
        for b in 0..blocks {
            let h = self.layer_norm(x, &format!("tf.{b}.ln1"))?;
            let a = self.attention(h, b)?;
            let a = self.dropout(a, rate)?;
            x = self.graph.add(x, a)?;
            let h = self.layer_norm(x, &format!("tf.{b}.ln2"))?;
            let f = self.linear(h, &format!("tf.{b}.ff1"))?;
            let f = self.graph.gelu(f);
            let f = self.linear(f, &format!("tf.{b}.ff2"))?;
            let f = self.dropout(f, rate)?;
            x = self.graph.add(x, f)?;
            if !self.graph.value(x).is_finite() {
                return Err(Error::NonFinite(format!("transformer block {b} output")));
            }
        }
        self.layer_norm(x, "tf.ln_f")
    }

    fn mask_fill(&mut self, spec: &MaskSpec, rows: usize, dim: usize) -> Result<Var> {
        match &spec.fill {
            Some(t) => {
                if t.shape() != [rows, dim] {
                    return Err(Error::shape("mask fill", format!("{:?}, expected [{rows}, {dim}]", t.shape())));
                }
                Ok(self.graph.constant(t.clone()))
            }
            None => {
                let tok = self.p("mask_token").map_err(|_| Error::MissingMaskToken)?;
                if self.graph.value(tok).len() != dim {
                    return Err(Error::shape("mask_token", format!("{} values, rows have {dim}", self.graph.value(tok).len())));
                }
                Ok(self.graph.broadcast_rows(tok, rows))
            }
        }
    }

    /// Full backbone over one sequence of frames `[S, C, N]`, optionally
    /// masking at the inputs or at the embeddings.
    pub fn backbone(&mut self, x: Var, mask: Option<&MaskSpec>) -> Result<BackboneOut> {
        let shape = self.graph.shape(x).to_vec();
        let s = shape[0];
        if let Some(m) = mask {
            if m.masked.len() != s {
                return Err(Error::shape("mask", format!("{} flags for {s} frames", m.masked.len())));
            }
        }
        let input = match mask {
            Some(m) if m.location == MaskLocation::Inputs => {
                let flat = self.graph.reshape(x, &[s, shape[1] * shape[2]])?;
                let fill = self.mask_fill(m, s, shape[1] * shape[2])?;
                let sel = self.graph.row_select(flat, fill, &m.masked)?;
                self.graph.reshape(sel, &shape)?
            }
            _ => x,
        };
        let embeddings = self.encode(input)?;
        let z = match mask {
            Some(m) if m.location == MaskLocation::Embeddings => {
                let d = self.graph.shape(embeddings)[1];
                let fill = self.mask_fill(m, s, d)?;
                self.graph.row_select(embeddings, fill, &m.masked)?
            }
            _ => embeddings,
        };
        let z = self.positional(z)?;
        let outputs = self.transformer(z)?;
        Ok(BackboneOut { embeddings, outputs })
    }

    pub fn projection(&mut self, y: Var) -> Result<Var> {
        self.linear(y, "head.proj")
    }

    /// Class logits, `[1, K]` for mean pooling or `[S, K]` per frame.
    pub fn classify(&mut self, y: Var, pooling: Pooling) -> Result<Var> {
        let h = match pooling {
            Pooling::Mean => self.graph.mean_rows(y)?,
            Pooling::PerFrame => y,
        };
        match self.model.classifier_head() {
            Some(ClassifierHead::Mlp { .. }) => {
                let h = self.linear(h, "cls.fc1")?;
                let h = self.graph.gelu(h);
                self.linear(h, "cls.fc2")
            }
            Some(ClassifierHead::Linear) => self.linear(h, "cls.fc"),
            None => Err(Error::InvalidConfig("model has no classifier head".into())),
        }
    }

    /// Gradients of every trainable parameter used in the pass.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let mut g: Gradients = self.graph.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if (self.trainable)(name) {
                if let Some(t) = g.take(v) {
                    out.insert(name.clone(), t);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{frame_signal, FrameConfig, Signal};

    fn tiny() -> ModelConfig {
        ModelConfig::tiny(2, 32, 8).unwrap()
    }

    fn seq(len: usize, seed: u64) -> FrameSequence {
        let mut rng = stream_rng(seed, Stream::Synth, 0, 0);
        let data: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let sig = Signal::from_channels(data, 100.0).unwrap();
        frame_signal(&sig, FrameConfig::new(32, 16).unwrap()).unwrap()
    }

    #[test]
    fn init_is_seeded_and_conventional() {
        let a = Model::new(tiny(), 5).unwrap();
        let b = Model::new(tiny(), 5).unwrap();
        let c = Model::new(tiny(), 6).unwrap();
        assert_eq!(a.backbone_digest(), b.backbone_digest());
        assert_ne!(a.backbone_digest(), c.backbone_digest());
        let p = a.params();
        assert!(p.get("tf.0.ln1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("tf.0.ln1.beta").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("tf.1.ff1.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let w = p.get("tf.0.attn.q.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.04 + 1e-12));
        let conv = p.get("enc.0.conv.weight").unwrap();
        let bound = 1.0 / ((2 * 8) as f64).sqrt();
        assert!(conv.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn forward_shapes() {
        let mut m = Model::new(tiny(), 1).unwrap();
        let mut rng = stream_rng(1, Stream::Init, 1, 0);
        m.add_projection_head(22, &mut rng);
        m.add_classifier(ClassifierHead::Mlp { hidden: 6 }, 3, &mut rng);
        let s = seq(200, 0);
        let all = |_: &str| true;
        let mut sess = m.session(&all, None);
        let x = sess.frames(&s).unwrap();
        let out = sess.backbone(x, None).unwrap();
        assert_eq!(sess.graph.shape(out.embeddings), &[s.len(), 8]);
        assert_eq!(sess.graph.shape(out.outputs), &[s.len(), 8]);
        let proj = sess.projection(out.outputs).unwrap();
        assert_eq!(sess.graph.shape(proj), &[s.len(), 22]);
        let logits = sess.classify(out.outputs, Pooling::Mean).unwrap();
        assert_eq!(sess.graph.shape(logits), &[1, 3]);
        let per = sess.classify(out.outputs, Pooling::PerFrame).unwrap();
        assert_eq!(sess.graph.shape(per), &[s.len(), 3]);
    }

    #[test]
    fn embedding_mask_only_changes_masked_rows_before_context() {
        let m = Model::new(tiny(), 2).unwrap();
        let s = seq(160, 1);
        let none = |_: &str| false;
        let mut sess = m.session(&none, None);
        let x = sess.frames(&s).unwrap();
        let mut masked = vec![false; s.len()];
        masked[2] = true;
        let spec = MaskSpec {
            masked: masked.clone(),
            location: MaskLocation::Embeddings,
            fill: Some(Tensor::ones(&[s.len(), 8])),
        };
        let a = sess.backbone(x, Some(&spec)).unwrap();
        let b = sess.backbone(x, None).unwrap();
        assert_eq!(sess.graph.value(a.embeddings), sess.graph.value(b.embeddings));
        assert_ne!(sess.graph.value(a.outputs), sess.graph.value(b.outputs));
    }

    #[test]
    fn learnable_token_needs_parameter() {
        let mut m = Model::new(tiny(), 2).unwrap();
        let s = seq(160, 1);
        let spec = MaskSpec {
            masked: vec![true; s.len()],
            location: MaskLocation::Inputs,
            fill: None,
        };
        {
            let none = |_: &str| false;
            let mut sess = m.session(&none, None);
            let x = sess.frames(&s).unwrap();
            assert!(matches!(sess.backbone(x, Some(&spec)), Err(Error::MissingMaskToken)));
        }
        m.add_mask_token(MaskLocation::Inputs, &mut stream_rng(0, Stream::Init, 2, 0));
        let all = |_: &str| true;
        let mut sess = m.session(&all, None);
        let x = sess.frames(&s).unwrap();
        let out = sess.backbone(x, Some(&spec)).unwrap();
        let mean = sess.graph.mean_rows(out.outputs).unwrap();
        let sq = sess.graph.mul(mean, mean).unwrap();
        let sq = sess.graph.reshape(sq, &[1, 8]).unwrap();
        let ones = sess.graph.constant(Tensor::ones(&[1, 8]));
        let loss = sess.graph.matmul_bt(sq, ones).unwrap();
        let loss = sess.graph.reshape(loss, &[1]).unwrap();
        let g = sess.gradients(loss).unwrap();
        assert!(g.contains_key("mask_token"));
        assert!(g.get("mask_token").unwrap().data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut m = Model::new(tiny(), 3).unwrap();
        m.add_classifier(ClassifierHead::Linear, 2, &mut stream_rng(0, Stream::Init, 3, 0));
        let s = seq(120, 2);
        let heads = |n: &str| !is_backbone(n);
        let mut sess = m.session(&heads, None);
        let x = sess.frames(&s).unwrap();
        let out = sess.backbone(x, None).unwrap();
        let logits = sess.classify(out.outputs, Pooling::Mean).unwrap();
        let loss = sess.graph.cross_entropy(logits, &[1], &[1.0]).unwrap();
        let g = sess.gradients(loss).unwrap();
        assert!(g.keys().all(|k| k.starts_with("cls.")));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let mut cfg = tiny();
        cfg.transformer.dropout = 0.5;
        let m = Model::new(cfg, 4).unwrap();
        let s = seq(120, 3);
        let a = m.embed(&s).unwrap();
        let b = m.embed(&s).unwrap();
        assert_eq!(a, b);
        let none = |_: &str| false;
        let mut sess = m.session(&none, Some(stream_rng(0, Stream::Dropout, 0, 0)));
        let x = sess.frames(&s).unwrap();
        let out = sess.backbone(x, None).unwrap();
        assert_ne!(sess.graph.value(out.outputs), &a);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let m = Model::new(tiny(), 0).unwrap();
        let mut p = m.params().clone();
        assert!(Model::from_parts(tiny(), p.clone()).is_ok());
        p.insert("tf.0.ff1.bias", Tensor::zeros(&[3]));
        assert!(Model::from_parts(tiny(), p.clone()).is_err());
        p.remove_prefix("tf.0.ff1");
        assert!(Model::from_parts(tiny(), p).is_err());
    }
}
