use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn yes() -> bool {
    true
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    #[serde(default = "yes")]
    pub layer_norm: bool,
}

impl ConvLayerConfig {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
            layer_norm: true,
        }
    }

    /// `floor((L + 2p - k) / s) + 1`, or `None` if the kernel does not fit.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }
}

/// Convolutional frame encoder: each layer is conv, optional layer norm over
/// channels, GeLU and dropout; an optional average pool precedes the last
/// dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub layers: Vec<ConvLayerConfig>,
    #[serde(default)]
    pub pool_kernel: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl EncoderConfig {
    /// Four-layer encoder for 30 ms speech frames at 16 kHz.
    pub fn speech() -> Self {
        Self {
            in_channels: 1,
            layers: vec![
                ConvLayerConfig::new(128, 10, 5, 3),
                ConvLayerConfig::new(128, 8, 4, 2),
                ConvLayerConfig::new(128, 4, 2, 1),
                ConvLayerConfig::new(128, 4, 2, 1),
            ],
            pool_kernel: Some(6),
            dropout: 0.1,
        }
    }

    /// Three-layer encoder for 4 s single-channel EEG frames at 100 Hz.
    pub fn eeg() -> Self {
        Self {
            in_channels: 1,
            layers: vec![
                ConvLayerConfig::new(128, 10, 5, 3),
                ConvLayerConfig::new(128, 8, 5, 2),
                ConvLayerConfig::new(128, 4, 3, 1),
            ],
            pool_kernel: Some(5),
            dropout: 0.1,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.out_channels)
    }

    /// Time length after each layer, followed by the pooled length when a
    /// pool is configured.
    pub fn output_lengths(&self, frame_len: usize) -> Result<Vec<usize>> {
        let mut lens = Vec::with_capacity(self.layers.len() + 1);
        let mut len = frame_len;
        for (i, layer) in self.layers.iter().enumerate() {
            len = layer.output_len(len).ok_or_else(|| {
                Error::shape(
                    format!("encoder layer {i}"),
                    format!("input length {len} too short for kernel {}", layer.kernel),
                )
            })?;
            lens.push(len);
        }
        if let Some(k) = self.pool_kernel {
            if k == 0 || len < k {
                return Err(Error::shape(
                    "encoder pool",
                    format!("length {len} shorter than pool kernel {k}"),
                ));
            }
            lens.push(len / k);
        }
        Ok(lens)
    }

    pub fn validate(&self, frame_len: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("encoder dropout must be in [0, 1)".into()));
        }
        let lens = self.output_lengths(frame_len)?;
        if lens.last() != Some(&1) {
            return Err(Error::shape(
                "encoder",
                format!("frames of {frame_len} samples reduce to lengths {lens:?}, expected a final length of 1"),
            ));
        }
        Ok(())
    }
}

/// Grouped temporal convolution over the embedding sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionalConfig {
    pub kernel: usize,
    pub groups: usize,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        Self {
            kernel: 25,
            groups: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            model_dim: 128,
            heads: 4,
            ff_dim: 512,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per frame the encoder is built for.
    pub frame_len: usize,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub positional: PositionalConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate(self.frame_len)?;
        let t = &self.transformer;
        if t.heads == 0 || t.model_dim % t.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by {} heads",
                t.model_dim, t.heads
            )));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(Error::InvalidConfig("transformer dropout must be in [0, 1)".into()));
        }
        if self.encoder.embedding_dim() != t.model_dim {
            return Err(Error::InvalidConfig(format!(
                "encoder emits {} channels but model_dim is {}",
                self.encoder.embedding_dim(),
                t.model_dim
            )));
        }
        let p = &self.positional;
        if p.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "positional kernel must be odd, got {}",
                p.kernel
            )));
        }
        if p.groups == 0 || t.model_dim % p.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by {} positional groups",
                t.model_dim, p.groups
            )));
        }
        Ok(())
    }

    /// A small configuration for `frame_len`-sample frames, suited to
    /// desk-scale experiments. Supports frame lengths of 32 and 64.
    pub fn tiny(channels: usize, frame_len: usize, dim: usize) -> Result<Self> {
        let layers = match frame_len {
            32 => vec![
                ConvLayerConfig::new(dim, 8, 4, 2),
                ConvLayerConfig::new(dim, 4, 2, 1),
            ],
            64 => vec![
                ConvLayerConfig::new(dim, 8, 4, 2),
                ConvLayerConfig::new(dim, 4, 2, 1),
                ConvLayerConfig::new(dim, 4, 2, 1),
            ],
            n => {
                return Err(Error::InvalidConfig(format!(
                    "no tiny encoder preset for {n}-sample frames"
                )))
            }
        };
        let cfg = Self {
            frame_len,
            encoder: EncoderConfig {
                in_channels: channels,
                layers,
                pool_kernel: Some(4),
                dropout: 0.0,
            },
            positional: PositionalConfig {
                kernel: 5,
                groups: 4.min(dim),
            },
            transformer: TransformerConfig {
                blocks: 2,
                model_dim: dim,
                heads: 2,
                ff_dim: 2 * dim,
                dropout: 0.0,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Index-arithmetic oracle: the last valid output position `t` satisfies
    /// `t * s - p + k - 1 <= L + p - 1`.
    fn count_positions(len: usize, k: usize, s: usize, p: usize) -> usize {
        let mut t = 0;
        while t * s + k <= len + 2 * p {
            t += 1;
        }
        t
    }

    #[test]
    fn speech_encoder_lengths() {
        let enc = EncoderConfig::speech();
        assert_eq!(enc.output_lengths(480).unwrap(), vec![96, 24, 12, 6, 1]);
        assert_eq!(enc.embedding_dim(), 128);
        enc.validate(480).unwrap();
    }

    #[test]
    fn eeg_encoder_lengths() {
        let enc = EncoderConfig::eeg();
        assert_eq!(enc.output_lengths(400).unwrap(), vec![80, 16, 5, 1]);
        enc.validate(400).unwrap();
    }

    #[test]
    fn conv_length_formula_matches_position_count() {
        for len in 1..200 {
            for k in 1..12 {
                for s in 1..6 {
                    for p in 0..4 {
                        let layer = ConvLayerConfig::new(1, k, s, p);
                        let expected = count_positions(len, k, s, p);
                        assert_eq!(layer.output_len(len).unwrap_or(0), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn encoder_must_reduce_to_single_step() {
        let enc = EncoderConfig::speech();
        let err = enc.validate(960).unwrap_err();
        assert!(err.to_string().contains("final length of 1"));
        let err = enc.output_lengths(4).unwrap_err();
        assert!(err.to_string().contains("encoder layer"));
    }

    #[test]
    fn model_config_validation() {
        let mut cfg = ModelConfig::tiny(2, 32, 16).unwrap();
        cfg.transformer.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny(2, 32, 16).unwrap();
        cfg.positional.kernel = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny(2, 32, 16).unwrap();
        cfg.transformer.model_dim = 32;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::tiny(1, 64, 8).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<PositionalConfig>(r#"{"kernel":3,"groups":1,"dilation":2}"#)
            .unwrap_err();
        assert!(err.to_string().contains("dilation"));
    }
}
