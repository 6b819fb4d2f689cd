//! Signals, framing, per-sequence normalization and length adjustment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multi-channel sampled waveform, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    channels: usize,
    len: usize,
    sample_rate: f64,
    data: Vec<f64>,
}

impl Signal {
    /// Build from per-channel sample vectors. All channels must share a length.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidSignal("signal needs at least one channel".into()));
        }
        let len = channels[0].len();
        if let Some(c) = channels.iter().position(|ch| ch.len() != len) {
            return Err(Error::InvalidSignal(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                channels[c].len()
            )));
        }
        let n = channels.len();
        Self::new(n, sample_rate, channels.into_iter().flatten().collect())
    }

    /// Build from channel-major data (`data[c * len + t]`).
    pub fn new(channels: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidSignal("signal needs at least one channel".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidSignal(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if data.len() % channels != 0 {
            return Err(Error::InvalidSignal(format!(
                "{} samples do not split into {channels} channels",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!(
                "non-finite sample at channel {}, index {}",
                i / (data.len() / channels),
                i % (data.len() / channels)
            )));
        }
        Ok(Self {
            channels,
            len: data.len() / channels,
            sample_rate,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// Samples per frame.
    pub frame_len: usize,
    /// Samples between consecutive frame starts.
    pub hop: usize,
}

impl FrameConfig {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self { frame_len, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "frame_len must be at least 2, got {}",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must be in 1..={}, got {}",
                self.frame_len, self.hop
            )));
        }
        Ok(())
    }

    /// Number of whole frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

/// `S` frames of `C` channels by `N` samples, laid out `[S][C][N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<f64>,
    n_frames: usize,
    channels: usize,
    config: FrameConfig,
    starts: Vec<usize>,
    source_id: Option<String>,
}

impl FrameSequence {
    /// Assemble from raw `[S][C][N]` data, e.g. frames read back from disk.
    pub fn from_raw(
        frames: Vec<f64>,
        n_frames: usize,
        channels: usize,
        config: FrameConfig,
    ) -> Result<Self> {
        config.validate()?;
        if frames.len() != n_frames * channels * config.frame_len {
            return Err(Error::shape(
                "frame sequence",
                format!(
                    "{} values for {n_frames} frames x {channels} channels x {} samples",
                    frames.len(),
                    config.frame_len
                ),
            ));
        }
        Ok(Self {
            frames,
            n_frames,
            channels,
            config,
            starts: (0..n_frames).map(|n| n * config.hop).collect(),
            source_id: None,
        })
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame_len(&self) -> usize {
        self.config.frame_len
    }

    pub fn config(&self) -> FrameConfig {
        self.config
    }

    pub fn source_id(&self) -> Option<&str> {
        self.source_id.as_deref()
    }

    /// Sample offset of frame `n` in the source signal.
    pub fn start(&self, n: usize) -> usize {
        self.starts[n]
    }

    /// All channels of frame `n`, channel-major.
    pub fn frame(&self, n: usize) -> &[f64] {
        let w = self.channels * self.config.frame_len;
        &self.frames[n * w..(n + 1) * w]
    }

    pub fn frame_channel(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.channels + c) * self.config.frame_len;
        &self.frames[start..start + self.config.frame_len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.frames
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.frames
    }
}

/// Cut `signal` into frames of `config.frame_len` samples, one every
/// `config.hop` samples. Trailing samples that do not fill a frame are dropped.
pub fn frame_signal(signal: &Signal, config: FrameConfig) -> Result<FrameSequence> {
    config.validate()?;
    let (len, n) = (signal.len(), config.frame_len);
    if len < n {
        return Err(Error::SignalTooShort { len, frame_len: n });
    }
    let s = config.frame_count(len);
    let c = signal.channels();
    let mut frames = Vec::with_capacity(s * c * n);
    let mut starts = Vec::with_capacity(s);
    for f in 0..s {
        let start = f * config.hop;
        starts.push(start);
        for ch in 0..c {
            frames.extend_from_slice(&signal.channel(ch)[start..start + n]);
        }
    }
    Ok(FrameSequence {
        frames,
        n_frames: s,
        channels: c,
        config,
        starts,
        source_id: None,
    })
}

/// Per-channel z-score normalization with population statistics. A constant
/// channel is only mean-shifted, which yields all zeros.
pub fn znormalize(signal: &Signal) -> Signal {
    let mut data = Vec::with_capacity(signal.data.len());
    for c in 0..signal.channels {
        let x = signal.channel(c);
        let (mean, var) = mean_var(x);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        data.extend(x.iter().map(|v| (v - mean) / std));
    }
    Signal {
        data,
        ..signal.clone()
    }
}

/// Zero-pad at the end or keep the prefix so every channel has `target_len` samples.
pub fn pad_or_truncate(signal: &Signal, target_len: usize) -> Result<Signal> {
    if target_len == 0 {
        return Err(Error::InvalidConfig("target length must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(signal.channels * target_len);
    for c in 0..signal.channels {
        let x = signal.channel(c);
        let keep = x.len().min(target_len);
        data.extend_from_slice(&x[..keep]);
        data.extend(std::iter::repeat_n(0.0, target_len - keep));
    }
    Ok(Signal {
        len: target_len,
        data,
        ..signal.clone()
    })
}

/// Population mean and variance. The mean is accumulated relative to the
/// first sample so a constant input reproduces its value exactly.
pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let x0 = x[0];
    let mean = x0 + x.iter().map(|v| v - x0).sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}
