//! Per-frame statistical functionals used as pre-training targets.
//!
//! All moments use population (1/N) normalization, so `ACF(x, 0) == 1`.
//! A frame with zero variance is degenerate: its skewness, kurtosis and the
//! four autocorrelation moments are defined as 0.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{mean_var, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalId {
    Mean,
    Variance,
    Skewness,
    Kurtosis,
    Min,
    Max,
    Zcr,
    AcfMean,
    AcfVariance,
    AcfSkewness,
    AcfKurtosis,
}

impl FunctionalId {
    pub const ALL: [FunctionalId; 11] = [
        FunctionalId::Mean,
        FunctionalId::Variance,
        FunctionalId::Skewness,
        FunctionalId::Kurtosis,
        FunctionalId::Min,
        FunctionalId::Max,
        FunctionalId::Zcr,
        FunctionalId::AcfMean,
        FunctionalId::AcfVariance,
        FunctionalId::AcfSkewness,
        FunctionalId::AcfKurtosis,
    ];

    /// Stable serialization code.
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn uses_acf(self) -> bool {
        matches!(
            self,
            FunctionalId::AcfMean
                | FunctionalId::AcfVariance
                | FunctionalId::AcfSkewness
                | FunctionalId::AcfKurtosis
        )
    }
}

impl fmt::Display for FunctionalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Ordered, duplicate-free selection of functionals. The order fixes the
/// target-vector layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FunctionalId>", into = "Vec<FunctionalId>")]
pub struct FunctionalSet(Vec<FunctionalId>);

impl FunctionalSet {
    pub fn new(ids: Vec<FunctionalId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidConfig("functional set is empty".into()));
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::InvalidConfig(format!("functional {id} listed twice")));
            }
        }
        Ok(Self(ids))
    }

    pub fn full() -> Self {
        Self(FunctionalId::ALL.to_vec())
    }

    pub fn ids(&self) -> &[FunctionalId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, id: FunctionalId) -> Option<usize> {
        self.0.iter().position(|&f| f == id)
    }
}

impl Default for FunctionalSet {
    fn default() -> Self {
        Self::full()
    }
}

impl TryFrom<Vec<FunctionalId>> for FunctionalSet {
    type Error = Error;
    fn try_from(ids: Vec<FunctionalId>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<FunctionalSet> for Vec<FunctionalId> {
    fn from(set: FunctionalSet) -> Self {
        set.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalOptions {
    /// Include the lag-0 autocorrelation (always 1) in the ACF moments.
    #[serde(default)]
    pub include_lag0: bool,
}

/// Functional values for one frame, laid out functional-major:
/// `[f0 ch0, f0 ch1, ..., f1 ch0, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalVector {
    m: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FunctionalVector {
    pub fn new(m: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * channels {
            return Err(Error::shape(
                "functional vector",
                format!("{} values for {m} functionals x {channels} channels", values.len()),
            ));
        }
        Ok(Self { m, channels, values })
    }

    pub fn get(&self, functional: usize, channel: usize) -> f64 {
        self.values[functional * self.channels + channel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn functionals(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Zero-crossing rate: mean absolute difference of consecutive signs, with
/// `sgn(0) = 0`. Ranges over `[0, 2]`.
pub fn compute_zcr(frame: &[f64]) -> Result<f64> {
    if frame.len() < 2 {
        return Err(Error::FrameTooShort(frame.len()));
    }
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let total: f64 = frame
        .windows(2)
        .map(|w| f64::abs(sgn(w[1]) - sgn(w[0])))
        .sum();
    Ok(total / (frame.len() - 1) as f64)
}

/// Normalized autocorrelation for every lag `0..N`.
pub fn compute_acf(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.len() < 2 {
        return Err(Error::FrameTooShort(frame.len()));
    }
    let (mean, var) = mean_var(frame);
    if var == 0.0 {
        return Err(Error::DegenerateFrame);
    }
    Ok(acf_centered(frame, mean, var))
}

fn acf_centered(frame: &[f64], mean: f64, var: f64) -> Vec<f64> {
    let n = frame.len();
    let d: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    (0..n)
        .map(|tau| {
            let s: f64 = d[tau..].iter().zip(&d[..n - tau]).map(|(a, b)| a * b).sum();
            (s / (n - tau) as f64) / var
        })
        .collect()
}

/// Population mean, variance, skewness and (non-excess) kurtosis.
fn moments(x: &[f64]) -> [f64; 4] {
    let (mean, var) = mean_var(x);
    if var == 0.0 {
        return [mean, 0.0, 0.0, 0.0];
    }
    let n = x.len() as f64;
    let (mut m3, mut m4) = (0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m3, m4) = (m3 / n, m4 / n);
    [mean, var, m3 / (var * var.sqrt()), m4 / (var * var)]
}

/// Functionals of one channel of one frame, in `set` order.
pub fn channel_functionals(
    x: &[f64],
    set: &FunctionalSet,
    opts: FunctionalOptions,
) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::FrameTooShort(x.len()));
    }
    let [mean, var, skew, kurt] = moments(x);
    let acf_moments = if set.ids().iter().any(|f| f.uses_acf()) && var > 0.0 {
        let acf = acf_centered(x, mean, var);
        let lags = if opts.include_lag0 { &acf[..] } else { &acf[1..] };
        moments(lags)
    } else {
        [0.0; 4]
    };
    Ok(set
        .ids()
        .iter()
        .map(|f| match f {
            FunctionalId::Mean => mean,
            FunctionalId::Variance => var,
            FunctionalId::Skewness => skew,
            FunctionalId::Kurtosis => kurt,
            FunctionalId::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            FunctionalId::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            FunctionalId::Zcr => compute_zcr(x).unwrap_or(0.0),
            FunctionalId::AcfMean => acf_moments[0],
            FunctionalId::AcfVariance => acf_moments[1],
            FunctionalId::AcfSkewness => acf_moments[2],
            FunctionalId::AcfKurtosis => acf_moments[3],
        })
        .collect())
}

/// Functionals of a channel-major `C x N` frame.
pub fn compute_functionals(
    frame: &[f64],
    channels: usize,
    set: &FunctionalSet,
    opts: FunctionalOptions,
) -> Result<FunctionalVector> {
    if channels == 0 || frame.len() % channels != 0 {
        return Err(Error::shape(
            "functionals",
            format!("{} samples do not split into {channels} channels", frame.len()),
        ));
    }
    let n = frame.len() / channels;
    let m = set.len();
    let mut values = vec![0.0; m * channels];
    for c in 0..channels {
        let per = channel_functionals(&frame[c * n..(c + 1) * n], set, opts)?;
        for (f, v) in per.into_iter().enumerate() {
            values[f * channels + c] = v;
        }
    }
    FunctionalVector::new(m, channels, values)
}

/// Per-coordinate z-score statistics fitted over a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub frame_count: usize,
}

impl NormalizationStats {
    /// Fit on rows of equal width. Needs at least two rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "normalization needs at least 2 frames, got {}",
                rows.len()
            )));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("normalization", "rows differ in width"));
        }
        let mut mean = vec![0.0; width];
        let mut std = vec![0.0; width];
        let mut column = vec![0.0; rows.len()];
        for j in 0..width {
            for (dst, r) in column.iter_mut().zip(&rows) {
                *dst = r[j];
            }
            let (mu, var) = mean_var(&column);
            mean[j] = mu;
            std[j] = var.sqrt();
        }
        Ok(Self {
            mean,
            std,
            frame_count: rows.len(),
        })
    }

    pub fn fit_vectors(vectors: &[FunctionalVector]) -> Result<Self> {
        Self::fit(vectors.iter().map(|v| v.values()))
    }

    /// `(v - mean) / std`, dividing by 1 where the fitted std is 0.
    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            let s = if *sd > 0.0 { *sd } else { 1.0 };
            *v = (*v - mu) / s;
        }
    }

    pub fn apply(&self, v: &FunctionalVector) -> FunctionalVector {
        let mut out = v.clone();
        self.apply_in_place(&mut out.values);
        out
    }
}

/// Functional targets for every frame of every sequence of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalStore {
    pub set: FunctionalSet,
    pub channels: usize,
    pub options: FunctionalOptions,
    pub normalization: Option<NormalizationStats>,
    pub frames_per_sequence: Vec<usize>,
    rows: Vec<f64>,
}

const STORE_MAGIC: &[u8; 4] = b"PFFN";
const STORE_VERSION: u32 = 1;

impl FunctionalStore {
    pub fn width(&self) -> usize {
        self.set.len() * self.channels
    }

    pub fn total_rows(&self) -> usize {
        self.rows.len() / self.width().max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.rows[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Rows of sequence `seq` as one contiguous `S x (m*C)` block.
    pub fn sequence(&self, seq: usize) -> &[f64] {
        let offset: usize = self.frames_per_sequence[..seq].iter().sum();
        let w = self.width();
        &self.rows[offset * w..(offset + self.frames_per_sequence[seq]) * w]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        for v in [STORE_VERSION, self.set.len() as u32, self.channels as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in self.set.ids() {
            out.extend_from_slice(&id.code().to_le_bytes());
        }
        out.extend_from_slice(&(self.normalization.is_some() as u32).to_le_bytes());
        out.extend_from_slice(&(self.options.include_lag0 as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames_per_sequence.len() as u32).to_le_bytes());
        for &s in &self.frames_per_sequence {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        if let Some(stats) = &self.normalization {
            out.extend_from_slice(&(stats.frame_count as u64).to_le_bytes());
            for v in stats.mean.iter().chain(&stats.std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.total_rows() as u64).to_le_bytes());
        for v in &self.rows {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != STORE_MAGIC {
            return Err(Error::Format("functional store: bad magic".into()));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!(
                "functional store: unsupported version {version}"
            )));
        }
        let m = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let ids = (0..m)
            .map(|_| {
                let code = r.u32()?;
                FunctionalId::from_code(code)
                    .ok_or_else(|| Error::Format(format!("unknown functional code {code}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let set = FunctionalSet::new(ids)?;
        let normalized = r.u32()? != 0;
        let include_lag0 = r.u32()? != 0;
        let n_seq = r.u32()? as usize;
        let frames_per_sequence = (0..n_seq)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let width = m * channels;
        let normalization = if normalized {
            let frame_count = r.u64()? as usize;
            let mean = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let std = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Some(NormalizationStats {
                mean,
                std,
                frame_count,
            })
        } else {
            None
        };
        let n_rows = r.u64()? as usize;
        if n_rows != frames_per_sequence.iter().sum::<usize>() {
            return Err(Error::Format(
                "functional store: row count disagrees with sequence table".into(),
            ));
        }
        let rows = (0..n_rows * width)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            set,
            channels,
            options: FunctionalOptions { include_lag0 },
            normalization,
            frames_per_sequence,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Compute functionals for every frame of every sequence, optionally z-scoring
/// each coordinate with statistics fitted over the whole dataset. Sequences are
/// processed in parallel; output order follows input order.
pub fn precompute_dataset_functionals(
    sequences: &[FrameSequence],
    set: &FunctionalSet,
    opts: FunctionalOptions,
    normalize: bool,
) -> Result<FunctionalStore> {
    let channels = sequences.first().map_or(1, |s| s.channels());
    let per_seq: Vec<Vec<f64>> = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let id = seq
                .source_id()
                .map(str::to_owned)
                .unwrap_or_else(|| format!("#{i}"));
            if seq.channels() != channels {
                return Err(Error::shape(
                    "functionals",
                    format!("{} channels, expected {channels}", seq.channels()),
                )
                .in_sequence(id));
            }
            let mut rows = Vec::with_capacity(seq.len() * set.len() * channels);
            for n in 0..seq.len() {
                let v = compute_functionals(seq.frame(n), channels, set, opts)
                    .map_err(|e| e.in_sequence(id.clone()))?;
                rows.extend(v.into_values());
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let frames_per_sequence: Vec<usize> = sequences.iter().map(|s| s.len()).collect();
    let mut rows: Vec<f64> = per_seq.into_iter().flatten().collect();
    let width = set.len() * channels;
    let normalization = if normalize {
        let stats = NormalizationStats::fit(rows.chunks(width))?;
        for row in rows.chunks_mut(width) {
            stats.apply_in_place(row);
        }
        Some(stats)
    } else {
        None
    };
    Ok(FunctionalStore {
        set: set.clone(),
        channels,
        options: opts,
        normalization,
        frames_per_sequence,
        rows,
    })
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated input: wanted {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn zcr_cases() {
        assert_eq!(compute_zcr(&[1.0, 2.0, 0.5, 3.0]).unwrap(), 0.0);
        assert_eq!(compute_zcr(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 2.0);
        // sgn(0) = 0: each step into or out of zero counts 1.
        assert_eq!(compute_zcr(&[1.0, 0.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(compute_zcr(&[1.0]), Err(Error::FrameTooShort(1))));
    }

    #[test]
    fn acf_cases() {
        let acf = compute_acf(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(acf[0], 1.0);
        // mu = 2.5, var = 1.25: ((-0.5)(-1.5) + (0.5)(-0.5) + (1.5)(0.5)) / 3 / 1.25
        assert!((acf[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(compute_acf(&[2.0; 5]), Err(Error::DegenerateFrame)));
    }

    #[test]
    fn acf_of_white_noise_is_small_beyond_lag_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4096;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let acf = compute_acf(&x).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        for tau in 1..50 {
            assert!(acf[tau].abs() < bound, "lag {tau}: {}", acf[tau]);
        }
    }

    #[test]
    fn constant_frame_conventions() {
        let v = channel_functionals(&[0.7; 9], &FunctionalSet::full(), Default::default()).unwrap();
        assert_eq!(v, vec![0.7, 0.0, 0.0, 0.0, 0.7, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_frame_has_normal_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v = channel_functionals(&x, &FunctionalSet::full(), Default::default()).unwrap();
        // Standard errors: skewness sqrt(6/n), kurtosis sqrt(24/n); 5 sigma.
        let nf = n as f64;
        assert!(v[2].abs() < 5.0 * (6.0 / nf).sqrt());
        assert!((v[3] - 3.0).abs() < 5.0 * (24.0 / nf).sqrt());
    }

    #[test]
    fn layout_is_functional_major() {
        let frame = [1.0, 2.0, 3.0, 10.0, 20.0, 40.0];
        let set = FunctionalSet::new(vec![FunctionalId::Mean, FunctionalId::Max]).unwrap();
        let v = compute_functionals(&frame, 2, &set, Default::default()).unwrap();
        let expected = [2.0, 70.0 / 3.0, 3.0, 40.0];
        for (a, b) in v.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(v.get(1, 1), 40.0);
    }

    #[test]
    fn set_rejects_duplicates_and_empty() {
        assert!(FunctionalSet::new(vec![]).is_err());
        assert!(FunctionalSet::new(vec![FunctionalId::Zcr, FunctionalId::Zcr]).is_err());
        let json = serde_json::to_string(&FunctionalSet::full()).unwrap();
        assert!(json.starts_with("[\"mean\",\"variance\""));
        assert!(serde_json::from_str::<FunctionalSet>("[\"zcr\",\"zcr\"]").is_err());
    }

    #[test]
    fn codes_are_stable() {
        for (i, id) in FunctionalId::ALL.iter().enumerate() {
            assert_eq!(id.code(), i as u32);
            assert_eq!(FunctionalId::from_code(i as u32), Some(*id));
        }
        assert_eq!(FunctionalId::from_code(11), None);
    }

    #[test]
    fn normalization_fit_and_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(10.0..12.0), 3.0])
            .collect();
        let stats = NormalizationStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let normed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                stats.apply_in_place(&mut r);
                r
            })
            .collect();
        for j in 0..2 {
            let col: Vec<f64> = normed.iter().map(|r| r[j]).collect();
            let (mu, var) = mean_var(&col);
            assert!(mu.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
        // Constant coordinate has std 0 and becomes 0.
        assert!(normed.iter().all(|r| r[2] == 0.0));

        let held_out = [1.5, 11.0, 3.0];
        let mut h = held_out;
        stats.apply_in_place(&mut h);
        for j in 0..2 {
            assert!((h[j] - (held_out[j] - stats.mean[j]) / stats.std[j]).abs() < 1e-12);
        }
        assert!(NormalizationStats::fit([[1.0].as_slice()]).is_err());
    }

    #[test]
    fn repeated_frame_normalizes_to_zero() {
        let row = [0.3, -2.0, 7.25];
        let stats = NormalizationStats::fit(std::iter::repeat_n(row.as_slice(), 20)).unwrap();
        let mut r = row;
        stats.apply_in_place(&mut r);
        assert_eq!(r, [0.0; 3]);
    }
}
