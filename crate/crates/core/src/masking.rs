//! Mask sampling and mask replacement.
//!
//! Each frame independently becomes a mask start with probability `p_m`; a
//! start masks itself and the following `l_m - 1` frames, clamped at the end
//! of the sequence. Spans may overlap. A sequence always has at least one
//! start: if none was drawn, one index is drawn uniformly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    #[default]
    Ones,
    Zeros,
    GaussianNoise,
    LearnableToken,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLocation {
    #[default]
    Embeddings,
    Inputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    /// Probability that a frame starts a mask.
    pub p_m: f64,
    /// Frames masked from each start.
    pub l_m: usize,
    #[serde(default)]
    pub mask_type: MaskType,
    #[serde(default)]
    pub mask_location: MaskLocation,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            p_m: 0.065,
            l_m: 5,
            mask_type: MaskType::Ones,
            mask_location: MaskLocation::Embeddings,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(Error::InvalidConfig(format!(
                "p_m must be in [0, 1], got {}",
                self.p_m
            )));
        }
        if self.l_m == 0 {
            return Err(Error::InvalidConfig("l_m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    starts: Vec<usize>,
    masked: Vec<bool>,
}

impl MaskSet {
    /// Rebuild the masked flags from sorted start indices.
    pub fn from_starts(len: usize, mut starts: Vec<usize>, l_m: usize) -> Result<Self> {
        starts.sort_unstable();
        starts.dedup();
        if starts.is_empty() {
            return Err(Error::NoMaskedFrames);
        }
        if let Some(&s) = starts.iter().find(|&&s| s >= len) {
            return Err(Error::InvalidConfig(format!(
                "mask start {s} outside sequence of {len} frames"
            )));
        }
        let mut masked = vec![false; len];
        for &s in &starts {
            let end = (s + l_m).min(len);
            masked[s..end].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self { starts, masked })
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// Draw mask starts for a sequence of `len` frames.
pub fn sample_masks<R: Rng + ?Sized>(len: usize, config: &MaskConfig, rng: &mut R) -> Result<MaskSet> {
    config.validate()?;
    if len == 0 {
        return Err(Error::InvalidConfig("cannot mask an empty sequence".into()));
    }
    let mut starts: Vec<usize> = (0..len)
        .filter(|_| rng.random::<f64>() < config.p_m)
        .collect();
    if starts.is_empty() {
        starts.push(rng.random_range(0..len));
    }
    MaskSet::from_starts(len, starts, config.l_m)
}

/// Replacement rows for the masked positions of an `rows x dim` tensor.
/// Returns `None` for [`MaskType::LearnableToken`], whose rows come from a
/// trainable parameter instead. Noise is drawn only for masked rows, in row
/// order.
pub fn fill_rows<R: Rng + ?Sized>(
    mask_type: MaskType,
    masked: &[bool],
    dim: usize,
    rng: &mut R,
) -> Option<Tensor> {
    let rows = masked.len();
    match mask_type {
        MaskType::Ones => Some(Tensor::ones(&[rows, dim])),
        MaskType::Zeros => Some(Tensor::zeros(&[rows, dim])),
        MaskType::GaussianNoise => {
            let mut t = Tensor::zeros(&[rows, dim]);
            for (i, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                for v in t.row_mut(i) {
                    *v = rng.sample(StandardNormal);
                }
            }
            Some(t)
        }
        MaskType::LearnableToken => None,
    }
}

/// Replace the masked rows of a `S x d` tensor. Unmasked rows are copied
/// unchanged.
pub fn apply_mask<R: Rng + ?Sized>(
    tensor: &Tensor,
    mask: &MaskSet,
    mask_type: MaskType,
    token: Option<&[f64]>,
    rng: &mut R,
) -> Result<Tensor> {
    let (rows, dim) = (tensor.rows(), tensor.cols());
    if rows != mask.len() {
        return Err(Error::shape(
            "apply_mask",
            format!("{rows} rows but mask covers {} frames", mask.len()),
        ));
    }
    let fill = match fill_rows(mask_type, mask.masked(), dim, rng) {
        Some(t) => t,
        None => {
            let token = token.ok_or(Error::MissingMaskToken)?;
            if token.len() != dim {
                return Err(Error::shape(
                    "apply_mask",
                    format!("token has {} values, rows have {dim}", token.len()),
                ));
            }
            let mut t = Tensor::zeros(&[rows, dim]);
            for i in 0..rows {
                t.row_mut(i).copy_from_slice(token);
            }
            t
        }
    };
    let mut out = tensor.clone();
    for (i, _) in mask.masked().iter().enumerate().filter(|(_, &m)| m) {
        out.row_mut(i).copy_from_slice(fill.row(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn cfg(p_m: f64, l_m: usize) -> MaskConfig {
        MaskConfig {
            p_m,
            l_m,
            ..Default::default()
        }
    }

    #[test]
    fn p_one_masks_everything() {
        let mut rng = stream_rng(1, Stream::Mask, 0, 0);
        let m = sample_masks(37, &cfg(1.0, 1), &mut rng).unwrap();
        assert_eq!(m.starts().len(), 37);
        assert!(m.masked().iter().all(|&b| b));
    }

    #[test]
    fn p_zero_forces_one_start() {
        for seed in 0..200 {
            let mut rng = stream_rng(seed, Stream::Mask, 0, 0);
            let m = sample_masks(10, &cfg(0.0, 3), &mut rng).unwrap();
            assert_eq!(m.starts().len(), 1);
            let s = m.starts()[0];
            let expected = (10 - s).min(3);
            assert_eq!(m.masked_count(), expected);
            assert!(m.masked()[s..s + expected].iter().all(|&b| b));
        }
    }

    #[test]
    fn ones_mask_rows_and_keeps_others() {
        let mut rng = stream_rng(2, Stream::Mask, 0, 0);
        let t = Tensor::new(vec![4, 3], (0..12).map(f64::from).collect()).unwrap();
        let m = MaskSet::from_starts(4, vec![1], 2).unwrap();
        let out = apply_mask(&t, &m, MaskType::Ones, None, &mut rng).unwrap();
        assert_eq!(out.row(0), t.row(0));
        assert_eq!(out.row(1), &[1.0; 3]);
        assert_eq!(out.row(2), &[1.0; 3]);
        assert_eq!(out.row(3), t.row(3));
        let z = apply_mask(&t, &m, MaskType::Zeros, None, &mut rng).unwrap();
        assert_eq!(z.row(1), &[0.0; 3]);
        assert_eq!(z.row(3), t.row(3));
    }

    #[test]
    fn learnable_token_requires_token() {
        let mut rng = stream_rng(2, Stream::Mask, 0, 0);
        let t = Tensor::zeros(&[3, 2]);
        let m = MaskSet::from_starts(3, vec![0], 1).unwrap();
        assert!(matches!(
            apply_mask(&t, &m, MaskType::LearnableToken, None, &mut rng),
            Err(Error::MissingMaskToken)
        ));
        let out = apply_mask(&t, &m, MaskType::LearnableToken, Some(&[4.0, 5.0]), &mut rng).unwrap();
        assert_eq!(out.row(0), &[4.0, 5.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn gaussian_noise_rows_are_standard_normal() {
        let mut rng = stream_rng(3, Stream::Mask, 0, 0);
        let n = 10_000;
        let dim = 4;
        let t = Tensor::zeros(&[n, dim]);
        let m = MaskSet::from_starts(n, (0..n).collect(), 1).unwrap();
        let out = apply_mask(&t, &m, MaskType::GaussianNoise, None, &mut rng).unwrap();
        for j in 0..dim {
            let col: Vec<f64> = (0..n).map(|i| out.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            // 3 sigma: sd(mean) = 1/sqrt(n), sd(var) = sqrt(2/n)
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {var}");
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(1.5, 1).validate().is_err());
        assert!(cfg(0.5, 0).validate().is_err());
        assert!(MaskSet::from_starts(4, vec![], 2).is_err());
        assert!(MaskSet::from_starts(4, vec![4], 2).is_err());
    }

    proptest! {
        #[test]
        fn mask_set_invariants(len in 1usize..300, p in 0.0f64..1.0, l in 1usize..12, seed in 0u64..1000) {
            let c = cfg(p, l);
            let a = sample_masks(len, &c, &mut stream_rng(seed, Stream::Mask, 0, 0)).unwrap();
            let b = sample_masks(len, &c, &mut stream_rng(seed, Stream::Mask, 0, 0)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.starts().is_empty());
            prop_assert_eq!(a.len(), len);
            let rebuilt = MaskSet::from_starts(len, a.starts().to_vec(), l).unwrap();
            prop_assert_eq!(&rebuilt, &a);
            for &s in a.starts() {
                prop_assert!(s < len);
                let run = (s + l).min(len) - s;
                prop_assert!(a.masked()[s..s + run].iter().all(|&m| m));
            }
        }
    }
}
