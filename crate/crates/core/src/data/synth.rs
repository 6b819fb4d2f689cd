//! Synthetic datasets standing in for real recordings.
//!
//! Two generator families:
//!
//! - `ar2`: each channel follows `x_t = 2 r cos(theta) x_{t-1} - r^2 x_{t-2} + e_t`
//!   plus white observation noise. A sequence draws one pole radius `r` and
//!   angle `theta`, shared by its channels; each channel gets its own
//!   innovations and a gain in `[0.5, 2]`. Labeled presets split the radius
//!   range `[0.5, 0.95]` into `K` equal bands, one per class, while the
//!   angle is drawn from the same range `[0.1 pi, 0.6 pi]` for every class,
//!   so classes differ in how sharply the autocorrelation decays rather than
//!   in dominant frequency. An optional envelope `1 + d sin(2 pi t / P + phi)`
//!   with a random period `P` between a quarter and the whole sequence
//!   multiplies every channel.
//! - `sinusoid`: each channel is a sum of a sinusoid with random phase and
//!   white noise. Labeled presets split the normalized frequency range
//!   `[0.02, 0.4]` cycles/sample into `K` equal bands.
//!
//! All samples are rounded to f32 so that files written in the binary
//! sequence format reload bit-identically.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestEntry};
use super::pfts::write_sequence;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::signal::{FrameConfig, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ar2,
    Sinusoid,
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    pub channels: usize,
    /// Samples per sequence.
    pub length: usize,
    pub count: usize,
    pub sample_rate: f64,
    pub seed: u64,
    /// Number of classes; `None` for an unlabeled dataset.
    #[serde(default)]
    pub classes: Option<usize>,
    /// Class priors (normalized); uniform when absent.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    /// Number of recording groups; sequences are assigned round-robin.
    #[serde(default)]
    pub groups: Option<usize>,
    /// Standard deviation of the additive observation noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Depth of a slow sinusoidal amplitude envelope, in `[0, 1)`.
    #[serde(default)]
    pub envelope: f64,
}

impl SyntheticSpec {
    /// Unlabeled two-channel AR(2) mixture for pre-training, with a slow
    /// amplitude envelope.
    pub fn unlabeled_ar2(seed: u64) -> Self {
        Self {
            family: Family::Ar2,
            channels: 2,
            length: 528,
            count: 96,
            sample_rate: 100.0,
            seed,
            classes: None,
            priors: None,
            groups: None,
            noise: 0.1,
            envelope: 0.6,
        }
    }

    /// Labeled four-class AR(2) task over 41 recording groups, with a
    /// constant amplitude envelope.
    pub fn labeled_ar2(seed: u64) -> Self {
        Self {
            classes: Some(4),
            groups: Some(41),
            count: 164,
            envelope: 0.0,
            ..Self::unlabeled_ar2(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.length == 0 || self.count == 0 {
            return Err(Error::InvalidConfig("channels, length and count must be positive".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig("sample_rate must be positive and noise non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.envelope) {
            return Err(Error::InvalidConfig("envelope must be in [0, 1)".into()));
        }
        if let Some(k) = self.classes {
            if k == 0 {
                return Err(Error::InvalidConfig("classes must be positive".into()));
            }
            if let Some(p) = &self.priors {
                if p.len() != k || p.iter().any(|&v| !(v >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidConfig(format!("priors must be {k} non-negative weights")));
                }
            }
        } else if self.priors.is_some() {
            return Err(Error::InvalidConfig("priors given for an unlabeled dataset".into()));
        }
        if self.groups == Some(0) {
            return Err(Error::InvalidConfig("groups must be positive".into()));
        }
        Ok(())
    }

    /// Exact class counts by largest remainder over the priors.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let k = self.classes?;
        let p = self.priors.clone().unwrap_or_else(|| vec![1.0; k]);
        let total: f64 = p.iter().sum();
        let quotas: Vec<f64> = p.iter().map(|v| v / total * self.count as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut rest: Vec<usize> = (0..k).collect();
        rest.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let missing = self.count - counts.iter().sum::<usize>();
        for &c in rest.iter().take(missing) {
            counts[c] += 1;
        }
        Some(counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub signal: Signal,
    pub label: Option<usize>,
    pub group: String,
}

const RADIUS: (f64, f64) = (0.5, 0.95);
const ANGLE: (f64, f64) = (0.1 * PI, 0.6 * PI);
const FREQ: (f64, f64) = (0.02, 0.4);

fn band(range: (f64, f64), class: Option<(usize, usize)>) -> (f64, f64) {
    match class {
        None => range,
        Some((c, k)) => {
            let w = (range.1 - range.0) / k as f64;
            (range.0 + w * c as f64, range.0 + w * (c + 1) as f64)
        }
    }
}

fn ar2<R: Rng>(len: usize, r: f64, theta: f64, rng: &mut R) -> Vec<f64> {
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let burn = 200;
    let mut x = vec![0.0; len + burn];
    for t in 2..x.len() {
        let e: f64 = rng.sample(StandardNormal);
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + e;
    }
    x.split_off(burn)
}

fn one_sequence(spec: &SyntheticSpec, index: usize, label: Option<usize>) -> Result<Signal> {
    let mut rng = stream_rng(spec.seed, Stream::Synth, index as u64, 0);
    let class = label.zip(spec.classes);
    let mut channels = Vec::with_capacity(spec.channels);
    match spec.family {
        Family::Ar2 => {
            let (lo, hi) = band(RADIUS, class);
            let r = rng.random_range(lo..hi);
            let theta = rng.random_range(ANGLE.0..ANGLE.1);
            for _ in 0..spec.channels {
                let gain = rng.random_range(0.5..2.0);
                let x = ar2(spec.length, r, theta, &mut rng);
                channels.push(x.into_iter().map(|v| gain * v).collect::<Vec<f64>>());
            }
        }
        Family::Sinusoid => {
            let (lo, hi) = band(FREQ, class);
            let f = rng.random_range(lo..hi);
            for _ in 0..spec.channels {
                let amp = rng.random_range(0.5..2.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                channels.push(
                    (0..spec.length)
                        .map(|t| amp * (2.0 * PI * f * t as f64 + phase).sin())
                        .collect(),
                );
            }
        }
    }
    if spec.envelope > 0.0 {
        let period = rng.random_range(0.25..1.0) * spec.length as f64;
        let phase = rng.random_range(0.0..2.0 * PI);
        for ch in &mut channels {
            for (t, v) in ch.iter_mut().enumerate() {
                *v *= 1.0 + spec.envelope * (2.0 * PI * t as f64 / period + phase).sin();
            }
        }
    }
    for ch in &mut channels {
        for v in ch.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + spec.noise * n) as f32 as f64;
        }
    }
    Signal::from_channels(channels, spec.sample_rate)
}

/// Generate the dataset described by `spec`. Each sequence draws from its
/// own random stream, so the output is a pure function of the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticItem>> {
    spec.validate()?;
    let labels: Vec<Option<usize>> = match spec.class_counts() {
        None => vec![None; spec.count],
        Some(counts) => {
            let mut l: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            l.shuffle(&mut stream_rng(spec.seed, Stream::Synth, u64::MAX, 0));
            l.into_iter().map(Some).collect()
        }
    };
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let group = match spec.groups {
                Some(g) => format!("rec{:03}", i % g),
                None => format!("seq{i:04}"),
            };
            Ok(SyntheticItem {
                signal: one_sequence(spec, i, label)?,
                label,
                group,
            })
        })
        .collect()
}

/// Write sequences and a `manifest.json` into `dir`.
pub fn write_dataset(spec: &SyntheticSpec, frame: FrameConfig, dir: &Path) -> Result<Manifest> {
    let items = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let name = format!("seq_{i:05}.pfts");
        write_sequence(&dir.join(&name), &item.signal)?;
        entries.push(ManifestEntry {
            path: name,
            label: item.label,
            frame_labels: None,
            group: Some(item.group.clone()),
        });
    }
    let manifest = Manifest {
        channels: spec.channels,
        sample_rate: spec.sample_rate,
        frame,
        task: if spec.classes.is_some() { "synthetic-classification".into() } else { "synthetic".into() },
        znormalize: true,
        target_len: None,
        classes: spec.classes,
        sensors: None,
        sequences: entries,
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::compute_acf;
    use crate::signal::{frame_signal, znormalize};

    #[test]
    fn same_seed_same_data() {
        let mut s = SyntheticSpec::labeled_ar2(4);
        s.count = 12;
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let mut t = s.clone();
        t.seed = 5;
        assert_ne!(generate(&s).unwrap(), generate(&t).unwrap());
    }

    #[test]
    fn priors_are_respected_exactly() {
        let mut s = SyntheticSpec::labeled_ar2(1);
        s.count = 103;
        s.priors = Some(vec![0.5, 0.25, 0.125, 0.125]);
        let items = generate(&s).unwrap();
        let mut counts = [0usize; 4];
        for it in &items {
            counts[it.label.unwrap()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 103);
        for (c, p) in counts.iter().zip([0.5, 0.25, 0.125, 0.125]) {
            assert!((*c as f64 - p * 103.0).abs() < 1.0, "{counts:?}");
        }
        let u = generate(&SyntheticSpec { count: 5, ..SyntheticSpec::unlabeled_ar2(1) }).unwrap();
        assert!(u.iter().all(|it| it.label.is_none()));
    }

    #[test]
    fn groups_round_robin() {
        let items = generate(&SyntheticSpec::labeled_ar2(2)).unwrap();
        let mut groups: Vec<&str> = items.iter().map(|i| i.group.as_str()).collect();
        groups.sort_unstable();
        groups.dedup();
        assert_eq!(groups.len(), 41);
    }

    /// Two-sample Kolmogorov-Smirnov statistic.
    fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn classes_differ_in_acf_functionals() {
        let s = SyntheticSpec::labeled_ar2(3);
        let items = generate(&s).unwrap();
        // spread of the lag >= 1 autocorrelation over 32-sample frames
        let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); 4];
        for it in &items {
            let seq = frame_signal(&znormalize(&it.signal), FrameConfig::new(32, 16).unwrap()).unwrap();
            for n in 0..seq.len() {
                let acf = compute_acf(seq.frame_channel(n, 0)).unwrap();
                let lags = &acf[1..];
                let m = lags.iter().sum::<f64>() / lags.len() as f64;
                let var = lags.iter().map(|v| (v - m).powi(2)).sum::<f64>() / lags.len() as f64;
                per_class[it.label.unwrap()].push(var);
            }
        }
        // about 1000 frames per class: the two-sample critical value at
        // alpha = 0.001 is 1.95 * sqrt(2 / 1000) ~ 0.09
        let (a, b) = (per_class[0].clone(), per_class[3].clone());
        assert!(ks(a, b) > 0.2);
        for k in 0..2 {
            let d = ks(per_class[k].clone(), per_class[k + 2].clone());
            assert!(d > 0.1, "classes {k},{}: KS {d}", k + 2);
        }
    }

    #[test]
    fn sinusoid_family_bands() {
        let s = SyntheticSpec {
            family: Family::Sinusoid,
            noise: 0.0,
            count: 8,
            ..SyntheticSpec::labeled_ar2(0)
        };
        for it in generate(&s).unwrap() {
            let x = it.signal.channel(0);
            let crossings = x.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();
            let f = crossings as f64 / 2.0 / x.len() as f64;
            let (lo, hi) = band(FREQ, Some((it.label.unwrap(), 4)));
            assert!(f > lo - 0.01 && f < hi + 0.01, "f {f} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn envelope_makes_frame_energy_vary_smoothly() {
        // lag-1 correlation of frame variances within a sequence
        let smoothness = |envelope: f64| {
            let s = SyntheticSpec { envelope, count: 16, ..SyntheticSpec::unlabeled_ar2(2) };
            let mut total = 0.0;
            for it in generate(&s).unwrap() {
                let seq = frame_signal(&znormalize(&it.signal), FrameConfig::new(32, 32).unwrap()).unwrap();
                let v: Vec<f64> = (0..seq.len())
                    .map(|n| {
                        let x = seq.frame_channel(n, 0);
                        let m = x.iter().sum::<f64>() / x.len() as f64;
                        x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64
                    })
                    .collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let c0: f64 = v.iter().map(|a| (a - m).powi(2)).sum();
                let c1: f64 = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
                total += c1 / c0;
            }
            total / 16.0
        };
        let (flat, env) = (smoothness(0.0), smoothness(0.6));
        assert!(env > flat + 0.2, "flat {flat}, envelope {env}");
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticSpec::labeled_ar2(0);
        s.priors = Some(vec![1.0; 3]);
        assert!(generate(&s).is_err());
        let mut s = SyntheticSpec::unlabeled_ar2(0);
        s.priors = Some(vec![1.0]);
        assert!(s.validate().is_err());
        let s = SyntheticSpec { envelope: 1.0, ..SyntheticSpec::unlabeled_ar2(0) };
        assert!(s.validate().is_err());
    }
}
