use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::nn::Pooling;
use crate::rng::{stream_rng, Stream};
use crate::signal::FrameSequence;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One label per sequence.
    Sequence(Vec<usize>),
    /// One label per frame of each sequence.
    Frame(Vec<Vec<usize>>),
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub sequences: Vec<FrameSequence>,
    pub labels: Labels,
    pub groups: Vec<String>,
    pub classes: usize,
    /// Channel indices per sensor, for sensor dropout.
    pub sensors: Option<Vec<Vec<usize>>>,
}

impl LabeledDataset {
    pub fn new(sequences: Vec<FrameSequence>, labels: Labels, groups: Vec<String>, classes: usize) -> Result<Self> {
        let ds = Self {
            sequences,
            labels,
            groups,
            classes,
            sensors: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.sequences.len();
        if self.groups.len() != n {
            return Err(Error::InvalidConfig(format!("{} group ids for {n} sequences", self.groups.len())));
        }
        let check = |l: usize| {
            if l >= self.classes {
                Err(Error::LabelOutOfRange { label: l, classes: self.classes })
            } else {
                Ok(())
            }
        };
        match &self.labels {
            Labels::Sequence(l) => {
                if l.len() != n {
                    return Err(Error::InvalidConfig(format!("{} labels for {n} sequences", l.len())));
                }
                l.iter().try_for_each(|&v| check(v))?;
            }
            Labels::Frame(l) => {
                if l.len() != n {
                    return Err(Error::InvalidConfig(format!("{} label lists for {n} sequences", l.len())));
                }
                for (s, fl) in self.sequences.iter().zip(l) {
                    if fl.len() != s.len() {
                        return Err(Error::InvalidConfig(format!(
                            "{} frame labels for {} frames",
                            fl.len(),
                            s.len()
                        )));
                    }
                    fl.iter().try_for_each(|&v| check(v))?;
                }
            }
        }
        Ok(())
    }

    pub fn from_manifest(m: &Manifest, base: &Path) -> Result<Self> {
        let sequences = m.load_frames(base)?;
        let per_frame = m.sequences.iter().any(|e| e.frame_labels.is_some());
        let labels = if per_frame {
            Labels::Frame(
                m.sequences
                    .iter()
                    .map(|e| e.frame_labels.clone().ok_or_else(|| Error::InvalidConfig(format!("{} has no frame labels", e.path))))
                    .collect::<Result<_>>()?,
            )
        } else {
            Labels::Sequence(
                m.sequences
                    .iter()
                    .map(|e| e.label.ok_or_else(|| Error::InvalidConfig(format!("{} has no label", e.path))))
                    .collect::<Result<_>>()?,
            )
        };
        let classes = match m.classes {
            Some(k) => k,
            None => match &labels {
                Labels::Sequence(l) => l.iter().max().map_or(0, |v| v + 1),
                Labels::Frame(l) => l.iter().flatten().max().map_or(0, |v| v + 1),
            },
        };
        let groups = m
            .sequences
            .iter()
            .map(|e| e.group.clone().unwrap_or_else(|| e.path.clone()))
            .collect();
        let mut ds = Self::new(sequences, labels, groups, classes)?;
        ds.sensors = m.sensors.clone();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn pooling(&self) -> Pooling {
        match self.labels {
            Labels::Sequence(_) => Pooling::Mean,
            Labels::Frame(_) => Pooling::PerFrame,
        }
    }

    /// Labels of item `i` in prediction order.
    pub fn item_labels(&self, i: usize) -> Vec<usize> {
        match &self.labels {
            Labels::Sequence(l) => vec![l[i]],
            Labels::Frame(l) => l[i].clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for i in 0..self.len() {
            for l in self.item_labels(i) {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let labels = match &self.labels {
            Labels::Sequence(l) => Labels::Sequence(idx.iter().map(|&i| l[i]).collect()),
            Labels::Frame(l) => Labels::Frame(idx.iter().map(|&i| l[i].clone()).collect()),
        };
        Self {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels,
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
            classes: self.classes,
            sensors: self.sensors.clone(),
        }
    }

    /// The same data with labels permuted across items, destroying any
    /// relation between inputs and labels.
    pub fn shuffled_labels(&self, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Augment, u64::MAX, 0);
        let labels = match &self.labels {
            Labels::Sequence(l) => {
                let mut l = l.clone();
                l.shuffle(&mut rng);
                Labels::Sequence(l)
            }
            Labels::Frame(l) => {
                let mut flat: Vec<usize> = l.iter().flatten().copied().collect();
                flat.shuffle(&mut rng);
                let mut it = flat.into_iter();
                Labels::Frame(l.iter().map(|fl| it.by_ref().take(fl.len()).collect()).collect())
            }
        };
        Self {
            labels,
            ..self.clone()
        }
    }
}
