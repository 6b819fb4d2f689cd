use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{load_json, write_canonical_json};
use super::pfts::read_sequence;
use crate::error::{Error, Result};
use crate::signal::{frame_signal, pad_or_truncate, znormalize, FrameConfig, FrameSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path of a sequence file, relative to the manifest's directory.
    pub path: String,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub frame_labels: Option<Vec<usize>>,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub channels: usize,
    pub sample_rate: f64,
    pub frame: FrameConfig,
    #[serde(default)]
    pub task: String,
    /// z-score each channel of each sequence before framing.
    #[serde(default)]
    pub znormalize: bool,
    /// Pad or truncate every sequence to this many samples.
    #[serde(default)]
    pub target_len: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
    /// Channel indices of each sensor, for sensor dropout.
    #[serde(default)]
    pub sensors: Option<Vec<Vec<usize>>>,
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let m: Manifest = load_json(path)?;
        m.frame.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for e in &m.sequences {
            let p = base.join(&e.path);
            if !p.is_file() {
                return Err(Error::Io {
                    path: p,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "sequence listed in manifest not found"),
                });
            }
        }
        Ok((m, base))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_canonical_json(path, self)
    }

    /// Read, normalize and frame every listed sequence.
    pub fn load_frames(&self, base: &Path) -> Result<Vec<FrameSequence>> {
        self.sequences
            .iter()
            .map(|e| {
                let path = base.join(&e.path);
                let mut s = read_sequence(&path)?;
                if s.channels() != self.channels {
                    return Err(Error::InvalidSignal(format!(
                        "{}: {} channels, manifest declares {}",
                        path.display(),
                        s.channels(),
                        self.channels
                    )));
                }
                if s.sample_rate() != self.sample_rate {
                    return Err(Error::InvalidSignal(format!(
                        "{}: sample rate {}, manifest declares {}",
                        path.display(),
                        s.sample_rate(),
                        self.sample_rate
                    )));
                }
                if let Some(n) = self.target_len {
                    s = pad_or_truncate(&s, n)?;
                }
                if self.znormalize {
                    s = znormalize(&s);
                }
                Ok(frame_signal(&s, self.frame)?.with_source_id(e.path.clone()))
            })
            .collect()
    }
}
