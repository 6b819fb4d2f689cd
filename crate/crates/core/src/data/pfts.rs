//! Binary sequence files.
//!
//! Layout (little-endian): magic `PFTS`, version `u32`, channels `u32`,
//! sample rate `f64`, length `u64`, then `length * channels` f32 samples
//! interleaved sample-major (`t0c0 t0c1 ... t1c0 ...`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::functionals::ByteReader;
use crate::signal::Signal;

const MAGIC: &[u8; 4] = b"PFTS";
const VERSION: u32 = 1;

pub fn sequence_to_bytes(signal: &Signal) -> Vec<u8> {
    let (c, n) = (signal.channels(), signal.len());
    let mut out = Vec::with_capacity(28 + 4 * c * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&signal.sample_rate().to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for t in 0..n {
        for ch in 0..c {
            out.extend_from_slice(&(signal.channel(ch)[t] as f32).to_le_bytes());
        }
    }
    out
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<Signal> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected PFTS")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PFTS version {version}")));
    }
    let c = r.u32()? as usize;
    let rate = r.f64()?;
    let n = r.u64()? as usize;
    let expected = n.checked_mul(c).and_then(|v| v.checked_mul(4));
    if expected != Some(bytes.len() - 28) {
        return Err(Error::Format(format!(
            "truncated or oversized body: header promises {n} samples x {c} channels, body has {} bytes",
            bytes.len() - 28
        )));
    }
    let mut data = vec![0.0; c * n];
    for t in 0..n {
        for ch in 0..c {
            data[ch * n + t] = f64::from(r.f32()?);
        }
    }
    r.finish()?;
    Signal::new(c, rate, data)
}

pub fn write_sequence(path: &Path, signal: &Signal) -> Result<()> {
    std::fs::write(path, sequence_to_bytes(signal)).map_err(|e| Error::io(path, e))
}

pub fn read_sequence(path: &Path) -> Result<Signal> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    sequence_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Read a CSV with one row per sample and one column per channel. A first
/// row that does not parse as numbers is treated as a header.
pub fn import_csv(path: &Path, sample_rate: f64) -> Result<Signal> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Format(format!("{}: row {}: {e}", path.display(), i + 1))),
        };
        if channels.is_empty() {
            channels = vec![Vec::new(); row.len()];
        }
        if row.len() != channels.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                i + 1,
                row.len(),
                channels.len()
            )));
        }
        for (c, v) in row.into_iter().enumerate() {
            channels[c].push(v);
        }
    }
    Signal::from_channels(channels, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn imu_like() -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let len = 520;
        let data = (0..24 * len).map(|_| rng.random_range(-4.0f32..4.0) as f64).collect();
        Signal::new(24, 52.0, data).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let s = imu_like();
        let bytes = sequence_to_bytes(&s);
        assert_eq!(&bytes[..4], b"PFTS");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 24);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 52.0);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 520);
        // sample-major: the second stored value is channel 1 at t = 0
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()) as f64, s.channel(1)[0]);
        let back = sequence_from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(sequence_to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut bytes = sequence_to_bytes(&imu_like());
        let err = sequence_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        bytes[0] = b'X';
        assert!(sequence_from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = sequence_to_bytes(&imu_like());
        bytes[4] = 9;
        assert!(sequence_from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn csv_import_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "ax,ay\n1.0,2.0\n3.0,4.5\n-1,0\n").unwrap();
        let s = import_csv(&p, 10.0).unwrap();
        assert_eq!(s.channels(), 2);
        assert_eq!(s.channel(0), &[1.0, 3.0, -1.0]);
        assert_eq!(s.channel(1), &[2.0, 4.5, 0.0]);
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(import_csv(&p, 10.0).is_err());
    }
}
