use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::checkpoint::canonical_json;

/// Parse a JSON file into `T`. Unknown keys are rejected by the config types
/// themselves, and the error names the offending key.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Write `value` as canonical JSON (sorted keys, compact) plus a newline.
pub fn write_canonical_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = canonical_json(&serde_json::to_value(value)?);
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
