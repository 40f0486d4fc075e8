//! Config files are partial JSON overrides of the built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Reads `path` and applies it on top of `default`. Unknown keys are
/// rejected rather than silently ignored.
pub fn load_partial<T: Serialize + DeserializeOwned>(path: &Path, default: T) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let user: serde_json::Value = serde_json::from_str(&text).map_err(CliError::json(path))?;
    let mut base = serde_json::to_value(default).map_err(CliError::json(path))?;
    merge_into(&mut base, &user, path, "")?;
    serde_json::from_value(base).map_err(CliError::json(path))
}

fn merge_into(
    base: &mut serde_json::Value,
    user: &serde_json::Value,
    path: &Path,
    prefix: &str,
) -> Result<()> {
    match (base, user) {
        (serde_json::Value::Object(b), serde_json::Value::Object(u)) => {
            for (key, value) in u {
                let full = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                match b.get_mut(key) {
                    Some(slot) => merge_into(slot, value, path, &full)?,
                    None => return Err(CliError::format(path, format!("unknown field {full:?}"))),
                }
            }
            Ok(())
        }
        (slot, value) => {
            *slot = value.clone();
            Ok(())
        }
    }
}
