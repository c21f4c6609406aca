use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::commands::CliError;

/// Applies `key=value` overrides to `base`. Keys are dotted paths into the
/// serialized config and must already exist; values are read as JSON and
/// fall back to a bare string.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, sets: &[String]) -> Result<T, CliError> {
    let mut v = serde_json::to_value(base).expect("configs serialize");
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
        let mut slot = &mut v;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CliError::Usage(format!("unknown configuration key {key:?}")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    }
    serde_json::from_value(v)
        .map_err(|e| CliError::Core(sgmn::Error::Validation(format!("configuration: {e}"))))
}
