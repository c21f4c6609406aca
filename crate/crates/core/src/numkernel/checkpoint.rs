use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized parameter snapshot: name → (shape, data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub version: u32,
    pub step: u64,
    pub params: BTreeMap<String, Tensor>,
}

impl ParamSnapshot {
    pub fn capture(store: &ParamStore) -> Self {
        ParamSnapshot {
            version: CHECKPOINT_VERSION,
            step: store.step_count(),
            params: store.to_map(),
        }
    }

    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        store.load_map(&self.params)?;
        store.set_step(self.step);
        Ok(())
    }
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
