//! On-disk formats: raw `f32` tensors with a JSON sidecar, and the `HLQP`
//! single-layer container.

mod container;
mod raw;

pub use container::{load_hlqp, save_hlqp, HlqpContainer, HlqpHeader, Layout, FORMAT_VERSION, MAGIC};
pub use raw::{read_raw, read_raw_matrix, sidecar_path, write_raw, write_raw_matrix, RawTensor, TensorMeta};

use std::io::Write;
use std::path::Path;

use crate::error::{HlqError, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HlqError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| HlqError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HlqError::io(path, e))?;
    tmp.persist(path).map_err(|e| HlqError::io(path, e.error))?;
    Ok(())
}
