use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;

use super::write_atomic;

const ROW_MAJOR: &str = "row-major";

/// Sidecar describing a raw tensor file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub shape: Vec<usize>,
    pub order: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// `W.raw` is described by `W.raw.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_raw(path: &Path, tensor: &RawTensor) -> Result<()> {
    let count: usize = tensor.shape.iter().product();
    if count != tensor.data.len() {
        return Err(HlqError::data(format!(
            "shape {:?} holds {count} values, tensor has {}",
            tensor.shape,
            tensor.data.len()
        )));
    }
    let bytes: Vec<u8> = tensor.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let meta = TensorMeta {
        shape: tensor.shape.clone(),
        order: ROW_MAJOR.into(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("sidecar serializes");
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_raw(path: &Path) -> Result<RawTensor> {
    let side = sidecar_path(path);
    let json = std::fs::read(&side).map_err(|e| HlqError::io(&side, e))?;
    let meta: TensorMeta =
        serde_json::from_slice(&json).map_err(|e| HlqError::data(format!("{}: {e}", side.display())))?;
    if meta.order != ROW_MAJOR {
        return Err(HlqError::data(format!(
            "{}: unsupported order {:?}",
            side.display(),
            meta.order
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| HlqError::io(path, e))?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != 4 * count {
        return Err(HlqError::data(format!(
            "{}: {} bytes, shape {:?} needs {}",
            path.display(),
            bytes.len(),
            meta.shape,
            4 * count
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    Ok(RawTensor {
        shape: meta.shape,
        data,
    })
}

/// Reads a 2-D tensor; a 1-D tensor becomes a single row.
pub fn read_raw_matrix(path: &Path) -> Result<WeightMatrix> {
    let t = read_raw(path)?;
    let (rows, cols) = match t.shape[..] {
        [k] => (1, k),
        [n, k] => (n, k),
        _ => {
            return Err(HlqError::data(format!(
                "{}: expected a matrix, got shape {:?}",
                path.display(),
                t.shape
            )))
        }
    };
    WeightMatrix::new(rows, cols, t.data)
}

pub fn write_raw_matrix(path: &Path, w: &WeightMatrix) -> Result<()> {
    write_raw(
        path,
        &RawTensor {
            shape: vec![w.rows(), w.cols()],
            data: w.data().to_vec(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.raw");
        let w = synth::gaussian_matrix(3, 7, 1.0, 1);
        write_raw_matrix(&path, &w).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 84);
        let side: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("w.raw.json")).unwrap()).unwrap();
        assert_eq!(side["shape"], serde_json::json!([3, 7]));
        assert_eq!(side["order"], "row-major");
        assert_eq!(read_raw_matrix(&path).unwrap(), w);
    }

    #[test]
    fn little_endian_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.raw");
        write_raw(
            &path,
            &RawTensor {
                shape: vec![1],
                data: vec![1.0],
            },
        )
        .unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), vec![0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn length_mismatch_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.raw");
        write_raw_matrix(&path, &synth::gaussian_matrix(2, 2, 1.0, 2)).unwrap();
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(read_raw(&path), Err(HlqError::Data(_))));
        let err = read_raw(&dir.path().join("missing.raw")).unwrap_err();
        assert!(matches!(err, HlqError::Io { .. }));
        assert!(err.to_string().contains("missing.raw.json"));
    }

    #[test]
    fn rejects_column_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.raw");
        std::fs::write(&path, [0u8; 4]).unwrap();
        std::fs::write(sidecar_path(&path), r#"{"shape":[1],"order":"column-major"}"#).unwrap();
        assert!(read_raw(&path).is_err());
    }
}
