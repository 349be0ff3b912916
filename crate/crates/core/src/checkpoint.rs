//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `ARMOTCKP`, `u32` version, `u32` header
//! length, JSON header, `u32` block count, then per parameter: `u32` name
//! length, name bytes, `u32` rows, `u32` cols, `rows·cols` `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::domain::ModelDims;
use crate::error::{Error, Result};
use crate::model::{ArMot, ModelConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"ARMOTCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub scalar: String,
    pub model: ModelConfig,
    pub dims: ModelDims,
    pub decoder: DecoderConfig,
    pub capacity: usize,
    /// Free-form metadata (training config, log summary).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `model` with `meta` into checkpoint bytes.
pub fn to_bytes<T: Scalar>(model: &ArMot<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: VERSION,
        scalar: T::NAME.to_string(),
        model: model.cfg.clone(),
        dims: model.cfg.dims(),
        decoder: model.cfg.decoder(),
        capacity: model.cfg.capacity,
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + model.num_parameters() * 8 + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.store.len())?;
    for (_, name, value) in model.store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.nrows())?;
        put_u32(&mut out, value.ncols())?;
        for v in value.iter() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save<T: Scalar>(
    model: &ArMot<T>,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated checkpoint at byte {}", self.at))
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Reads only the header.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let len = r.u32()?;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != version {
        return Err(Error::Checkpoint(
            "header version disagrees with file version".into(),
        ));
    }
    Ok(header)
}

/// Rebuilds the model described by the header and fills in its parameters.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(ArMot<T>, CheckpointHeader)> {
    let header = read_header(bytes)?;
    let mut r = Reader { bytes, at: 8 + 4 };
    let len = r.u32()?;
    r.take(len)?;
    let mut model = ArMot::<T>::new(header.model.clone())?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(Error::ModelMismatch(format!(
            "checkpoint has {count} parameters, model expects {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| Error::ModelMismatch(format!("unexpected parameter {name}")))?;
        if model.store.get(id).dim() != (rows, cols) {
            return Err(Error::ModelMismatch(format!(
                "parameter {name}: checkpoint {rows}x{cols}, model {:?}",
                model.store.get(id).dim()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let values: Vec<T> = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        *model.store.get_mut(id) =
            Array2::from_shape_vec((rows, cols), values).expect("sized above");
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter blocks".into(),
        ));
    }
    Ok((model, header))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(ArMot<T>, CheckpointHeader)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::CheckpointNotFound(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_img: 8,
            d_lm: 8,
            d_det: 6,
            layers: 1,
            heads: 2,
            ff: 16,
            capacity: 4,
            tmf: true,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_preserves_parameters() {
        let mut m = ArMot::<f32>::new(tiny()).unwrap();
        let id = m.decoder.embed;
        m.store.get_mut(id)[[0, 0]] = 0.123_456_78;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, serde_json::json!({"epochs": 2}), &path).unwrap();
        let (back, header) = load::<f32>(&path).unwrap();
        assert_eq!(header.meta["epochs"], 2);
        assert_eq!(header.capacity, 4);
        for ((_, na, a), (_, nb, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let m = ArMot::<f64>::new(tiny()).unwrap();
        let mut bytes = to_bytes(&m, serde_json::Value::Null).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = from_bytes::<f64>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
        assert!(from_bytes::<f64>(b"not a checkpoint").is_err());
    }

    #[test]
    fn missing_file_is_reported_by_path() {
        let err = load::<f32>("/nonexistent/model.ckpt").unwrap_err();
        assert_eq!(
            err.to_string(),
            "checkpoint not found: /nonexistent/model.ckpt"
        );
    }
}
