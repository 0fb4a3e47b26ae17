//! Model container: 8-byte magic, `u32` version, five `u32` shape fields
//! (patch size, filters, pool field, hidden units, outputs), then every
//! tensor as little-endian `f32` in declaration order. All integers are
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CnnConfig, CnnModel, EpochReport, TrainConfig, OUTPUTS};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"ILLUMCNN";
const VERSION: u32 = 1;

/// Training facts stored next to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub network: CnnConfig,
    pub training: TrainConfig,
    pub history: Vec<EpochReport>,
}

pub fn write_model<T: Real, W: Write>(model: &CnnModel<T>, mut w: W) -> std::io::Result<()> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    for v in [VERSION, c.patch_size as u32, c.conv_filters as u32, c.pool_field as u32, c.hidden_units as u32, OUTPUTS as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in model.tensors() {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        format: "model",
        reason: reason.into(),
    }
}

/// `path` only labels errors.
pub fn read_model<T: Real, R: Read>(mut r: R, path: &Path) -> Result<CnnModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err(format_err(path, "missing model header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(format_err(path, format!("unsupported model version {}", word(0))));
    }
    if word(5) as usize != OUTPUTS {
        return Err(format_err(path, format!("expected {OUTPUTS} outputs, found {}", word(5))));
    }
    let config = CnnConfig {
        patch_size: word(1) as usize,
        conv_filters: word(2) as usize,
        pool_field: word(3) as usize,
        hidden_units: word(4) as usize,
    };
    config.validate().map_err(|e| format_err(path, e.to_string()))?;
    let mut model = CnnModel::<T>::zeros(config)?;
    let body = &bytes[32..];
    if body.len() != model.param_count() * 4 {
        return Err(format_err(
            path,
            format!("expected {} parameters, found {} bytes", model.param_count(), body.len()),
        ));
    }
    let mut values = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = T::from_f32(values.next().expect("length checked"));
        }
    }
    if !model.is_finite() {
        return Err(format_err(path, "non-finite parameter"));
    }
    Ok(model)
}

pub fn save_model<T: Real>(path: &Path, model: &CnnModel<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to memory");
    crate::io::write_bytes(path, &buf)
}

pub fn load_model<T: Real>(path: &Path) -> Result<CnnModel<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file), path)
}
