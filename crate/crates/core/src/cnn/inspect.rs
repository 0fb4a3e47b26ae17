use rayon::prelude::*;

use super::{forward_raw, preprocess_patch, CnnModel};
use crate::error::{Error, Result};
use crate::image::{extract_patches, LinearImage, Patch};
use crate::scalar::Real;

/// Response of one hidden unit to one dataset patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation<T> {
    pub index: usize,
    pub value: T,
}

fn check_unit<T: Real>(model: &CnnModel<T>, unit: usize) -> Result<()> {
    if unit >= model.config.hidden_units {
        return Err(Error::InvalidParameter(format!(
            "unit {unit} out of range for {} hidden units",
            model.config.hidden_units
        )));
    }
    Ok(())
}

fn response<T: Real>(model: &CnnModel<T>, patch: &Patch<T>, unit: usize) -> Result<T> {
    let ps = model.config.patch_size;
    if patch.size != ps {
        return Err(Error::DimensionMismatch {
            expected: (ps, ps),
            found: (patch.size, patch.size),
        });
    }
    let (pre, _) = preprocess_patch(patch);
    Ok(forward_raw(model, &pre.pixels).hidden_pre[unit])
}

/// The `k` patches with the largest pre-ReLU response of `unit`, highest
/// first. Patches are stretched before evaluation; ties keep dataset order.
pub fn top_activating_patches<T: Real>(
    model: &CnnModel<T>,
    patches: &[Patch<T>],
    unit: usize,
    k: usize,
) -> Result<Vec<Activation<T>>> {
    check_unit(model, unit)?;
    if patches.is_empty() {
        return Err(Error::Empty("patch dataset"));
    }
    let values = patches
        .par_iter()
        .map(|p| response(model, p, unit))
        .collect::<Result<Vec<T>>>()?;
    let mut ranked: Vec<Activation<T>> = values
        .into_iter()
        .enumerate()
        .map(|(index, value)| Activation { index, value })
        .collect();
    // Stable sort, so equal responses stay in dataset order.
    ranked.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap_or(std::cmp::Ordering::Equal));
    ranked.truncate(k);
    Ok(ranked)
}

/// Post-ReLU response of `unit` on each non-overlapping patch, row-major;
/// `None` for patches touching the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrid<T> {
    pub grid_width: usize,
    pub grid_height: usize,
    pub values: Vec<Option<T>>,
}

pub fn activation_map<T: Real>(model: &CnnModel<T>, img: &LinearImage<T>, unit: usize) -> Result<ActivationGrid<T>> {
    check_unit(model, unit)?;
    let ps = model.config.patch_size;
    let patches = extract_patches(img, ps, ps)?;
    let values = patches
        .par_iter()
        .map(|p| {
            if p.valid {
                response(model, p, unit).map(|v| Some(v.max(T::zero())))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationGrid {
        grid_width: img.width() / ps,
        grid_height: img.height() / ps,
        values,
    })
}
