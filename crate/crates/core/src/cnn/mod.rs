//! Patch-level illuminant network.
//!
//! Layers, in order:
//! 1. 1x1 convolution mapping each RGB pixel to `conv_filters` responses
//!    (no nonlinearity afterwards),
//! 2. max pooling over disjoint `pool_field x pool_field` windows,
//! 3. flattening, channel-major: index `f * cells^2 + cy * cells + cx`,
//! 4. fully connected layer to `hidden_units`, then ReLU,
//! 5. fully connected layer to the 3 output channels.
//!
//! With the default configuration this is 154,723 parameters.

mod format;
mod grad;
mod inspect;
mod train;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{extract_patches, EstimateMap, Illuminant, LinearImage, Patch};
use crate::scalar::Real;

pub use format::{load_model, read_model, save_model, write_model, TrainingMetadata};
pub use grad::{loss_and_grad, Sample};
pub use inspect::{activation_map, top_activating_patches, Activation, ActivationGrid};
pub use train::{
    evaluate_samples, train, train_with_progress, EpochReport, PatchSampler, TrainConfig, TrainOutcome, TrainingImage,
};

pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub patch_size: usize,
    pub conv_filters: usize,
    pub pool_field: usize,
    pub hidden_units: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            conv_filters: 240,
            pool_field: 8,
            hidden_units: 40,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.conv_filters == 0 || self.pool_field == 0 || self.hidden_units == 0 {
            return Err(Error::InvalidParameter(format!("all network dimensions must be >= 1: {self:?}")));
        }
        if self.patch_size % self.pool_field != 0 {
            return Err(Error::InvalidParameter(format!(
                "patch size {} is not divisible by pooling field {}",
                self.patch_size, self.pool_field
            )));
        }
        Ok(())
    }

    /// Pooling cells per side.
    pub fn cells(&self) -> usize {
        self.patch_size / self.pool_field
    }

    /// Length of the flattened pooled vector.
    pub fn pooled_len(&self) -> usize {
        self.conv_filters * self.cells() * self.cells()
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_units;
        self.conv_filters * (3 + 1) + self.pooled_len() * h + h + h * OUTPUTS + OUTPUTS
    }
}

/// Total number of trainable parameters for `config`.
pub fn param_count(config: &CnnConfig) -> usize {
    config.param_count()
}

/// Network parameters. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    pub config: CnnConfig,
    /// `conv_filters x 3`, filter-major.
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    /// `pooled_len x hidden_units`, input-major.
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    /// `hidden_units x 3`, input-major.
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

impl<T: Real> CnnModel<T> {
    pub fn zeros(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_units;
        Ok(Self {
            config,
            conv_w: vec![T::zero(); config.conv_filters * 3],
            conv_b: vec![T::zero(); config.conv_filters],
            fc1_w: vec![T::zero(); config.pooled_len() * h],
            fc1_b: vec![T::zero(); h],
            fc2_w: vec![T::zero(); h * OUTPUTS],
            fc2_b: vec![T::zero(); OUTPUTS],
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng>(config: CnnConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut fill = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = T::lit(rng.random_range(-limit..limit));
            }
        };
        fill(&mut m.conv_w, 3, config.conv_filters);
        fill(&mut m.fc1_w, config.pooled_len(), config.hidden_units);
        fill(&mut m.fc2_w, config.hidden_units, OUTPUTS);
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> [&Vec<T>; 6] {
        [&self.conv_w, &self.conv_b, &self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> CnnModel<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        CnnModel {
            config: self.config,
            conv_w: c(&self.conv_w),
            conv_b: c(&self.conv_b),
            fc1_w: c(&self.fc1_w),
            fc1_b: c(&self.fc1_b),
            fc2_w: c(&self.fc2_w),
            fc2_b: c(&self.fc2_b),
        }
    }

    /// `self += scale * other`, parameter-wise.
    pub(crate) fn add_scaled(&mut self, other: &Self, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += scale * *s;
            }
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    /// Max-pooled conv responses (bias included), flattened channel-major.
    pub pooled: Vec<T>,
    /// Winning pixel index inside the patch for each pooled entry.
    pub argmax: Vec<u32>,
    /// Hidden layer before ReLU.
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    /// Raw network output, before flooring and normalization.
    pub output: [T; 3],
}

/// Forward pass on raw patch samples (`patch_size^2` interleaved RGB).
/// Pooling ties go to the first maximal pixel in row-major order.
pub fn forward_raw<T: Real>(model: &CnnModel<T>, pixels: &[T]) -> Activations<T> {
    let cfg = &model.config;
    let (ps, pf, cells, nf, nh) = (cfg.patch_size, cfg.pool_field, cfg.cells(), cfg.conv_filters, cfg.hidden_units);
    debug_assert_eq!(pixels.len(), ps * ps * 3);

    // Filter-major weight columns keep the inner loop contiguous and branch-free.
    let wr: Vec<T> = model.conv_w.iter().step_by(3).copied().collect();
    let wg: Vec<T> = model.conv_w.iter().skip(1).step_by(3).copied().collect();
    let wb: Vec<T> = model.conv_w.iter().skip(2).step_by(3).copied().collect();
    let mut pooled = vec![T::zero(); cfg.pooled_len()];
    let mut argmax = vec![0u32; cfg.pooled_len()];
    let mut best = vec![T::neg_infinity(); nf];
    let mut best_idx = vec![0u32; nf];
    for cy in 0..cells {
        for cx in 0..cells {
            best.fill(T::neg_infinity());
            best_idx.fill(0);
            for py in cy * pf..(cy + 1) * pf {
                for px in cx * pf..(cx + 1) * pf {
                    let idx = py * ps + px;
                    let (r, g, b) = (pixels[idx * 3], pixels[idx * 3 + 1], pixels[idx * 3 + 2]);
                    let idx = idx as u32;
                    let lanes = best.iter_mut().zip(best_idx.iter_mut()).zip(wr.iter().zip(&wg).zip(&wb));
                    for ((bv, bi), ((&fr, &fg), &fb)) in lanes {
                        let a = fr * r + fg * g + fb * b;
                        let win = a > *bv;
                        *bv = if win { a } else { *bv };
                        *bi = if win { idx } else { *bi };
                    }
                }
            }
            let cell = cy * cells + cx;
            for f in 0..nf {
                pooled[f * cells * cells + cell] = best[f] + model.conv_b[f];
                argmax[f * cells * cells + cell] = best_idx[f];
            }
        }
    }

    let mut hidden_pre = model.fc1_b.clone();
    for (i, &x) in pooled.iter().enumerate() {
        let row = &model.fc1_w[i * nh..(i + 1) * nh];
        for (h, &w) in hidden_pre.iter_mut().zip(row) {
            *h += x * w;
        }
    }
    let hidden: Vec<T> = hidden_pre.iter().map(|&v| v.max(T::zero())).collect();
    let mut output = [model.fc2_b[0], model.fc2_b[1], model.fc2_b[2]];
    for (j, &a) in hidden.iter().enumerate() {
        for (k, o) in output.iter_mut().enumerate() {
            *o += a * model.fc2_w[j * OUTPUTS + k];
        }
    }
    Activations {
        pooled,
        argmax,
        hidden_pre,
        hidden,
        output,
    }
}

fn check_patch<T: Real>(model: &CnnModel<T>, patch: &Patch<T>) -> Result<()> {
    let ps = model.config.patch_size;
    if patch.size != ps || patch.pixels.len() != ps * ps * 3 {
        return Err(Error::DimensionMismatch {
            expected: (ps, ps),
            found: (patch.size, patch.size),
        });
    }
    Ok(())
}

/// Estimate for an already preprocessed patch: the raw output floored at
/// 1e-6 per channel and normalized to unit length.
pub fn forward<T: Real>(model: &CnnModel<T>, patch: &Patch<T>) -> Result<Illuminant<T>> {
    Ok(forward_with_activations(model, patch)?.0)
}

pub fn forward_with_activations<T: Real>(model: &CnnModel<T>, patch: &Patch<T>) -> Result<(Illuminant<T>, Activations<T>)> {
    check_patch(model, patch)?;
    let acts = forward_raw(model, &patch.pixels);
    Ok((Illuminant::from_raw_output(acts.output)?, acts))
}

/// Joint min-max stretch across all channels to `[0, 1]`:
/// `out = (in - min) / (max - min)`. A patch with no range comes back as
/// zeros with the low-contrast flag set.
pub fn preprocess_patch<T: Real>(patch: &Patch<T>) -> (Patch<T>, bool) {
    let (lo, hi) = patch
        .pixels
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = patch.clone();
    if !(range > T::zero()) {
        out.pixels.fill(T::zero());
        return (out, true);
    }
    for v in out.pixels.iter_mut() {
        *v = (*v - lo) / range;
    }
    (out, false)
}

/// Runs the network on every non-overlapping patch of `img`. Patches that
/// touch the mask or have no contrast are left invalid.
pub fn estimate_map<T: Real>(model: &CnnModel<T>, img: &LinearImage<T>) -> Result<EstimateMap<T>> {
    let ps = model.config.patch_size;
    let patches = extract_patches(img, ps, ps)?;
    let cells = patches
        .par_iter()
        .map(|p| {
            if !p.valid {
                return Ok(None);
            }
            let (pre, low_contrast) = preprocess_patch(p);
            if low_contrast {
                return Ok(None);
            }
            forward(model, &pre).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    EstimateMap::new(img.width() / ps, img.height() / ps, ps, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> CnnConfig {
        CnnConfig {
            patch_size: 8,
            conv_filters: 2,
            pool_field: 4,
            hidden_units: 3,
        }
    }

    fn patch_from(size: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Patch<f64> {
        let mut px = Vec::new();
        for y in 0..size {
            for x in 0..size {
                px.extend_from_slice(&f(x, y));
            }
        }
        Patch::new(0, 0, size, px).unwrap()
    }

    #[test]
    fn default_budget() {
        assert_eq!(param_count(&CnnConfig::default()), 154_723);
        assert_eq!(CnnConfig::default().pooled_len(), 3840);
        let m = CnnModel::<f32>::zeros(CnnConfig::default()).unwrap();
        assert_eq!(m.param_count(), 154_723);
    }

    #[test]
    fn budget_of_minimal_and_wide_configs() {
        let minimal = CnnConfig {
            patch_size: 32,
            conv_filters: 1,
            pool_field: 32,
            hidden_units: 1,
        };
        assert_eq!(param_count(&minimal), 12);
        let wide = CnnConfig {
            hidden_units: 80,
            ..CnnConfig::default()
        };
        assert_eq!(param_count(&wide), 308_483);
    }

    #[test]
    fn config_validation() {
        let bad = CnnConfig {
            pool_field: 5,
            ..CnnConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(CnnConfig { hidden_units: 0, ..CnnConfig::default() }.validate().is_err());
    }

    #[test]
    fn constant_network_is_achromatic() {
        let mut m = CnnModel::<f64>::zeros(CnnConfig::default()).unwrap();
        m.fc2_b = vec![0.3, 0.3, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = patch_from(32, |_, _| [rng.random(), rng.random(), rng.random()]);
        let e = forward(&m, &p).unwrap();
        let v = 1.0 / 3f64.sqrt();
        assert!(e.rgb().iter().all(|c| (c - v).abs() < 1e-12));
    }

    #[test]
    fn conv_filter_is_a_dot_product() {
        let cfg = CnnConfig {
            patch_size: 1,
            conv_filters: 1,
            pool_field: 1,
            hidden_units: 1,
        };
        let mut m = CnnModel::<f64>::zeros(cfg).unwrap();
        m.conv_w = vec![1.0, 0.0, 0.0];
        let acts = forward_raw(&m, &[0.7, 0.1, 0.2]);
        assert_eq!(acts.pooled, vec![0.7]);
    }

    #[test]
    fn pooling_geometry_and_tie_breaking() {
        let mut m = CnnModel::<f64>::zeros(CnnConfig {
            patch_size: 32,
            conv_filters: 1,
            pool_field: 8,
            hidden_units: 1,
        })
        .unwrap();
        m.conv_w = vec![1.0, 0.0, 0.0];
        let p = patch_from(32, |x, y| if (x, y) == (5, 5) { [0.9, 0.0, 0.0] } else { [0.0; 3] });
        let acts = forward_raw(&m, &p.pixels);
        assert_eq!(acts.pooled.len(), 16);
        assert_eq!(acts.pooled[0], 0.9);
        assert!(acts.pooled[1..].iter().all(|&v| v == 0.0));
        assert_eq!(acts.argmax[0], 5 * 32 + 5);
        // All-zero cells route to their first pixel.
        assert_eq!(acts.argmax[1], 8);
    }

    #[test]
    fn forward_output_is_unit_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = CnnModel::<f64>::init(tiny(), &mut rng).unwrap();
            let p = patch_from(8, |_, _| [rng.random(), rng.random(), rng.random()]);
            let e = forward(&m, &p).unwrap();
            assert!(e.rgb().iter().all(|&c| c >= 0.0));
            assert!((crate::scalar::norm3(&e.rgb()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_patch_size() {
        let m = CnnModel::<f64>::zeros(tiny()).unwrap();
        let p = patch_from(16, |_, _| [0.1; 3]);
        assert!(matches!(forward(&m, &p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stretch_maps_joint_range_to_unit_interval() {
        let p = patch_from(2, |x, y| match (x, y) {
            (0, 0) => [0.2, 0.3, 0.4],
            (1, 0) => [0.6, 0.5, 0.4],
            _ => [0.3, 0.3, 0.3],
        });
        let (out, low) = preprocess_patch(&p);
        assert!(!low);
        for (o, i) in out.pixels.iter().zip(&p.pixels) {
            assert!((o - (i - 0.2) / 0.4).abs() < 1e-12);
        }
        assert_eq!(out.pixels.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(out.pixels.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn stretch_of_constant_patch_flags_low_contrast() {
        let (out, low) = preprocess_patch(&patch_from(4, |_, _| [0.5; 3]));
        assert!(low);
        assert!(out.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stretch_is_identity_on_unit_range_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = patch_from(4, |x, y| match (x, y) {
            (0, 0) => [0.0, 0.5, 1.0],
            _ => [rng.random(), rng.random(), rng.random()],
        });
        let (once, _) = preprocess_patch(&p);
        assert_eq!(once, p);
        let q = patch_from(4, |_, _| [rng.random::<f64>() * 3.0, rng.random(), 0.1]);
        let (a, _) = preprocess_patch(&q);
        let (b, _) = preprocess_patch(&a);
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_map_geometry_and_masking() {
        let mut m = CnnModel::<f64>::zeros(CnnConfig::default()).unwrap();
        m.fc2_b = vec![0.2, 0.5, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = LinearImage::from_fn(64, 64, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let map = estimate_map(&m, &img).unwrap();
        assert_eq!((map.grid_width(), map.grid_height()), (2, 2));
        let first = map.get(0, 0).unwrap();
        assert!(map.cells().iter().all(|c| *c == Some(first)));

        let mut mask = vec![false; 64 * 64];
        mask[40 * 64 + 40] = true;
        let masked = img.with_mask(mask).unwrap();
        let map = estimate_map(&m, &masked).unwrap();
        assert_eq!(map.get(1, 1), None);
        assert_eq!(map.valid_count(), 3);

        let small = LinearImage::<f64>::filled(20, 40, [0.1; 3]).unwrap();
        assert!(matches!(estimate_map(&m, &small), Err(Error::ImageTooSmall { .. })));
    }
}
