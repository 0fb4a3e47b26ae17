use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_raw, loss_and_grad, preprocess_patch, CnnConfig, CnnModel, Sample};
use crate::error::{Error, Result};
use crate::image::{Illuminant, LinearImage, Patch};
use crate::io::GroundTruth;
use crate::metrics::angular_error;
use crate::scalar::{median, Real};

/// Attempts per requested patch before an image is considered exhausted.
const MAX_DRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patches_per_image: usize,
    pub validation_patches_per_image: usize,
    pub seed: u64,
    /// Multiplier applied to the learning rate every `lr_step` epochs.
    pub lr_decay: f64,
    /// Defaults to a third of `epochs`.
    pub lr_step: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 30,
            patches_per_image: 64,
            validation_patches_per_image: 16,
            seed: 0,
            lr_decay: 0.1,
            lr_step: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patches_per_image == 0 {
            return Err(Error::InvalidParameter("batch size, epochs and patches per image must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0) || self.lr_step == Some(0) {
            return Err(Error::InvalidParameter("learning-rate decay must be positive with a step >= 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let step = self.lr_step.unwrap_or(self.epochs.div_ceil(3)).max(1);
        self.learning_rate * self.lr_decay.powi((epoch / step) as i32)
    }
}

/// An image with its ground truth.
#[derive(Debug, Clone)]
pub struct TrainingImage<T> {
    pub image: LinearImage<T>,
    pub truth: GroundTruth<T>,
}

/// Draws random patches that avoid masked pixels, stretched and paired with
/// the illuminant under them.
#[derive(Debug)]
pub struct PatchSampler<'a, T> {
    images: &'a [TrainingImage<T>],
    patch_size: usize,
    /// Summed-area tables of the masks, `(w + 1) x (h + 1)`.
    mask_sums: Vec<Option<Vec<u32>>>,
    fields: Vec<Option<LinearImage<T>>>,
}

impl<'a, T: Real> PatchSampler<'a, T> {
    pub fn new(images: &'a [TrainingImage<T>], patch_size: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("training images"));
        }
        let mut mask_sums = Vec::with_capacity(images.len());
        let mut fields = Vec::with_capacity(images.len());
        for ti in images {
            let (w, h) = ti.image.dims();
            if w < patch_size || h < patch_size {
                return Err(Error::ImageTooSmall {
                    patch: patch_size,
                    width: w,
                    height: h,
                });
            }
            mask_sums.push(ti.image.mask().map(|m| summed_area(m, w, h)));
            fields.push(match &ti.truth {
                GroundTruth::Global(_) => None,
                GroundTruth::PerPixel(_) => Some(ti.truth.to_field(w, h)?),
            });
        }
        Ok(Self {
            images,
            patch_size,
            mask_sums,
            fields,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    fn touches_mask(&self, i: usize, x: usize, y: usize) -> bool {
        let Some(sums) = &self.mask_sums[i] else {
            return false;
        };
        let stride = self.images[i].image.width() + 1;
        let s = self.patch_size;
        let at = |xx: usize, yy: usize| sums[yy * stride + xx];
        at(x + s, y + s) + at(x, y) - at(x + s, y) - at(x, y + s) > 0
    }

    fn target(&self, i: usize, x: usize, y: usize) -> Result<Illuminant<T>> {
        match (&self.images[i].truth, &self.fields[i]) {
            (GroundTruth::Global(il), _) => Ok(*il),
            (_, Some(field)) => Illuminant::new(Patch::crop(field, x, y, self.patch_size).mean_rgb()),
            (GroundTruth::PerPixel(_), None) => unreachable!("per-pixel fields are built in new()"),
        }
    }

    /// Up to `per_image` samples from each image, in image order. Patches
    /// touching the mask or without contrast are redrawn.
    pub fn sample<R: Rng>(&self, rng: &mut R, per_image: usize) -> Result<Vec<Sample<T>>> {
        let mut out = Vec::with_capacity(per_image * self.images.len());
        for (i, ti) in self.images.iter().enumerate() {
            let (w, h) = ti.image.dims();
            let s = self.patch_size;
            let mut taken = 0;
            for _ in 0..per_image * MAX_DRAWS {
                if taken == per_image {
                    break;
                }
                let x = rng.random_range(0..=w - s);
                let y = rng.random_range(0..=h - s);
                if self.touches_mask(i, x, y) {
                    continue;
                }
                let (pre, low_contrast) = preprocess_patch(&Patch::crop(&ti.image, x, y, s));
                if low_contrast {
                    continue;
                }
                out.push(Sample {
                    pixels: pre.pixels,
                    target: self.target(i, x, y)?.rgb(),
                });
                taken += 1;
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("no usable patches in the training images"));
        }
        Ok(out)
    }
}

fn summed_area(mask: &[bool], w: usize, h: usize) -> Vec<u32> {
    let stride = w + 1;
    let mut s = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += mask[y * w + x] as u32;
            s[(y + 1) * stride + x + 1] = s[y * stride + x + 1] + row;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Median angular error of the normalized outputs on the validation patches.
    pub val_median_angle: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation loss, or the
    /// lowest training loss without a validation set.
    pub model: CnnModel<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochReport>,
}

/// Mean loss and median angular error over `samples`.
pub fn evaluate_samples<T: Real>(model: &CnnModel<T>, samples: &[Sample<T>]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let o = forward_raw(model, &s.pixels).output;
            let loss: f64 = (0..3).map(|k| (o[k] - s.target[k]).as_f64().powi(2)).sum();
            let est = Illuminant::from_raw_output(o)?;
            Ok((loss, angular_error(&est.rgb(), &s.target)?.as_f64()))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let angles: Vec<f64> = per.iter().map(|p| p.1).collect();
    Ok((loss, median(&angles).expect("nonempty")))
}

pub fn train<T: Real>(
    net: CnnConfig,
    data: &PatchSampler<T>,
    validation: Option<&PatchSampler<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_progress(net, data, validation, cfg, |_| {})
}

/// SGD with momentum. Every random draw comes from one generator seeded
/// by `cfg.seed`, so a run is reproducible bit for bit.
pub fn train_with_progress<T: Real>(
    net: CnnConfig,
    data: &PatchSampler<T>,
    validation: Option<&PatchSampler<T>>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    net.validate()?;
    for s in std::iter::once(data).chain(validation) {
        if s.patch_size() != net.patch_size {
            return Err(Error::InvalidParameter(format!(
                "sampler patch size {} differs from network patch size {}",
                s.patch_size(),
                net.patch_size
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CnnModel::<T>::init(net, &mut rng)?;
    let mut velocity = CnnModel::<T>::zeros(net)?;
    let val_set = match validation {
        Some(v) => Some(v.sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed), cfg.validation_patches_per_image.max(1))?),
        None => None,
    };
    let momentum = T::lit(cfg.momentum);

    let mut best: Option<(f64, usize, CnnModel<T>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let step = T::lit(-lr);
        let mut samples = data.sample(&mut rng, cfg.patches_per_image)?;
        samples.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, batch) in samples.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = loss_and_grad(&model, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss became {loss} at learning rate {lr}"),
                });
            }
            loss_sum += loss.as_f64() * batch.len() as f64;
            for (v, g) in velocity.tensors_mut().into_iter().zip(grad.tensors()) {
                for (vi, gi) in v.iter_mut().zip(g.iter()) {
                    *vi = momentum * *vi + step * *gi;
                }
            }
            model.add_scaled(&velocity, T::one());
            if !model.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("parameters became non-finite at learning rate {lr}"),
                });
            }
        }
        let train_loss = loss_sum / samples.len() as f64;
        let (val_loss, val_angle) = match &val_set {
            Some(v) => {
                let (l, a) = evaluate_samples(&model, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let report = EpochReport {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
            val_median_angle: val_angle,
        };
        progress(&report);
        history.push(report);

        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}
