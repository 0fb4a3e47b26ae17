use rayon::prelude::*;

use super::{forward_raw, Activations, CnnModel, OUTPUTS};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Samples per parallel work unit. Fixed so the reduction order, and
/// therefore every rounding, is independent of the thread count.
const CHUNK: usize = 8;

/// One training pair: preprocessed patch samples and a unit-length target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub pixels: Vec<T>,
    pub target: [T; 3],
}

/// Mean squared Euclidean distance between raw outputs and targets, and
/// its gradient with respect to every parameter.
pub fn loss_and_grad<T: Real>(model: &CnnModel<T>, batch: &[Sample<T>]) -> Result<(T, CnnModel<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let ps = model.config.patch_size;
    if let Some(bad) = batch.iter().find(|s| s.pixels.len() != ps * ps * 3) {
        return Err(Error::InvalidData(format!(
            "sample has {} values, expected {}",
            bad.pixels.len(),
            ps * ps * 3
        )));
    }
    let scale = T::one() / T::from_usize(batch.len());
    let partials: Vec<(T, CnnModel<T>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = CnnModel::zeros(model.config).expect("config already validated");
            let mut loss = T::zero();
            for s in chunk {
                let acts = forward_raw(model, &s.pixels);
                loss += backward(model, s, &acts, scale, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        grad.add_scaled(&g, T::one());
    }
    Ok((loss * scale, grad))
}

/// Accumulates `scale * d loss_i / d params` into `grad`; returns the
/// unscaled sample loss.
fn backward<T: Real>(model: &CnnModel<T>, s: &Sample<T>, acts: &Activations<T>, scale: T, grad: &mut CnnModel<T>) -> T {
    let cfg = &model.config;
    let (nh, cells2) = (cfg.hidden_units, cfg.cells() * cfg.cells());
    let two = T::lit(2.0);

    let mut loss = T::zero();
    let mut d_out = [T::zero(); OUTPUTS];
    for k in 0..OUTPUTS {
        let diff = acts.output[k] - s.target[k];
        loss += diff * diff;
        d_out[k] = two * diff * scale;
        grad.fc2_b[k] += d_out[k];
    }

    let mut d_hidden = vec![T::zero(); nh];
    let mut any_active = false;
    for j in 0..nh {
        let w = &model.fc2_w[j * OUTPUTS..(j + 1) * OUTPUTS];
        let g = &mut grad.fc2_w[j * OUTPUTS..(j + 1) * OUTPUTS];
        for k in 0..OUTPUTS {
            g[k] += acts.hidden[j] * d_out[k];
        }
        if acts.hidden_pre[j] > T::zero() {
            d_hidden[j] = w[0] * d_out[0] + w[1] * d_out[1] + w[2] * d_out[2];
            any_active = true;
        }
    }
    if !any_active {
        return loss;
    }

    for (b, d) in grad.fc1_b.iter_mut().zip(&d_hidden) {
        *b += *d;
    }
    for (i, &x) in acts.pooled.iter().enumerate() {
        let w = &model.fc1_w[i * nh..(i + 1) * nh];
        let g = &mut grad.fc1_w[i * nh..(i + 1) * nh];
        for (gj, &dj) in g.iter_mut().zip(&d_hidden) {
            *gj += x * dj;
        }
        let d_pooled = dot(w, &d_hidden);
        // Max pooling routes the whole gradient to the winning pixel.
        let f = i / cells2;
        let p = acts.argmax[i] as usize * 3;
        grad.conv_b[f] += d_pooled;
        for c in 0..3 {
            grad.conv_w[f * 3 + c] += d_pooled * s.pixels[p + c];
        }
    }
    loss
}

/// Dot product with eight independent accumulators so the loop vectorizes;
/// the summation order is fixed.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
