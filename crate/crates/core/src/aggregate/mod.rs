//! Local-to-global regression: pooled statistics of an estimate map fed to
//! one RBF epsilon-SVR per output channel.
//!
//! Feature layout (57 values):
//! - `0..27`: per-region channel means, regions row-major over a 3x3
//!   partition of the grid, RGB within each region,
//! - `27..54`: per-region population standard deviations, same order,
//! - `54..57`: per-channel medians over the whole grid.

mod format;
pub mod svr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_kernel_with_radius, normalized_convolution};
use crate::image::{EstimateMap, Illuminant};
use crate::metrics::angular_error;
use crate::scalar::{median, Real};

pub use format::{load_aggregator, read_aggregator, save_aggregator, write_aggregator, AggregatorMetadata};
pub use svr::{fit_svr, SvrFit, SvrParams};

pub const REGIONS: usize = 9;
pub const FEATURE_LEN: usize = REGIONS * 3 * 2 + 3;

/// Smoothing applied to the map before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolingConfig {
    pub smoothing: bool,
    /// In grid cells; the filter is always 5x5.
    pub sigma: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            smoothing: true,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures<T> {
    pub values: Vec<T>,
    /// Regions without valid cells, whose statistics were copied from the
    /// nearest region that had some.
    pub filled: [bool; REGIONS],
}

impl<T: Real> PooledFeatures<T> {
    pub fn means(&self) -> &[T] {
        &self.values[..27]
    }

    pub fn stds(&self) -> &[T] {
        &self.values[27..54]
    }

    pub fn medians(&self) -> &[T] {
        &self.values[54..]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }
}

/// Bounds of part `i` of `n` items split into three nearly equal runs.
fn third(n: usize, i: usize) -> std::ops::Range<usize> {
    i * n / 3..(i + 1) * n / 3
}

pub fn pool_features<T: Real>(map: &EstimateMap<T>, cfg: &PoolingConfig) -> Result<PooledFeatures<T>> {
    let (w, h) = (map.grid_width(), map.grid_height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidData(format!("estimate map {w}x{h} is smaller than 3x3")));
    }
    if map.valid_count() == 0 {
        return Err(Error::Empty("estimate map has no valid cells"));
    }
    let valid: Vec<bool> = map.cells().iter().map(|c| c.is_some()).collect();
    let planes: Vec<Vec<T>> = (0..3)
        .map(|c| map.cells().iter().map(|e| e.map_or(T::zero(), |e| e.rgb()[c])).collect())
        .collect();
    let smoothed: Vec<Vec<Option<T>>> = if cfg.smoothing {
        let kernel = gaussian_kernel_with_radius::<T>(cfg.sigma, 2);
        planes.iter().map(|p| normalized_convolution(p, &valid, w, h, &kernel)).collect()
    } else {
        planes
            .iter()
            .map(|p| p.iter().zip(&valid).map(|(v, ok)| ok.then_some(*v)).collect())
            .collect()
    };
    // Smoothing fills holes, but only cells that held an estimate are pooled.
    let cell = |i: usize| -> Option<[T; 3]> {
        if !valid[i] {
            return None;
        }
        Some([smoothed[0][i]?, smoothed[1][i]?, smoothed[2][i]?])
    };

    let mut stats: Vec<Option<([T; 3], [T; 3])>> = Vec::with_capacity(REGIONS);
    for ry in 0..3 {
        for rx in 0..3 {
            let members: Vec<[T; 3]> = third(h, ry)
                .flat_map(|y| third(w, rx).map(move |x| y * w + x))
                .filter_map(cell)
                .collect();
            if members.is_empty() {
                stats.push(None);
                continue;
            }
            let n = T::lit(members.len() as f64);
            let mut mean = [T::zero(); 3];
            let mut std = [T::zero(); 3];
            for c in 0..3 {
                mean[c] = members.iter().map(|m| m[c]).sum::<T>() / n;
                std[c] = (members.iter().map(|m| (m[c] - mean[c]) * (m[c] - mean[c])).sum::<T>() / n).sqrt();
            }
            stats.push(Some((mean, std)));
        }
    }
    let mut filled = [false; REGIONS];
    let mut resolved = Vec::with_capacity(REGIONS);
    for r in 0..REGIONS {
        match stats[r] {
            Some(s) => resolved.push(s),
            None => {
                filled[r] = true;
                let (ry, rx) = ((r / 3) as isize, (r % 3) as isize);
                let nearest = (0..REGIONS)
                    .filter(|&o| stats[o].is_some())
                    .min_by_key(|&o| {
                        let (oy, ox) = ((o / 3) as isize, (o % 3) as isize);
                        (oy - ry).pow(2) + (ox - rx).pow(2)
                    })
                    .ok_or(Error::Empty("smoothed map has no valid cells"))?;
                resolved.push(stats[nearest].expect("filtered"));
            }
        }
    }
    let all: Vec<[T; 3]> = (0..w * h).filter_map(cell).collect();
    let mut values = Vec::with_capacity(FEATURE_LEN);
    values.extend(resolved.iter().flat_map(|s| s.0));
    values.extend(resolved.iter().flat_map(|s| s.1));
    for c in 0..3 {
        let ch: Vec<T> = all.iter().map(|m| m[c]).collect();
        values.push(median(&ch).expect("at least one valid cell"));
    }
    Ok(PooledFeatures { values, filled })
}

/// Per-channel median of the valid raw estimates, floored and normalized.
pub fn median_pool_baseline<T: Real>(map: &EstimateMap<T>) -> Result<Illuminant<T>> {
    if map.valid_count() == 0 {
        return Err(Error::Empty("estimate map has no valid cells"));
    }
    let est: Vec<[T; 3]> = map.valid().map(|e| e.rgb()).collect();
    let mut out = [T::zero(); 3];
    for (c, o) in out.iter_mut().enumerate() {
        let ch: Vec<T> = est.iter().map(|e| e[c]).collect();
        *o = median(&ch).expect("nonempty");
    }
    Illuminant::from_raw_output(out)
}

/// Hyperparameter candidates; every combination is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            c: vec![1.0, 10.0, 100.0],
            gamma: vec![0.01, 0.1, 1.0],
            epsilon: vec![0.001, 0.01],
        }
    }
}

impl HyperGrid {
    /// Candidates in order: `C` outermost, then gamma, then epsilon.
    pub fn candidates(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &c in &self.c {
            for &g in &self.gamma {
                for &e in &self.epsilon {
                    out.push((c, g, e));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorModel {
    pub pooling: PoolingConfig,
    pub feature_mean: Vec<f64>,
    /// Population standard deviation per feature, 1 where it is zero.
    pub feature_scale: Vec<f64>,
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub channels: [SvrFit; 3],
}

impl AggregatorModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Raw regression output per channel for pooled features.
    pub fn predict_raw(&self, features: &[f64]) -> Result<[f64; 3]> {
        if features.len() != self.feature_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: (self.feature_mean.len(), 1),
                found: (features.len(), 1),
            });
        }
        let z = self.standardize(features);
        Ok([0, 1, 2].map(|c| self.channels[c].predict(&z, self.gamma)))
    }

    pub fn predict_features<T: Real>(&self, features: &PooledFeatures<T>) -> Result<Illuminant<T>> {
        let raw = self.predict_raw(&features.to_f64())?;
        Illuminant::from_raw_output(raw.map(T::lit))
    }

    pub fn support_vector_counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|c| self.channels[c].coef.len())
    }
}

pub fn predict_global<T: Real>(model: &AggregatorModel, map: &EstimateMap<T>) -> Result<Illuminant<T>> {
    model.predict_features(&pool_features(map, &model.pooling)?)
}

/// Outcome of one grid candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub validation_median: f64,
}

#[derive(Debug, Clone)]
pub struct AggregatorFit {
    pub model: AggregatorModel,
    pub validation_median: f64,
    pub scores: Vec<GridScore>,
    /// Training pairs left after removing exact duplicates.
    pub distinct_training: usize,
}

/// One training pair: pooled features and the ground-truth illuminant.
pub type LabeledFeatures = (Vec<f64>, [f64; 3]);

/// Fits one SVR per channel for every grid candidate and keeps the
/// candidate with the lowest median angular error on `validation` (the
/// first one on ties). With an empty validation set the training pairs
/// are scored instead. Exact duplicate training pairs are fitted once.
pub fn fit_aggregator(
    training: &[LabeledFeatures],
    validation: &[LabeledFeatures],
    grid: &HyperGrid,
    pooling: PoolingConfig,
) -> Result<AggregatorFit> {
    if training.len() < 10 {
        return Err(Error::InvalidData(format!("need at least 10 training pairs, got {}", training.len())));
    }
    let dim = training[0].0.len();
    for (f, t) in training.iter().chain(validation) {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: (dim, 1),
                found: (f.len(), 1),
            });
        }
        if f.iter().chain(t).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature or target".into()));
        }
    }
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("hyperparameter grid is empty".into()));
    }

    let mut distinct: Vec<&LabeledFeatures> = Vec::with_capacity(training.len());
    for pair in training {
        let same = |o: &&LabeledFeatures| {
            o.0.iter().zip(&pair.0).all(|(a, b)| a.to_bits() == b.to_bits())
                && o.1.iter().zip(&pair.1).all(|(a, b)| a.to_bits() == b.to_bits())
        };
        if !distinct.iter().any(same) {
            distinct.push(pair);
        }
    }
    let n = distinct.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| distinct.iter().map(|p| p.0[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| (distinct.iter().map(|p| (p.0[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    if std.iter().all(|&s| s <= 0.0) {
        return Err(Error::Degenerate("every feature is constant across the training set".into()));
    }
    let scale: Vec<f64> = std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
    let z: Vec<Vec<f64>> = distinct
        .iter()
        .map(|p| p.0.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let targets: Vec<[f64; 3]> = distinct
        .iter()
        .map(|p| Illuminant::new(p.1).map(|i| i.rgb()))
        .collect::<Result<_>>()?;
    let scoring: &[LabeledFeatures] = if validation.is_empty() { training } else { validation };

    let mut best: Option<(f64, AggregatorModel)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (c, gamma, epsilon) in candidates {
        let params = SvrParams::new(c, epsilon, gamma);
        let fit_channel = |ch: usize| {
            let y: Vec<f64> = targets.iter().map(|t| t[ch]).collect();
            fit_svr(&z, &y, &params)
        };
        let model = AggregatorModel {
            pooling,
            feature_mean: mean.clone(),
            feature_scale: scale.clone(),
            c,
            epsilon,
            gamma,
            channels: [fit_channel(0)?, fit_channel(1)?, fit_channel(2)?],
        };
        let errors: Vec<f64> = scoring
            .iter()
            .map(|(f, t)| {
                let est = Illuminant::from_raw_output(model.predict_raw(f)?)?;
                angular_error(&est.rgb(), t)
            })
            .collect::<Result<_>>()?;
        let med = median(&errors).expect("nonempty scoring set");
        scores.push(GridScore {
            c,
            gamma,
            epsilon,
            validation_median: med,
        });
        if best.as_ref().is_none_or(|(m, _)| med < *m) {
            best = Some((med, model));
        }
    }
    let (validation_median, model) = best.expect("nonempty grid");
    Ok(AggregatorFit {
        model,
        validation_median,
        scores,
        distinct_training: distinct.len(),
    })
}
