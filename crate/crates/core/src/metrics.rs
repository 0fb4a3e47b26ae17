//! Angular error and the summary statistics reported for every method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::scalar::{median, norm3, Real};

/// Angle in degrees between two RGB triplets, invariant to positive
/// scaling of either argument.
pub fn angular_error<T: Real>(a: &[T; 3], b: &[T; 3]) -> Result<T> {
    let (na, nb) = (norm3(a), norm3(b));
    if !(na > T::zero()) || !(nb > T::zero()) {
        return Err(Error::ZeroVector);
    }
    let (a, b) = (a.map(|v| v / na), b.map(|v| v / nb));
    let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).max(-T::one()).min(T::one());
    // acos loses half the digits near 0 and 180 degrees; the cross product
    // keeps small angles accurate.
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    Ok(norm3(&cross).atan2(cos).to_degrees())
}

/// Summary of a set of per-image angular errors, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub pct90: f64,
    pub max: f64,
    pub count: usize,
}

/// Median is interpolated between the two middle values for even counts;
/// the 90th percentile is the nearest-rank value at rank `ceil(0.9 n)`.
pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors to summarize"));
    }
    if let Some(bad) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::InvalidData(format!("angular error {bad} is not a finite nonnegative value")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // ceil(9n / 10) in integers; 0.9 * n in floating point can land just above an integer.
    let rank = (9 * n).div_ceil(10).max(1);
    Ok(ErrorStats {
        median: median(&sorted).expect("nonempty"),
        mean: sorted.iter().sum::<f64>() / n as f64,
        pct90: sorted[rank - 1],
        max: sorted[n - 1],
        count: n,
    })
}

/// Per-pixel angular errors; `None` where either input is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap<T> {
    pub width: usize,
    pub height: usize,
    pub degrees: Vec<Option<T>>,
}

impl<T: Real> ErrorMap<T> {
    pub fn valid(&self) -> impl Iterator<Item = T> + '_ {
        self.degrees.iter().flatten().copied()
    }

    /// Mean over unmasked pixels.
    pub fn mean(&self) -> Result<T> {
        let (sum, n) = self.valid().fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            return Err(Error::Empty("every pixel of the error map is masked"));
        }
        Ok(sum / T::from_usize(n))
    }
}

/// Angular error between two per-pixel illuminant fields. Pixels masked
/// in either field are excluded.
pub fn pixelwise_error_map<T: Real>(estimate: &LinearImage<T>, gt: &LinearImage<T>) -> Result<ErrorMap<T>> {
    if estimate.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: estimate.dims(),
        });
    }
    let (w, h) = gt.dims();
    let mut degrees = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if estimate.is_masked(x, y) || gt.is_masked(x, y) {
                degrees.push(None);
            } else {
                degrees.push(Some(angular_error(&estimate.pixel(x, y), &gt.pixel(x, y))?));
            }
        }
    }
    Ok(ErrorMap { width: w, height: h, degrees })
}

/// One histogram bin `[lo, hi)`; the last bin also collects values at or
/// beyond its upper edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub fn histogram(errors: &[f64], bin_width: f64, upper: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) || !(upper > 0.0) {
        return Err(Error::InvalidParameter("histogram bin width and range must be positive".into()));
    }
    let bins = (upper / bin_width).ceil() as usize;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for &e in errors {
        let i = ((e / bin_width).floor().max(0.0) as usize).min(bins - 1);
        out[i].count += 1;
    }
    Ok(out)
}
