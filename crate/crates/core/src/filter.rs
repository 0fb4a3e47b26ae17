//! Separable Gaussian filtering on single-channel planes.

use crate::scalar::Real;

/// Sampled Gaussian truncated at `ceil(3 sigma)` and normalized to unit sum.
/// `sigma <= 0` yields the identity kernel `[1]`.
pub fn gaussian_kernel<T: Real>(sigma: f64) -> Vec<T> {
    if sigma <= 0.0 {
        return vec![T::one()];
    }
    let radius = (3.0 * sigma).ceil() as usize;
    gaussian_kernel_with_radius(sigma, radius)
}

/// Sampled Gaussian with an explicit radius (kernel length `2 * radius + 1`).
pub fn gaussian_kernel_with_radius<T: Real>(sigma: f64, radius: usize) -> Vec<T> {
    if sigma <= 0.0 {
        return vec![T::one()];
    }
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / total)).collect()
}

/// Convolves a `width x height` plane with `kernel` along both axes,
/// replicating edge samples outside the plane.
pub fn convolve_separable<T: Real>(plane: &[T], width: usize, height: usize, kernel: &[T]) -> Vec<T> {
    debug_assert_eq!(plane.len(), width * height);
    if kernel.len() == 1 {
        return plane.iter().map(|&v| v * kernel[0]).collect();
    }
    let radius = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![T::zero(); plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = T::zero();
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * row[clamp(x as isize + k as isize - radius, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![T::zero(); plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = T::zero();
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * tmp[clamp(y as isize + k as isize - radius, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Gaussian blur with edge replication; `sigma <= 0` returns a copy.
pub fn gaussian_blur<T: Real>(plane: &[T], width: usize, height: usize, sigma: f64) -> Vec<T> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    convolve_separable(plane, width, height, &gaussian_kernel::<T>(sigma))
}

/// Normalized convolution: each output is the kernel-weighted mean of the
/// in-bounds samples whose `weights` entry is nonzero. Samples outside the
/// plane contribute nothing. Outputs with zero accumulated weight are `None`.
pub fn normalized_convolution<T: Real>(
    plane: &[T],
    valid: &[bool],
    width: usize,
    height: usize,
    kernel: &[T],
) -> Vec<Option<T>> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut num = T::zero();
            let mut den = T::zero();
            for (ky, &wy) in kernel.iter().enumerate() {
                let sy = y + ky as isize - radius;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for (kx, &wx) in kernel.iter().enumerate() {
                    let sx = x + kx as isize - radius;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    let idx = sy as usize * width + sx as usize;
                    if valid[idx] {
                        num += wy * wx * plane[idx];
                        den += wy * wx;
                    }
                }
            }
            out.push(if den > T::zero() { Some(num / den) } else { None });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_truncated_at_three_sigma() {
        let k = gaussian_kernel::<f64>(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k[6] > k[5] && (k[5] - k[7]).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_constants() {
        let plane = vec![0.25f64; 7 * 5];
        let out = gaussian_blur(&plane, 7, 5, 3.0);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn normalized_convolution_ignores_invalid_samples() {
        let plane = vec![1.0f64, 100.0, 1.0, 1.0];
        let valid = vec![true, false, true, true];
        let k = gaussian_kernel_with_radius::<f64>(1.0, 2);
        let out = normalized_convolution(&plane, &valid, 2, 2, &k);
        assert!(out.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
    }
}
