//! Linear RGB rasters, illuminant values, patch tiling and von Kries
//! correction.

use crate::error::{Error, Result};
use crate::scalar::{norm3, Real};

/// Smallest illuminant channel accepted as a divisor.
pub const DIVISION_EPSILON: f64 = 1e-6;

/// Floor applied to raw network/regressor outputs before normalization.
pub const OUTPUT_FLOOR: f64 = 1e-6;

/// Floating point linear-RGB raster, row-major and channel-interleaved.
///
/// Values are scene-referred (no gamma) and always finite and nonnegative.
/// The optional mask marks pixels to exclude from estimation, e.g. a color
/// checker; `true` means excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
    mask: Option<Vec<bool>>,
}

impl<T: Real> LinearImage<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidData(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidData(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidData(format!(
                "sample {pos} is {} (must be finite and nonnegative)",
                data[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            mask: None,
        })
    }

    /// Builds an image by evaluating `f` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Attaches an exclusion mask; its dimensions must match the image.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.width * self.height {
            return Err(Error::InvalidData(format!(
                "mask has {} entries, image has {} pixels",
                mask.len(),
                self.width * self.height
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn is_masked(&self, x: usize, y: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[y * self.width + x])
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Iterator over pixels not excluded by the mask.
    pub fn unmasked_pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.pixels()
            .enumerate()
            .filter(|(i, _)| !self.mask.as_ref().is_some_and(|m| m[*i]))
            .map(|(_, p)| p)
    }

    /// One color plane, row-major.
    pub fn channel(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn cast<U: Real>(&self) -> LinearImage<U> {
        LinearImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Applies a per-pixel map, keeping the mask. The result is revalidated.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, [T; 3]) -> [T; 3]) -> Result<Self> {
        let out = Self::from_fn(self.width, self.height, |x, y| f(x, y, self.pixel(x, y)))?;
        Ok(Self {
            mask: self.mask.clone(),
            ..out
        })
    }

    /// Multiplies every sample by `s` (`s >= 0`).
    pub fn scaled(&self, s: T) -> Result<Self> {
        self.map_pixels(|_, _, p| [p[0] * s, p[1] * s, p[2] * s])
    }
}

/// Light color as a nonnegative RGB direction of unit 2-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Illuminant<T>([T; 3]);

impl<T: Real> Illuminant<T> {
    /// Normalizes `rgb` to unit length. Fails on negative, non-finite or
    /// all-zero input.
    pub fn new(rgb: [T; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidData(format!(
                "illuminant components must be finite and nonnegative, got {:?}",
                rgb
            )));
        }
        let n = norm3(&rgb);
        if n <= T::zero() {
            return Err(Error::Degenerate("all-zero illuminant".into()));
        }
        Ok(Self([rgb[0] / n, rgb[1] / n, rgb[2] / n]))
    }

    /// Clamps each component to at least [`OUTPUT_FLOOR`] before
    /// normalizing, for raw model outputs that may be negative.
    pub fn from_raw_output(rgb: [T; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite model output {:?}", rgb)));
        }
        let floor = T::lit(OUTPUT_FLOOR);
        Self::new(rgb.map(|v| v.max(floor)))
    }

    /// The achromatic direction `(1, 1, 1) / sqrt(3)`.
    pub fn neutral() -> Self {
        let v = T::one() / T::lit(3.0).sqrt();
        Self([v, v, v])
    }

    #[inline]
    pub fn rgb(&self) -> [T; 3] {
        self.0
    }

    pub fn cast<U: Real>(&self) -> Illuminant<U> {
        Illuminant(self.0.map(|v| U::lit(v.as_f64())))
    }
}

/// Square image region with its source position.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    /// `size * size` RGB samples, row-major and interleaved.
    pub pixels: Vec<T>,
    /// False when the patch touches a masked pixel.
    pub valid: bool,
}

impl<T: Real> Patch<T> {
    pub fn new(x: usize, y: usize, size: usize, pixels: Vec<T>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size * 3 {
            return Err(Error::InvalidData(format!(
                "patch of size {size} needs {} samples, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            x,
            y,
            size,
            pixels,
            valid: true,
        })
    }

    /// Copies the `size x size` region at `(x, y)` out of `img`.
    pub fn crop(img: &LinearImage<T>, x: usize, y: usize, size: usize) -> Self {
        let mut pixels = Vec::with_capacity(size * size * 3);
        let mut valid = true;
        let w = img.width();
        for row in y..y + size {
            let start = (row * w + x) * 3;
            pixels.extend_from_slice(&img.data()[start..start + size * 3]);
            if let Some(mask) = img.mask() {
                valid &= !mask[row * w + x..row * w + x + size].iter().any(|&m| m);
            }
        }
        Self {
            x,
            y,
            size,
            pixels,
            valid,
        }
    }

    #[inline]
    pub fn pixel(&self, px: usize, py: usize) -> [T; 3] {
        let i = (py * self.size + px) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Per-channel mean over the patch.
    pub fn mean_rgb(&self) -> [T; 3] {
        let mut acc = [T::zero(); 3];
        for p in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        let n = T::from_usize(self.size * self.size);
        acc.map(|v| v / n)
    }
}

/// Tiles `img` row-major into `patch_size` squares every `stride` pixels.
/// Border patches that would extend past the image are discarded; patches
/// touching a masked pixel are kept but flagged invalid.
pub fn extract_patches<T: Real>(img: &LinearImage<T>, patch_size: usize, stride: usize) -> Result<Vec<Patch<T>>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    if patch_size == 0 || patch_size > img.width().min(img.height()) {
        return Err(Error::ImageTooSmall {
            patch: patch_size,
            width: img.width(),
            height: img.height(),
        });
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + patch_size <= img.height() {
        let mut x = 0;
        while x + patch_size <= img.width() {
            out.push(Patch::crop(img, x, y, patch_size));
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

/// Grid of per-patch illuminant estimates; `None` marks cells that were
/// masked out or otherwise unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMap<T> {
    grid_width: usize,
    grid_height: usize,
    patch_size: usize,
    cells: Vec<Option<Illuminant<T>>>,
}

impl<T: Real> EstimateMap<T> {
    pub fn new(grid_width: usize, grid_height: usize, patch_size: usize, cells: Vec<Option<Illuminant<T>>>) -> Result<Self> {
        if grid_width == 0 || grid_height == 0 || patch_size == 0 {
            return Err(Error::InvalidData("estimate map needs nonzero dimensions".into()));
        }
        if cells.len() != grid_width * grid_height {
            return Err(Error::DimensionMismatch {
                expected: (grid_width, grid_height),
                found: (cells.len(), 1),
            });
        }
        Ok(Self {
            grid_width,
            grid_height,
            patch_size,
            cells,
        })
    }

    /// Every cell holds the same estimate.
    pub fn uniform(grid_width: usize, grid_height: usize, patch_size: usize, est: Illuminant<T>) -> Result<Self> {
        Self::new(grid_width, grid_height, patch_size, vec![Some(est); grid_width * grid_height])
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn cells(&self) -> &[Option<Illuminant<T>>] {
        &self.cells
    }

    pub fn get(&self, gx: usize, gy: usize) -> Option<Illuminant<T>> {
        self.cells[gy * self.grid_width + gx]
    }

    pub fn valid(&self) -> impl Iterator<Item = Illuminant<T>> + '_ {
        self.cells.iter().flatten().copied()
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Invalid cells replaced by the nearest valid cell (squared grid
    /// distance, first in row-major order on ties).
    fn filled(&self) -> Result<Vec<Illuminant<T>>> {
        let valid: Vec<(usize, usize, Illuminant<T>)> = self
            .cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|e| (i % self.grid_width, i / self.grid_width, e)))
            .collect();
        if valid.is_empty() {
            return Err(Error::Empty("estimate map has no valid cells"));
        }
        Ok(self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.unwrap_or_else(|| {
                    let (cx, cy) = ((i % self.grid_width) as isize, (i / self.grid_width) as isize);
                    valid
                        .iter()
                        .min_by_key(|(x, y, _)| {
                            let dx = *x as isize - cx;
                            let dy = *y as isize - cy;
                            dx * dx + dy * dy
                        })
                        .map(|v| v.2)
                        .expect("nonempty")
                })
            })
            .collect())
    }

    /// Bilinearly interpolates the cell estimates (cell centers at patch
    /// centers) to a `width x height` per-pixel field of unit vectors.
    /// Coordinates outside the tiled area are clamped to the border cells.
    pub fn upsample(&self, width: usize, height: usize) -> Result<LinearImage<T>> {
        let cells = self.filled()?;
        let ps = T::from_usize(self.patch_size);
        let half = T::lit(0.5);
        let axis = |n: usize, cells_n: usize| -> Vec<(usize, usize, T)> {
            (0..n)
                .map(|p| {
                    let u = ((T::from_usize(p) + half) / ps - half).max(T::zero()).min(T::from_usize(cells_n - 1));
                    let i0 = u.floor().to_usize().unwrap_or(0).min(cells_n - 1);
                    let i1 = (i0 + 1).min(cells_n - 1);
                    (i0, i1, u - T::from_usize(i0))
                })
                .collect()
        };
        let xs = axis(width, self.grid_width);
        let ys = axis(height, self.grid_height);
        let gw = self.grid_width;
        LinearImage::from_fn(width, height, |x, y| {
            let (x0, x1, tx) = xs[x];
            let (y0, y1, ty) = ys[y];
            let c00 = cells[y0 * gw + x0].rgb();
            let c10 = cells[y0 * gw + x1].rgb();
            let c01 = cells[y1 * gw + x0].rgb();
            let c11 = cells[y1 * gw + x1].rgb();
            let mut v = [T::zero(); 3];
            for c in 0..3 {
                let top = c00[c] + (c10[c] - c00[c]) * tx;
                let bot = c01[c] + (c11[c] - c01[c]) * tx;
                v[c] = top + (bot - top) * ty;
            }
            let n = norm3(&v);
            v.map(|a| a / n)
        })
    }

    pub fn cast<U: Real>(&self) -> EstimateMap<U> {
        EstimateMap {
            grid_width: self.grid_width,
            grid_height: self.grid_height,
            patch_size: self.patch_size,
            cells: self.cells.iter().map(|c| c.map(|e| e.cast())).collect(),
        }
    }
}

fn guard_divisor<T: Real>(illum: &[T; 3]) -> Result<()> {
    for (channel, &v) in illum.iter().enumerate() {
        if !(v > T::lit(DIVISION_EPSILON)) {
            return Err(Error::DivisionGuard {
                channel,
                value: v.as_f64(),
            });
        }
    }
    Ok(())
}

/// Divides every pixel channel-wise by `illum` (diagonal von Kries model).
/// No clipping is applied.
pub fn von_kries_correct<T: Real>(img: &LinearImage<T>, illum: [T; 3]) -> Result<LinearImage<T>> {
    guard_divisor(&illum)?;
    let inv = illum.map(|v| T::one() / v);
    img.map_pixels(|_, _, p| [p[0] * inv[0], p[1] * inv[1], p[2] * inv[2]])
}

/// Per-pixel von Kries correction with an illuminant field of the same size.
pub fn von_kries_correct_field<T: Real>(img: &LinearImage<T>, field: &LinearImage<T>) -> Result<LinearImage<T>> {
    if img.dims() != field.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            found: field.dims(),
        });
    }
    for px in field.pixels() {
        guard_divisor(&px)?;
    }
    img.map_pixels(|x, y, p| {
        let l = field.pixel(x, y);
        [p[0] / l[0], p[1] / l[1], p[2] / l[2]]
    })
}

/// Per-pixel correction from a patch-level map, upsampled bilinearly.
pub fn von_kries_correct_map<T: Real>(img: &LinearImage<T>, map: &EstimateMap<T>) -> Result<LinearImage<T>> {
    let field = map.upsample(img.width(), img.height())?;
    von_kries_correct_field(img, &field)
}

/// Rescales `rgb` so its green component is one, so a correction with the
/// result leaves the green channel unchanged.
pub fn green_normalized<T: Real>(rgb: [T; 3]) -> Result<[T; 3]> {
    guard_divisor(&[rgb[1], rgb[1], rgb[1]])?;
    Ok(rgb.map(|v| v / rgb[1]))
}

/// Bilinear downscale so that `max(width, height) == target`, preserving
/// aspect ratio. Images already within `target` are returned unchanged.
/// The mask is resampled by nearest neighbour.
pub fn resize_max_side<T: Real>(img: &LinearImage<T>, target: usize) -> Result<LinearImage<T>> {
    if target == 0 {
        return Err(Error::InvalidParameter("resize target must be positive".into()));
    }
    let (w, h) = img.dims();
    let longest = w.max(h);
    if longest <= target {
        return Ok(img.clone());
    }
    let scale = target as f64 / longest as f64;
    let (nw, nh) = if w >= h {
        (target, ((h as f64 * scale).round() as usize).max(1))
    } else {
        (((w as f64 * scale).round() as usize).max(1), target)
    };
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let source = |dst: usize, s: f64, n: usize| -> (usize, usize, T) {
        let u = ((dst as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = u.floor() as usize;
        (i0, (i0 + 1).min(n - 1), T::lit(u - i0 as f64))
    };
    let xs: Vec<_> = (0..nw).map(|x| source(x, sx, w)).collect();
    let ys: Vec<_> = (0..nh).map(|y| source(y, sy, h)).collect();
    let out = LinearImage::from_fn(nw, nh, |x, y| {
        let (x0, x1, tx) = xs[x];
        let (y0, y1, ty) = ys[y];
        let (p00, p10, p01, p11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
        let mut v = [T::zero(); 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bot = p01[c] + (p11[c] - p01[c]) * tx;
            // Interpolating nonnegative samples can dip below zero by rounding.
            v[c] = (top + (bot - top) * ty).max(T::zero());
        }
        v
    })?;
    match img.mask() {
        None => Ok(out),
        Some(mask) => {
            let nearest = |dst: usize, s: f64, n: usize| (((dst as f64 + 0.5) * s) as usize).min(n - 1);
            let resized = (0..nh)
                .flat_map(|y| (0..nw).map(move |x| (x, y)))
                .map(|(x, y)| mask[nearest(y, sy, h) * w + nearest(x, sx, w)])
                .collect();
            out.with_mask(resized)
        }
    }
}
