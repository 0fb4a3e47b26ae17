use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{von_kries_correct_field, Illuminant, LinearImage};
use crate::io::GroundTruth;
use crate::scalar::{norm3, Real};

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelightConfig {
    pub num_illuminants: usize,
    /// Minimum distance between light centers as a fraction of the shorter
    /// image side.
    pub min_separation: f64,
    /// Width of the transition between regions; `None` uses 1/12 of the
    /// shorter side.
    pub smoothing_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for RelightConfig {
    fn default() -> Self {
        Self {
            num_illuminants: 2,
            min_separation: 1.0 / 3.0,
            smoothing_sigma: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relit<T> {
    pub image: LinearImage<T>,
    /// Unit-norm illuminant per pixel.
    pub truth: LinearImage<T>,
    /// Light centers in pixel coordinates.
    pub centers: Vec<[f64; 2]>,
    pub illuminants: Vec<Illuminant<T>>,
}

impl<T: Real> Relit<T> {
    pub fn ground_truth(&self) -> GroundTruth<T> {
        GroundTruth::PerPixel(self.truth.clone())
    }
}

/// Removes the original cast using `truth`, then lights the scene with
/// `num_illuminants` distinct lights from `pool`. Each light owns the
/// pixels closest to a random center; the ownership masks are blurred so
/// the lights blend smoothly across region borders.
pub fn relight<T: Real>(
    img: &LinearImage<T>,
    truth: &GroundTruth<T>,
    pool: &[Illuminant<T>],
    cfg: &RelightConfig,
) -> Result<Relit<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    relight_with(img, truth, pool, cfg, &mut rng)
}

pub(crate) fn relight_with<T: Real>(
    img: &LinearImage<T>,
    truth: &GroundTruth<T>,
    pool: &[Illuminant<T>],
    cfg: &RelightConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Relit<T>> {
    let k = cfg.num_illuminants;
    if k == 0 || k > pool.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot pick {k} illuminants from a pool of {}",
            pool.len()
        )));
    }
    if !(cfg.min_separation >= 0.0) || cfg.smoothing_sigma.is_some_and(|s| !(s >= 0.0)) {
        return Err(Error::InvalidParameter("separation and smoothing must be non-negative".into()));
    }
    let (w, h) = img.dims();
    let balanced = von_kries_correct_field(img, &truth.to_field(w, h)?)?;
    let illuminants: Vec<Illuminant<T>> = sample(rng, pool.len(), k).iter().map(|i| pool[i]).collect();
    let centers = place_centers(rng, w, h, k, cfg.min_separation * w.min(h) as f64)?;

    let sigma = cfg.smoothing_sigma.unwrap_or(w.min(h) as f64 / 12.0);
    let mut field = vec![T::zero(); w * h * 3];
    for l in 0..k {
        let owned: Vec<T> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                T::lit(if nearest(&centers, x, y) == l { 1.0 } else { 0.0 })
            })
            .collect();
        let weight = gaussian_blur(&owned, w, h, sigma);
        let rgb = illuminants[l].rgb();
        for (i, &wt) in weight.iter().enumerate() {
            for c in 0..3 {
                field[3 * i + c] += wt * rgb[c];
            }
        }
    }
    for px in field.chunks_exact_mut(3) {
        let n = norm3(&[px[0], px[1], px[2]]);
        px.iter_mut().for_each(|v| *v /= n);
    }
    let truth = LinearImage::new(w, h, field)?;
    let image = balanced.map_pixels(|x, y, p| {
        let l = truth.pixel(x, y);
        [p[0] * l[0], p[1] * l[1], p[2] * l[2]]
    })?;
    Ok(Relit {
        image,
        truth,
        centers,
        illuminants,
    })
}

fn nearest(centers: &[[f64; 2]], x: f64, y: f64) -> usize {
    let d2 = |c: &[f64; 2]| (c[0] - x).powi(2) + (c[1] - y).powi(2);
    let mut best = 0;
    for (i, c) in centers.iter().enumerate().skip(1) {
        if d2(c) < d2(&centers[best]) {
            best = i;
        }
    }
    best
}

fn place_centers(rng: &mut ChaCha8Rng, w: usize, h: usize, k: usize, min_dist: f64) -> Result<Vec<[f64; 2]>> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        let centers: Vec<[f64; 2]> = (0..k)
            .map(|_| [rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64])
            .collect();
        let ok = (0..k).all(|i| {
            (i + 1..k).all(|j| {
                let d = ((centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)).sqrt();
                d >= min_dist
            })
        });
        if ok {
            return Ok(centers);
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not place {k} light centers {min_dist:.1} pixels apart in a {w}x{h} image"
    )))
}
