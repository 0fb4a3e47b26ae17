//! Synthetic scenes under a diagonal image-formation model, multi-light
//! relighting, and dataset bookkeeping.

mod dataset;
mod relight;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Illuminant, LinearImage};
use crate::io::GroundTruth;
use crate::metrics::angular_error;
use crate::scalar::Real;

pub use dataset::{
    generate_scenes, load_entry, load_index, relight_dataset, three_folds, DatasetIndex, FoldSplit, ImageRecord, IndexEntry, Manifest,
    RelightSetConfig, SceneSetConfig, INDEX_FILE, MANIFEST_FILE,
};
pub use relight::{relight, RelightConfig, Relit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub width: usize,
    pub height: usize,
    /// Rectangles drawn over a random background surface.
    pub num_surfaces: usize,
    /// Bounds of the per-channel reflectance.
    pub reflectance_range: [f64; 2],
    /// Probability that a surface is achromatic (equal reflectance in all
    /// channels).
    pub neutral_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            num_surfaces: 20,
            reflectance_range: [0.05, 0.95],
            neutral_fraction: 0.5,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.reflectance_range;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("scene dimensions must be positive".into()));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!("reflectance range [{lo}, {hi}] must lie within [0, 1]")));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.neutral_fraction) {
            return Err(Error::InvalidParameter("noise must be >= 0 and the neutral fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Reflectance map of a random scene: a background surface overlaid with
/// `num_surfaces` axis-aligned rectangles. Rectangle sides span 1/5 to 1
/// times `min(1/2, 3 / sqrt(num_surfaces))` of the shorter image side,
/// so busier scenes get smaller surfaces.
pub fn render_reflectance<T: Real>(cfg: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Result<LinearImage<T>> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let [lo, hi] = cfg.reflectance_range;
    let surface = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        if rng.random::<f64>() < cfg.neutral_fraction {
            [rng.random_range(lo..=hi); 3]
        } else {
            [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
        }
    };
    let mut refl = vec![surface(rng); w * h];
    let side = w.min(h);
    let scale = (3.0 / (cfg.num_surfaces.max(1) as f64).sqrt()).min(0.5);
    let smax = ((side as f64 * scale) as usize).max(1);
    let smin = (smax / 5).max(1);
    for _ in 0..cfg.num_surfaces {
        let s = surface(rng);
        let (rw, rh) = (rng.random_range(smin..=smax), rng.random_range(smin..=smax));
        let x0 = rng.random_range(0..=w.saturating_sub(rw));
        let y0 = rng.random_range(0..=h.saturating_sub(rh));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                refl[y * w + x] = s;
            }
        }
    }
    LinearImage::from_fn(w, h, |x, y| refl[y * w + x].map(T::lit))
}

/// Renders `reflectance * illum` per channel, adds Gaussian noise and
/// clamps at zero. The ground truth is `illum` everywhere.
pub fn render_scene<T: Real>(cfg: &SyntheticSceneConfig, illum: &Illuminant<T>) -> Result<(LinearImage<T>, GroundTruth<T>)> {
    let mut rng = seeded(cfg.seed, 0);
    render_scene_with(cfg, illum, &mut rng)
}

pub(crate) fn render_scene_with<T: Real>(
    cfg: &SyntheticSceneConfig,
    illum: &Illuminant<T>,
    rng: &mut ChaCha8Rng,
) -> Result<(LinearImage<T>, GroundTruth<T>)> {
    let refl = render_reflectance::<T>(cfg, rng)?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let l = illum.rgb();
    let mut data = refl.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        let n = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
        *v = (*v * l[i % 3] + T::lit(n)).max(T::zero());
    }
    Ok((LinearImage::new(cfg.width, cfg.height, data)?, GroundTruth::Global(*illum)))
}

/// Generator for image `index` of a set seeded with `seed`: one stream
/// per image, so images can be produced in any order.
pub fn seeded(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random light color near a daylight-like curve running from warm
/// (reddish) to cool (bluish), with a small multiplicative jitter off the
/// curve.
pub fn sample_illuminant<T: Real, R: Rng>(rng: &mut R) -> Illuminant<T> {
    let t: f64 = rng.random();
    let jitter = Normal::new(0.0, 0.03).expect("valid std");
    let r = (0.45 + 0.5 * t) * (1.0 + jitter.sample(rng));
    let b = (0.85 - 0.55 * t) * (1.0 + jitter.sample(rng));
    Illuminant::new([T::lit(r.max(0.05)), T::one(), T::lit(b.max(0.05))]).expect("positive components")
}

/// `size` illuminants with pairwise angles of at least `min_angle_deg`.
/// A partial pool that keeps rejecting candidates is discarded and drawn
/// again, since early picks can leave no room for the rest.
pub fn illuminant_pool<T: Real, R: Rng>(rng: &mut R, size: usize, min_angle_deg: f64) -> Result<Vec<Illuminant<T>>> {
    let mut pool: Vec<Illuminant<T>> = Vec::with_capacity(size);
    let mut rejected = 0;
    for _ in 0..10_000 {
        if pool.len() == size {
            break;
        }
        if rejected == 100 {
            pool.clear();
            rejected = 0;
        }
        let cand = sample_illuminant::<T, R>(rng);
        let mut ok = true;
        for p in &pool {
            if angular_error(&p.rgb(), &cand.rgb())?.as_f64() < min_angle_deg {
                ok = false;
                break;
            }
        }
        if ok {
            pool.push(cand);
        } else {
            rejected += 1;
        }
    }
    if pool.len() < size {
        return Err(Error::InvalidParameter(format!(
            "could not draw {size} illuminants at least {min_angle_deg} degrees apart"
        )));
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic::{run_named, NamedEstimator};
    use rand::SeedableRng;

    fn quiet(seed: u64) -> SyntheticSceneConfig {
        SyntheticSceneConfig {
            width: 64,
            height: 48,
            noise_std: 0.0,
            seed,
            ..SyntheticSceneConfig::default()
        }
    }

    #[test]
    fn achromatic_light_scales_reflectance() {
        let s = 1.0 / 3f64.sqrt();
        let cfg = quiet(3);
        let (img, gt) = render_scene(&cfg, &Illuminant::new([1.0f64; 3]).unwrap()).unwrap();
        let refl = render_reflectance::<f64>(&cfg, &mut seeded(3, 0)).unwrap();
        for (a, b) in img.data().iter().zip(refl.data()) {
            assert!((a - b * s).abs() < 1e-15);
        }
        assert_eq!(gt, GroundTruth::Global(Illuminant::new([1.0; 3]).unwrap()));
    }

    #[test]
    fn white_surfaces_reproduce_the_light() {
        let cfg = SyntheticSceneConfig {
            reflectance_range: [1.0, 1.0],
            ..quiet(0)
        };
        let l = Illuminant::new([0.5f64, 1.0, 0.25]).unwrap();
        let (img, _) = render_scene(&cfg, &l).unwrap();
        assert!(img.pixels().all(|p| angular_error(&p, &l.rgb()).unwrap() < 1e-6));
    }

    #[test]
    fn noise_never_goes_negative() {
        let cfg = SyntheticSceneConfig {
            noise_std: 0.5,
            ..quiet(1)
        };
        let (img, _) = render_scene(&cfg, &Illuminant::new([0.2f64, 1.0, 0.3]).unwrap()).unwrap();
        assert!(img.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SyntheticSceneConfig { seed: 9, ..Default::default() };
        let l = Illuminant::new([0.6f32, 1.0, 0.4]).unwrap();
        assert_eq!(render_scene(&cfg, &l).unwrap(), render_scene(&cfg, &l).unwrap());
        let other = SyntheticSceneConfig { seed: 10, ..cfg };
        assert_ne!(render_scene(&cfg, &l).unwrap().0, render_scene(&other, &l).unwrap().0);
    }

    #[test]
    fn gray_world_is_close_on_busy_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut errors = Vec::new();
        for seed in 0..100 {
            let cfg = SyntheticSceneConfig {
                width: 128,
                height: 128,
                num_surfaces: 1000,
                neutral_fraction: 0.0,
                noise_std: 0.0,
                seed,
                ..SyntheticSceneConfig::default()
            };
            let l = sample_illuminant::<f64, _>(&mut rng);
            let (img, _) = render_scene(&cfg, &l).unwrap();
            let e = run_named(&img, NamedEstimator::GrayWorld).unwrap();
            errors.push(angular_error(&e.rgb(), &l.rgb()).unwrap());
        }
        let worst = errors.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 5.0, "worst gray world error {worst}");
    }

    #[test]
    fn pool_respects_minimum_angle() {
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = illuminant_pool::<f64, _>(&mut rng, 3, 10.0).unwrap();
            for i in 0..3 {
                for j in i + 1..3 {
                    assert!(angular_error(&pool[i].rgb(), &pool[j].rgb()).unwrap() >= 10.0);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(illuminant_pool::<f64, _>(&mut rng, 50, 20.0).is_err());
    }

    #[test]
    fn invalid_scene_configs() {
        let l = Illuminant::new([1.0f64; 3]).unwrap();
        for cfg in [
            SyntheticSceneConfig { reflectance_range: [0.5, 1.5], ..quiet(0) },
            SyntheticSceneConfig { noise_std: -1.0, ..quiet(0) },
            SyntheticSceneConfig { width: 0, ..quiet(0) },
        ] {
            assert!(render_scene(&cfg, &l).is_err());
        }
    }
}
