//! Statistical illuminant estimators of the Gray-Edge family.
//!
//! Every estimator computes, per channel, the Minkowski `p`-mean of the
//! magnitude of the `n`-th order spatial derivative of the image after
//! Gaussian smoothing with scale `sigma`, then normalizes the resulting
//! triplet to unit length. `p = inf` takes the per-channel maximum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{Illuminant, LinearImage};
use crate::scalar::Real;

/// Minkowski norm exponent. Serialized as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Minkowski {
    Finite(f64),
    Infinity,
}

impl Serialize for Minkowski {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Minkowski::Finite(p) => s.serialize_f64(*p),
            Minkowski::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Minkowski {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => p.to_string().parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

impl FromStr for Minkowski {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Minkowski::Infinity);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad Minkowski norm {s:?}")))?;
        if p.is_infinite() && p > 0.0 {
            return Ok(Minkowski::Infinity);
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("Minkowski norm must be >= 1, got {p}")));
        }
        Ok(Minkowski::Finite(p))
    }
}

impl fmt::Display for Minkowski {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Minkowski::Finite(p) => write!(f, "{p}"),
            Minkowski::Infinity => f.write_str("inf"),
        }
    }
}

/// `(n, p, sigma)` parameters of the estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq4Config {
    /// Derivative order, 0, 1 or 2.
    pub order: u8,
    pub p: Minkowski,
    /// Gaussian pre-smoothing scale in pixels; 0 disables smoothing.
    pub sigma: f64,
}

impl Eq4Config {
    pub fn new(order: u8, p: Minkowski, sigma: f64) -> Result<Self> {
        let cfg = Self { order, p, sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order > 2 {
            return Err(Error::InvalidParameter(format!("derivative order {} not in {{0,1,2}}", self.order)));
        }
        if let Minkowski::Finite(p) = self.p {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("Minkowski norm must be >= 1, got {p}")));
            }
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// The six standard instantiations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NamedEstimator {
    GrayWorld,
    WhitePatch,
    ShadesOfGray,
    GeneralGrayWorld,
    GrayEdge1,
    GrayEdge2,
}

impl NamedEstimator {
    pub const ALL: [NamedEstimator; 6] = [
        NamedEstimator::GrayWorld,
        NamedEstimator::WhitePatch,
        NamedEstimator::ShadesOfGray,
        NamedEstimator::GeneralGrayWorld,
        NamedEstimator::GrayEdge1,
        NamedEstimator::GrayEdge2,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            NamedEstimator::GrayWorld => "GW",
            NamedEstimator::WhitePatch => "WP",
            NamedEstimator::ShadesOfGray => "SoG",
            NamedEstimator::GeneralGrayWorld => "gGW",
            NamedEstimator::GrayEdge1 => "GE1",
            NamedEstimator::GrayEdge2 => "GE2",
        }
    }

    pub fn config(&self) -> Eq4Config {
        let (order, p, sigma) = match self {
            NamedEstimator::GrayWorld => (0, Minkowski::Finite(1.0), 0.0),
            NamedEstimator::WhitePatch => (0, Minkowski::Infinity, 0.0),
            NamedEstimator::ShadesOfGray => (0, Minkowski::Finite(4.0), 0.0),
            NamedEstimator::GeneralGrayWorld => (0, Minkowski::Finite(9.0), 9.0),
            NamedEstimator::GrayEdge1 => (1, Minkowski::Finite(1.0), 6.0),
            NamedEstimator::GrayEdge2 => (2, Minkowski::Finite(1.0), 1.0),
        };
        Eq4Config { order, p, sigma }
    }
}

impl fmt::Display for NamedEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for NamedEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NamedEstimator::ALL
            .into_iter()
            .find(|e| e.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown estimator {s:?}")))
    }
}

#[inline]
fn at<T: Copy>(plane: &[T], w: usize, h: usize, x: isize, y: isize) -> T {
    let cx = x.clamp(0, w as isize - 1) as usize;
    let cy = y.clamp(0, h as isize - 1) as usize;
    plane[cy * w + cx]
}

/// Per-pixel magnitude of the `order`-th spatial derivative using central
/// differences with edge replication.
pub(crate) fn derivative_magnitude<T: Real>(plane: &[T], w: usize, h: usize, order: u8) -> Vec<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            let f = |dx: isize, dy: isize| at(plane, w, h, x + dx, y + dy);
            let v = match order {
                0 => f(0, 0).abs(),
                1 => {
                    let gx = (f(1, 0) - f(-1, 0)) * half;
                    let gy = (f(0, 1) - f(0, -1)) * half;
                    (gx * gx + gy * gy).sqrt()
                }
                _ => {
                    let c = f(0, 0);
                    let gxx = f(1, 0) - two * c + f(-1, 0);
                    let gyy = f(0, 1) - two * c + f(0, -1);
                    // Mixed term as the central difference of the x-derivative,
                    // each one clamped at its own position.
                    let fx_at = |yy: isize| {
                        (at(plane, w, h, x + 1, yy) - at(plane, w, h, x - 1, yy)) * half
                    };
                    let cy = |d: isize| (y + d).clamp(0, h as isize - 1);
                    let gxy = (fx_at(cy(1)) - fx_at(cy(-1))) * half;
                    (gxx * gxx + gyy * gyy + two * gxy * gxy).sqrt()
                }
            };
            out.push(v);
        }
    }
    out
}

/// Minkowski `p`-mean of `values` restricted to `keep`, computed relative to
/// the maximum so large exponents do not underflow.
fn minkowski_mean<T: Real>(values: &[T], keep: &[bool], p: Minkowski) -> T {
    let max = values
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(v, _)| *v)
        .fold(T::zero(), T::max);
    match p {
        Minkowski::Infinity => max,
        Minkowski::Finite(p) => {
            if max <= T::zero() {
                return T::zero();
            }
            let pe = T::lit(p);
            let (sum, n) = values
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .fold((T::zero(), 0usize), |(s, n), (v, _)| (s + (*v / max).powf(pe), n + 1));
            (sum / T::from_usize(n)).powf(T::one() / pe) * max
        }
    }
}

/// Estimates the illuminant of `img` with the `(n, p, sigma)` estimator.
/// Masked pixels are excluded from the statistic (smoothing and derivatives
/// still see them).
pub fn estimate_eq4<T: Real>(img: &LinearImage<T>, cfg: &Eq4Config) -> Result<Illuminant<T>> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let keep: Vec<bool> = match img.mask() {
        Some(m) => m.iter().map(|&masked| !masked).collect(),
        None => vec![true; w * h],
    };
    if !keep.iter().any(|&k| k) {
        return Err(Error::Empty("every pixel is masked"));
    }
    let mut stat = [T::zero(); 3];
    for (c, s) in stat.iter_mut().enumerate() {
        let smoothed = gaussian_blur(&img.channel(c), w, h, cfg.sigma);
        let mag = derivative_magnitude(&smoothed, w, h, cfg.order);
        *s = minkowski_mean(&mag, &keep, cfg.p);
    }
    if stat.iter().all(|v| *v <= T::zero()) {
        return Err(Error::Degenerate(format!(
            "estimator (n={}, p={}, sigma={}) produced an all-zero statistic",
            cfg.order, cfg.p, cfg.sigma
        )));
    }
    Illuminant::new(stat)
}

pub fn run_named<T: Real>(img: &LinearImage<T>, name: NamedEstimator) -> Result<Illuminant<T>> {
    estimate_eq4(img, &name.config())
}
