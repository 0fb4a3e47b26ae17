//! Aggregator container, all little-endian:
//! magic, `u32` version, `u32` feature count, `u32` smoothing flag,
//! `f64` sigma, C, epsilon, gamma, the standardization means and scales,
//! then per channel `u32` support-vector count, `f64` bias, coefficients
//! and support vectors. Values are stored as `f64`, so a round trip
//! reproduces predictions exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AggregatorModel, GridScore, PoolingConfig, SvrFit};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ILLUMSVR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorMetadata {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub validation_median: f64,
    pub distinct_training: usize,
    pub support_vectors: [usize; 3],
    pub pooling: PoolingConfig,
    pub scores: Vec<GridScore>,
}

pub fn write_aggregator<W: Write>(m: &AggregatorModel, mut w: W) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let dim = m.feature_mean.len();
    for v in [VERSION, dim as u32, m.pooling.smoothing as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
    for v in [m.pooling.sigma, m.c, m.epsilon, m.gamma] {
        put(v);
    }
    m.feature_mean.iter().chain(&m.feature_scale).for_each(|&v| put(v));
    for ch in &m.channels {
        buf.extend_from_slice(&(ch.coef.len() as u32).to_le_bytes());
        buf.extend_from_slice(&ch.bias.to_le_bytes());
        for v in ch.coef.iter().chain(ch.support.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(self.err("truncated file"));
        }
        self.at += n;
        Ok(&self.bytes[self.at - n..self.at])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn err(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            format: "aggregator",
            reason: reason.to_string(),
        }
    }
}

/// `path` only labels errors.
pub fn read_aggregator(bytes: &[u8], path: &Path) -> Result<AggregatorModel> {
    let mut c = Cursor { bytes, at: 0, path };
    if c.take(8)? != MAGIC {
        return Err(c.err("missing aggregator header"));
    }
    if c.u32()? != VERSION {
        return Err(c.err("unsupported aggregator version"));
    }
    let dim = c.u32()? as usize;
    let smoothing = c.u32()? != 0;
    let sigma = c.f64()?;
    let (cc, epsilon, gamma) = (c.f64()?, c.f64()?, c.f64()?);
    let feature_mean = c.f64s(dim)?;
    let feature_scale = c.f64s(dim)?;
    if feature_scale.iter().any(|&s| !(s > 0.0)) || !(gamma > 0.0) {
        return Err(c.err("invalid standardization or kernel parameters"));
    }
    let mut channel = || -> Result<SvrFit> {
        let n = c.u32()? as usize;
        let bias = c.f64()?;
        let coef = c.f64s(n)?;
        let flat = c.f64s(n * dim)?;
        let support = if dim == 0 { vec![Vec::new(); n] } else { flat.chunks(dim).map(<[f64]>::to_vec).collect() };
        Ok(SvrFit { support, coef, bias })
    };
    let channels = [channel()?, channel()?, channel()?];
    if c.at != bytes.len() {
        return Err(c.err("trailing bytes"));
    }
    Ok(AggregatorModel {
        pooling: PoolingConfig { smoothing, sigma },
        feature_mean,
        feature_scale,
        c: cc,
        epsilon,
        gamma,
        channels,
    })
}

pub fn save_aggregator(path: &Path, model: &AggregatorModel) -> Result<()> {
    let mut buf = Vec::new();
    write_aggregator(model, &mut buf).expect("writing to memory");
    crate::io::write_bytes(path, &buf)
}

pub fn load_aggregator(path: &Path) -> Result<AggregatorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_aggregator(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::super::{fit_aggregator, HyperGrid, LabeledFeatures, FEATURE_LEN};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_reproduces_predictions_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<LabeledFeatures> = (0..20)
            .map(|_| {
                let f: Vec<f64> = (0..FEATURE_LEN).map(|_| rng.random()).collect();
                let t = [0.2 + f[0], 0.7, 0.3 + f[1]];
                (f, t)
            })
            .collect();
        let fit = fit_aggregator(&pairs[..14], &pairs[14..], &HyperGrid::default(), PoolingConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_aggregator(&fit.model, &mut buf).unwrap();
        let back = read_aggregator(&buf, Path::new("mem")).unwrap();
        assert_eq!(back, fit.model);
        for (f, _) in &pairs {
            let a = fit.model.predict_raw(f).unwrap();
            let b = back.predict_raw(f).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
        assert!(read_aggregator(&buf[..buf.len() - 1], Path::new("mem")).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_aggregator(&extra, Path::new("mem")).is_err());
    }
}
