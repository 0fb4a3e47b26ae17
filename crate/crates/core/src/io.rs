//! Image and sidecar file I/O.
//!
//! PFM is the native format (little-endian, scale `-1.0`, rows stored
//! bottom-to-top). 8- and 16-bit PNG are read as linear data scaled by the
//! nominal white (255 or 65535). Sidecars live next to the image and share
//! its stem: `<stem>.mask.png`, `<stem>.illum.json`, `<stem>.gt.pfm`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Illuminant, LinearImage};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pfm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "pfm" => Ok(ImageFormat::Pfm),
            Some(e) if e == "png" => Ok(ImageFormat::Png),
            _ => Err(Error::Format {
                path: path.to_path_buf(),
                format: "image",
                reason: "unrecognized extension (expected .pfm or .png)".into(),
            }),
        }
    }
}

/// `dir/stem.pfm` + `".mask.png"` -> `dir/stem.mask.png`.
pub fn sidecar_path(image: &Path, suffix: &str) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}{suffix}"))
}

pub const MASK_SUFFIX: &str = ".mask.png";
pub const ILLUM_SUFFIX: &str = ".illum.json";
pub const GT_MAP_SUFFIX: &str = ".gt.pfm";

/// Loads an image, attaching the `.mask.png` sidecar when one exists.
pub fn load_image<T: Real>(path: &Path, format: ImageFormat) -> Result<LinearImage<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = match format {
        ImageFormat::Pfm => read_pfm(path)?,
        ImageFormat::Png => read_png(path)?,
    };
    let mask_path = sidecar_path(path, MASK_SUFFIX);
    if mask_path.exists() {
        let mask = read_mask(&mask_path)?;
        if mask.0 != img.dims() {
            return Err(Error::DimensionMismatch {
                expected: img.dims(),
                found: mask.0,
            });
        }
        return img.with_mask(mask.1);
    }
    Ok(img)
}

/// Loads by extension.
pub fn load_image_auto<T: Real>(path: &Path) -> Result<LinearImage<T>> {
    load_image(path, ImageFormat::from_path(path)?)
}

fn pfm_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        format: "PFM",
        reason: reason.into(),
    }
}

pub fn read_pfm<T: Real>(path: &Path) -> Result<LinearImage<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|reason| pfm_error(path, reason))?
}

fn decode_pfm<T: Real>(bytes: &[u8]) -> std::result::Result<Result<LinearImage<T>>, String> {
    // Header: three whitespace-separated tokens after the magic, then a
    // single whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ascii header")?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format!("bad magic {other:?}")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad dimension {s:?}"));
    let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|_| format!("bad scale {:?}", tokens[3]))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("scale must be nonzero".into());
    }
    let little_endian = scale < 0.0;
    let count = width * height * channels;
    let raster = bytes.get(pos..).ok_or("missing raster")?;
    if raster.len() < count * 4 {
        return Err(format!("expected {} raster bytes, found {}", count * 4, raster.len()));
    }
    let mut data = vec![T::zero(); width * height * 3];
    for row in 0..height {
        // File rows run bottom-to-top.
        let y = height - 1 - row;
        for x in 0..width {
            for c in 0..3 {
                let src_c = if channels == 1 { 0 } else { c };
                let off = ((row * width + x) * channels + src_c) * 4;
                let b = [raster[off], raster[off + 1], raster[off + 2], raster[off + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                data[(y * width + x) * 3 + c] = T::from_f32(v);
            }
        }
    }
    Ok(LinearImage::new(width, height, data))
}

/// Encodes an RGB image as little-endian PFM.
pub fn encode_pfm<T: Real>(img: &LinearImage<T>) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for y in (0..h).rev() {
        for x in 0..w {
            for v in img.pixel(x, y) {
                out.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
    }
    out
}

pub fn write_pfm<T: Real>(path: &Path, img: &LinearImage<T>) -> Result<()> {
    write_bytes(path, &encode_pfm(img))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            format: "PNG",
            reason: e.to_string(),
        })
}

pub fn read_png<T: Real>(path: &Path) -> Result<LinearImage<T>> {
    let dynimg = decode_png(path)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<T> = match &dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => dynimg
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| T::lit(v as f64 / 255.0))
            .collect(),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => dynimg
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| T::lit(v as f64 / 65535.0))
            .collect(),
        other => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    LinearImage::new(w, h, data)
}

/// Reads an 8-bit mask PNG; nonzero samples mean "excluded".
pub fn read_mask(path: &Path) -> Result<((usize, usize), Vec<bool>)> {
    let dynimg = decode_png(path)?;
    let luma = dynimg.to_luma8();
    let dims = (luma.width() as usize, luma.height() as usize);
    Ok((dims, luma.into_raw().into_iter().map(|v| v != 0).collect()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::InvalidData("mask size does not match dimensions".into()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        format: "PNG",
        reason: e.to_string(),
    })
}

/// Writes an 8-bit sRGB-encoded preview: values are multiplied by
/// `exposure`, clipped to `[0, 1]` and gamma encoded.
pub fn write_preview_png<T: Real>(path: &Path, img: &LinearImage<T>, exposure: f64) -> Result<()> {
    let encode = |v: f64| {
        let v = (v * exposure).clamp(0.0, 1.0);
        let s = if v <= 0.003_130_8 {
            12.92 * v
        } else {
            1.055 * v.powf(1.0 / 2.4) - 0.055
        };
        (s * 255.0).round() as u8
    };
    let raw: Vec<u8> = img.data().iter().map(|v| encode(v.as_f64())).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("sized buffer");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        format: "PNG",
        reason: e.to_string(),
    })
}

/// Contents of a `.illum.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IllumSidecar {
    /// One normalized RGB triplet for the whole image.
    Global { illuminant: [f64; 3] },
    /// Path (relative to the sidecar) of a per-pixel ground-truth PFM.
    PerPixel { map: PathBuf },
}

/// Ground truth attached to an image.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth<T> {
    Global(Illuminant<T>),
    /// Per-pixel field of unit vectors, same size as the image.
    PerPixel(LinearImage<T>),
}

impl<T: Real> GroundTruth<T> {
    /// Per-pixel field of the requested size (a constant field for global
    /// ground truth).
    pub fn to_field(&self, width: usize, height: usize) -> Result<LinearImage<T>> {
        match self {
            GroundTruth::Global(e) => LinearImage::filled(width, height, e.rgb()),
            GroundTruth::PerPixel(f) if f.dims() == (width, height) => Ok(f.clone()),
            GroundTruth::PerPixel(f) => Err(Error::DimensionMismatch {
                expected: (width, height),
                found: f.dims(),
            }),
        }
    }

    /// Illuminant representing the whole image: the global value, or the
    /// normalized mean of the per-pixel field.
    pub fn global(&self) -> Result<Illuminant<T>> {
        match self {
            GroundTruth::Global(e) => Ok(*e),
            GroundTruth::PerPixel(f) => {
                let mut acc = [T::zero(); 3];
                for p in f.pixels() {
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
                Illuminant::new(acc)
            }
        }
    }

    pub fn cast<U: Real>(&self) -> GroundTruth<U> {
        match self {
            GroundTruth::Global(e) => GroundTruth::Global(e.cast()),
            GroundTruth::PerPixel(f) => GroundTruth::PerPixel(f.cast()),
        }
    }
}

pub fn read_illum_sidecar<T: Real>(path: &Path) -> Result<GroundTruth<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: IllumSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    match sidecar {
        IllumSidecar::Global { illuminant } => Ok(GroundTruth::Global(Illuminant::new(illuminant.map(T::lit))?)),
        IllumSidecar::PerPixel { map } => {
            let map_path = path.parent().map(|p| p.join(&map)).unwrap_or(map);
            Ok(GroundTruth::PerPixel(read_pfm(&map_path)?))
        }
    }
}

/// Writes the ground truth sidecar(s) for the image at `image_path`:
/// always `<stem>.illum.json`, plus `<stem>.gt.pfm` for per-pixel truth.
pub fn write_ground_truth<T: Real>(image_path: &Path, gt: &GroundTruth<T>) -> Result<PathBuf> {
    let json_path = sidecar_path(image_path, ILLUM_SUFFIX);
    let sidecar = match gt {
        GroundTruth::Global(e) => IllumSidecar::Global {
            illuminant: e.rgb().map(|v| v.as_f64()),
        },
        GroundTruth::PerPixel(field) => {
            let map_path = sidecar_path(image_path, GT_MAP_SUFFIX);
            write_pfm(&map_path, field)?;
            IllumSidecar::PerPixel {
                map: PathBuf::from(map_path.file_name().expect("file name")),
            }
        }
    };
    write_json(&json_path, &sidecar)?;
    Ok(json_path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
