//! The adaptive estimator (patch map, single/multiple decision, global
//! regression or local correction) and the evaluation harness.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{load_aggregator, median_pool_baseline, pool_features, predict_global, AggregatorModel, LabeledFeatures, PoolingConfig};
use crate::classic::{run_named, NamedEstimator};
use crate::cnn::{estimate_map, load_model, CnnModel, TrainingImage};
use crate::datagen::{load_entry, DatasetIndex};
use crate::detect::{detect_multiple, Decision, Detection, DetectorConfig};
use crate::error::{Error, Result};
use crate::image::{green_normalized, von_kries_correct, von_kries_correct_field, EstimateMap, Illuminant, LinearImage};
use crate::io::{write_bytes, write_json, GroundTruth};
use crate::metrics::{angular_error, error_stats, histogram, pixelwise_error_map, ErrorStats, HistogramBin};
use crate::scalar::Real;

/// Longest side of the pixel grid sampled when measuring how much a
/// per-pixel ground truth varies.
const ORACLE_SAMPLES_PER_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Auto,
    ForceSingle,
    ForceMulti,
    /// Decide from the ground truth instead of the detector.
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Auto, Mode::ForceSingle, Mode::ForceMulti, Mode::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Auto => "auto",
            Mode::ForceSingle => "force-single",
            Mode::ForceMulti => "force-multi",
            Mode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?} (expected auto, force-single, force-multi or oracle)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cnn: PathBuf,
    /// Without an aggregator the single-light path uses the per-channel
    /// median of the patch estimates.
    pub aggregator: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub mode: Mode,
    /// Scale corrections so the green channel is left unchanged.
    pub green_preserving: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cnn: PathBuf::from("cnn.bin"),
            aggregator: None,
            detector: DetectorConfig::default(),
            mode: Mode::Auto,
            green_preserving: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Models {
    pub cnn: CnnModel<f32>,
    pub aggregator: Option<AggregatorModel>,
}

impl Models {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            cnn: load_model(&cfg.cnn)?,
            aggregator: cfg.aggregator.as_deref().map(load_aggregator).transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate<T> {
    Global(Illuminant<T>),
    /// Per-pixel illuminant field, same size as the image.
    Local(LinearImage<T>),
}

impl<T: Real> Estimate<T> {
    pub fn to_field(&self, width: usize, height: usize) -> Result<LinearImage<T>> {
        match self {
            Estimate::Global(e) => LinearImage::filled(width, height, e.rgb()),
            Estimate::Local(f) => Ok(f.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub decision: Decision,
    /// Present when the detector ran (auto mode).
    pub detection: Option<Detection>,
    pub map: EstimateMap<T>,
    pub estimate: Estimate<T>,
    pub corrected: LinearImage<T>,
}

/// Multiple lights iff sampled pixels of the ground-truth field span more
/// than `threshold_deg`.
pub fn oracle_decision<T: Real>(truth: &GroundTruth<T>, threshold_deg: f64) -> Result<Decision> {
    let field = match truth {
        GroundTruth::Global(_) => return Ok(Decision::Single),
        GroundTruth::PerPixel(f) => f,
    };
    let (w, h) = field.dims();
    let step = w.max(h).div_ceil(ORACLE_SAMPLES_PER_SIDE).max(1);
    let mut samples = Vec::new();
    for y in (0..h).step_by(step) {
        for x in (0..w).step_by(step) {
            if !field.is_masked(x, y) {
                samples.push(field.pixel(x, y));
            }
        }
    }
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            if angular_error(a, b)?.as_f64() > threshold_deg {
                return Ok(Decision::Multiple);
            }
        }
    }
    Ok(Decision::Single)
}

/// Von Kries correction with a global or per-pixel estimate.
pub fn apply_correction<T: Real>(img: &LinearImage<T>, est: &Estimate<T>, green_preserving: bool) -> Result<LinearImage<T>> {
    match est {
        Estimate::Global(e) if green_preserving => von_kries_correct(img, green_normalized(e.rgb())?),
        Estimate::Global(e) => von_kries_correct(img, e.rgb()),
        Estimate::Local(f) if green_preserving => {
            let scaled = f.map_pixels(|_, _, p| green_normalized(p).unwrap_or(p))?;
            von_kries_correct_field(img, &scaled)
        }
        Estimate::Local(f) => von_kries_correct_field(img, f),
    }
}

/// Global estimate from a patch map: the regressor when available, the
/// median of the patch estimates otherwise.
pub fn global_from_map<T: Real>(models: &Models, map: &EstimateMap<T>) -> Result<Illuminant<T>> {
    match &models.aggregator {
        Some(a) => predict_global(a, map),
        None => median_pool_baseline(map),
    }
}

/// `truth` is only consulted in oracle mode, where it is required.
pub fn run_pipeline(
    img: &LinearImage<f32>,
    truth: Option<&GroundTruth<f32>>,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput<f32>> {
    run_pipeline_on_map(img, estimate_map(&models.cnn, img)?, truth, models, cfg)
}

/// The pipeline after the CNN stage, for a map computed by the caller.
pub fn run_pipeline_on_map(
    img: &LinearImage<f32>,
    map: EstimateMap<f32>,
    truth: Option<&GroundTruth<f32>>,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput<f32>> {
    let (decision, detection, estimate) = decide(img, &map, truth, models, cfg)?;
    let corrected = apply_correction(img, &estimate, cfg.green_preserving)?;
    Ok(PipelineOutput {
        decision,
        detection,
        map,
        estimate,
        corrected,
    })
}

fn decide(
    img: &LinearImage<f32>,
    map: &EstimateMap<f32>,
    truth: Option<&GroundTruth<f32>>,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<(Decision, Option<Detection>, Estimate<f32>)> {
    let (decision, detection) = match cfg.mode {
        Mode::ForceSingle => (Decision::Single, None),
        Mode::ForceMulti => (Decision::Multiple, None),
        Mode::Oracle => {
            let truth = truth.ok_or_else(|| Error::InvalidParameter("oracle mode needs ground truth".into()))?;
            (oracle_decision(truth, cfg.detector.angle_threshold_deg)?, None)
        }
        Mode::Auto => {
            let d = detect_multiple(map, &cfg.detector)?;
            (d.decision, Some(d))
        }
    };
    let estimate = match decision {
        Decision::Single => Estimate::Global(global_from_map(models, map)?),
        Decision::Multiple => Estimate::Local(map.upsample(img.width(), img.height())?),
    };
    Ok((decision, detection, estimate))
}

/// Methods the harness can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Always the achromatic light.
    DoNothing,
    Classic(NamedEstimator),
    /// Per-channel median of the patch estimates.
    CnnMedian,
    /// Regressor on pooled patch estimates.
    CnnRegressor,
    /// Upsampled patch map.
    CnnLocal,
    Pipeline(Mode),
}

impl Method {
    pub fn all() -> Vec<Method> {
        let mut out = vec![Method::DoNothing];
        out.extend(NamedEstimator::ALL.map(Method::Classic));
        out.extend([Method::CnnMedian, Method::CnnRegressor, Method::CnnLocal]);
        out.extend(Mode::ALL.map(Method::Pipeline));
        out
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::DoNothing => "DN",
            Method::Classic(n) => n.short_name(),
            Method::CnnMedian => "cnn-median",
            Method::CnnRegressor => "cnn-svr",
            Method::CnnLocal => "cnn-local",
            Method::Pipeline(m) => m.name(),
        }
    }

    pub fn needs_cnn(&self) -> bool {
        !matches!(self, Method::DoNothing | Method::Classic(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// One image scored by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: String,
    pub method: String,
    pub error_deg: f64,
    /// Single/multiple decision for pipeline methods.
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub stats: ErrorStats,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub images: Vec<ImageResult>,
    pub methods: Vec<MethodSummary>,
}

impl Report {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn errors(&self, method: &str) -> Vec<f64> {
        self.images.iter().filter(|r| r.method == method).map(|r| r.error_deg).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub upper: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_width: 0.5,
            upper: 20.0,
        }
    }
}

/// Per-image error of an estimate: the angle between triplets when both
/// sides are global, otherwise the mean pixelwise angle over pixels not
/// masked in the image.
pub fn estimate_error<T: Real>(img: &LinearImage<T>, est: &Estimate<T>, truth: &GroundTruth<T>) -> Result<f64> {
    if let (Estimate::Global(e), GroundTruth::Global(g)) = (est, truth) {
        return Ok(angular_error(&e.rgb(), &g.rgb())?.as_f64());
    }
    let (w, h) = img.dims();
    let mut gt = truth.to_field(w, h)?;
    if let Some(mask) = img.mask() {
        gt = gt.with_mask(mask.to_vec())?;
    }
    Ok(pixelwise_error_map(&est.to_field(w, h)?, &gt)?.mean()?.as_f64())
}

/// Scores every method on the listed entries (all entries when `subset`
/// is `None`). Images are processed in parallel; results keep index
/// order, grouped by image.
pub fn evaluate(
    index: &DatasetIndex,
    subset: Option<&[usize]>,
    models: Option<&Models>,
    cfg: &PipelineConfig,
    methods: &[Method],
    hist: &HistogramConfig,
) -> Result<Report> {
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods to evaluate".into()));
    }
    if methods.iter().any(Method::needs_cnn) && models.is_none() {
        return Err(Error::InvalidParameter("CNN-based methods need a trained model".into()));
    }
    if methods.contains(&Method::CnnRegressor) && models.is_some_and(|m| m.aggregator.is_none()) {
        return Err(Error::InvalidParameter("method cnn-svr needs an aggregator model".into()));
    }
    let ids: Vec<usize> = subset.map(<[usize]>::to_vec).unwrap_or_else(|| (0..index.len()).collect());
    if ids.is_empty() {
        return Err(Error::Empty("no images to evaluate"));
    }
    let per_image: Vec<Vec<ImageResult>> = ids
        .par_iter()
        .map(|&i| evaluate_image(index, i, models, cfg, methods))
        .collect::<Result<_>>()?;
    let images: Vec<ImageResult> = per_image.into_iter().flatten().collect();
    let mut summaries = Vec::with_capacity(methods.len());
    for m in methods {
        let errs: Vec<f64> = images.iter().filter(|r| r.method == m.name()).map(|r| r.error_deg).collect();
        summaries.push(MethodSummary {
            method: m.name().to_string(),
            stats: error_stats(&errs)?,
            histogram: histogram(&errs, hist.bin_width, hist.upper)?,
        });
    }
    Ok(Report {
        images,
        methods: summaries,
    })
}

fn evaluate_image(
    index: &DatasetIndex,
    i: usize,
    models: Option<&Models>,
    cfg: &PipelineConfig,
    methods: &[Method],
) -> Result<Vec<ImageResult>> {
    let (img, truth) = load_entry::<f32>(index, i)?;
    let name = index.entries[i].image.display().to_string();
    let map = match models {
        Some(m) if methods.iter().any(Method::needs_cnn) => Some(estimate_map(&m.cnn, &img)?),
        _ => None,
    };
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let o = run_method(method, &img, Some(&truth), models, cfg, map.as_ref())?;
        out.push(ImageResult {
            image: name.clone(),
            method: method.name().to_string(),
            error_deg: estimate_error(&img, &o.estimate, &truth)?,
            decision: o.decision,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub estimate: Estimate<f32>,
    /// Single/multiple decision for pipeline methods.
    pub decision: Option<Decision>,
    pub detection: Option<Detection>,
}

/// Runs one method on one image. `map` may carry a precomputed patch map
/// for the CNN methods; `truth` is only needed in oracle mode.
pub fn run_method(
    method: Method,
    img: &LinearImage<f32>,
    truth: Option<&GroundTruth<f32>>,
    models: Option<&Models>,
    cfg: &PipelineConfig,
    map: Option<&EstimateMap<f32>>,
) -> Result<MethodOutput> {
    let global = |e: Illuminant<f32>| MethodOutput {
        estimate: Estimate::Global(e),
        decision: None,
        detection: None,
    };
    let models = match (method.needs_cnn(), models) {
        (false, _) => None,
        (true, Some(m)) => Some(m),
        (true, None) => return Err(Error::InvalidParameter(format!("method {method} needs a CNN model"))),
    };
    let owned;
    let map = match (map, models) {
        (Some(m), _) => Some(m),
        (None, Some(m)) => {
            owned = estimate_map(&m.cnn, img)?;
            Some(&owned)
        }
        (None, None) => None,
    };
    Ok(match method {
        Method::DoNothing => global(Illuminant::neutral()),
        Method::Classic(n) => global(run_named(img, n)?),
        Method::CnnMedian => global(median_pool_baseline(map.expect("map"))?),
        Method::CnnRegressor => {
            let agg = models
                .and_then(|m| m.aggregator.as_ref())
                .ok_or_else(|| Error::InvalidParameter("method cnn-svr needs an aggregator model".into()))?;
            global(predict_global(agg, map.expect("map"))?)
        }
        Method::CnnLocal => MethodOutput {
            estimate: Estimate::Local(map.expect("map").upsample(img.width(), img.height())?),
            decision: None,
            detection: None,
        },
        Method::Pipeline(mode) => {
            let c = PipelineConfig { mode, ..cfg.clone() };
            let (decision, detection, estimate) = decide(img, map.expect("map"), truth, models.expect("checked above"), &c)?;
            MethodOutput {
                estimate,
                decision: Some(decision),
                detection,
            }
        }
    })
}

pub const PER_IMAGE_CSV: &str = "per_image.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const HISTOGRAM_CSV: &str = "histogram.csv";

/// Writes `per_image.csv`, `summary.json` and `histogram.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |path: &Path, e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        format: "CSV",
        reason: e.to_string(),
    };

    let path = dir.join(PER_IMAGE_CSV);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "method", "error_deg", "decision"]).map_err(|e| csv_err(&path, e))?;
    for r in &report.images {
        let decision = match r.decision {
            Some(Decision::Single) => "single",
            Some(Decision::Multiple) => "multiple",
            None => "",
        };
        w.write_record([r.image.as_str(), &r.method, &r.error_deg.to_string(), decision])
            .map_err(|e| csv_err(&path, e))?;
    }
    write_bytes(&path, &w.into_inner().expect("in-memory writer"))?;

    let path = dir.join(HISTOGRAM_CSV);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "lo_deg", "hi_deg", "count"]).map_err(|e| csv_err(&path, e))?;
    for m in &report.methods {
        for b in &m.histogram {
            w.write_record([m.method.as_str(), &b.lo.to_string(), &b.hi.to_string(), &b.count.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    write_bytes(&path, &w.into_inner().expect("in-memory writer"))?;

    write_json(&dir.join(SUMMARY_JSON), &report.methods)
}

/// Loads entries as CNN training data.
pub fn training_images(index: &DatasetIndex, ids: &[usize]) -> Result<Vec<TrainingImage<f32>>> {
    ids.par_iter()
        .map(|&i| {
            let (image, truth) = load_entry(index, i)?;
            Ok(TrainingImage { image, truth })
        })
        .collect()
}

/// Pooled features of each entry's patch map, labeled with the entry's
/// global ground truth.
pub fn labeled_features(
    cnn: &CnnModel<f32>,
    index: &DatasetIndex,
    ids: &[usize],
    pooling: &PoolingConfig,
) -> Result<Vec<LabeledFeatures>> {
    ids.par_iter()
        .map(|&i| {
            let (img, truth) = load_entry::<f32>(index, i)?;
            let map = estimate_map(cnn, &img)?;
            let features = pool_features(&map, pooling)?.to_f64();
            Ok((features, truth.global()?.rgb().map(f64::from)))
        })
        .collect()
}
