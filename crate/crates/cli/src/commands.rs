use std::path::{Path, PathBuf};

use illum_core::aggregate::{fit_aggregator, save_aggregator, AggregatorMetadata};
use illum_core::classic::{estimate_eq4, Eq4Config};
use illum_core::cnn::{
    activation_map, save_model, top_activating_patches, train_with_progress, PatchSampler, TrainingMetadata,
};
use illum_core::datagen::{generate_scenes, load_index, relight_dataset, three_folds, DatasetIndex, FoldSplit};
use illum_core::detect::detect_multiple;
use illum_core::image::{extract_patches, LinearImage};
use illum_core::io::{load_image_auto, read_illum_sidecar, sidecar_path, write_json, write_pfm, write_preview_png, ILLUM_SUFFIX};
use illum_core::pipeline::{
    apply_correction, evaluate, labeled_features, run_method, training_images, write_report, Estimate, Method, MethodOutput,
    Mode, Models, PipelineConfig,
};
use illum_core::{Error, Image, Truth};
use serde::Serialize;

use crate::config::FileConfig;
use crate::{Cli, Command, ModelArgs, Result};

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    }
    .with_seed(cli.seed);
    let out = cli.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::InvalidParameter(format!("{}: {e}", out.display())))?;
    match cli.command {
        Command::Estimate {
            image,
            models,
            method,
            custom,
        } => estimate(&file, out, &image, &models, choice(method, custom)),
        Command::Correct {
            image,
            models,
            method,
            custom,
            green_preserving,
            preview,
        } => correct(&file, out, &image, &models, choice(method, custom), green_preserving, preview),
        Command::Detect { image, cnn, density } => detect(&file, out, &image, cnn, density),
        Command::TrainCnn { data, run } => train_cnn(&file, out, &data, run),
        Command::TrainAggregator { data, cnn, run } => train_aggregator(&file, out, &data, &cnn, run),
        Command::GenScenes { count } => {
            let mut cfg = file.scenes.clone();
            if let Some(n) = count {
                cfg.count = n;
            }
            let index = generate_scenes(out, &cfg)?;
            println!("wrote {} scenes to {}", index.len(), out.display());
            Ok(())
        }
        Command::Relight {
            data,
            illuminants,
            single_fraction,
        } => {
            let mut cfg = file.relight.clone();
            if let Some(k) = illuminants {
                cfg.relight.num_illuminants = k;
            }
            if let Some(f) = single_fraction {
                cfg.single_fraction = f;
            }
            let index = relight_dataset(&load_index(&data)?, out, &cfg)?;
            println!("wrote {} relit images to {}", index.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            data,
            models,
            methods,
            run,
        } => evaluate_cmd(&file, out, &data, &models, methods, run),
        Command::InspectActivations { cnn, unit, top, images } => inspect(out, &cnn, unit, top, &images),
    }
}

fn pipeline_config(file: &FileConfig, args: &ModelArgs) -> PipelineConfig {
    let mut cfg = file.pipeline.clone();
    if let Some(p) = &args.cnn {
        cfg.cnn = p.clone();
    }
    if args.aggregator.is_some() {
        cfg.aggregator = args.aggregator.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    cfg
}

/// Models for `method`; classical methods need none.
fn models_for(method: Method, cfg: &PipelineConfig) -> Result<Option<Models>> {
    if method.needs_cnn() {
        Models::load(cfg).map(Some)
    } else {
        Ok(None)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Ground truth next to the image, if any.
fn sidecar_truth(image: &Path) -> Result<Option<Truth>> {
    let path = sidecar_path(image, ILLUM_SUFFIX);
    if path.exists() {
        read_illum_sidecar(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// What to run on a single image: a named method or a custom estimator.
#[derive(Debug, Clone, Copy)]
enum Choice {
    Method(Option<Method>),
    Custom(Eq4Config),
}

fn choice(method: Option<Method>, custom: Option<Eq4Config>) -> Choice {
    match custom {
        Some(c) => Choice::Custom(c),
        None => Choice::Method(method),
    }
}

impl Choice {
    fn name(&self, cfg: &PipelineConfig) -> String {
        match self {
            Choice::Method(m) => m.unwrap_or(Method::Pipeline(cfg.mode)).name().to_string(),
            Choice::Custom(c) => format!("custom({},{},{})", c.order, c.p, c.sigma),
        }
    }
}

fn run_on_image(file: &FileConfig, image: &Path, args: &ModelArgs, choice: Choice) -> Result<(Image, MethodOutput, PipelineConfig)> {
    let cfg = pipeline_config(file, args);
    let img: Image = load_image_auto(image)?;
    let method = match choice {
        Choice::Method(m) => m.unwrap_or(Method::Pipeline(cfg.mode)),
        Choice::Custom(c) => {
            let out = MethodOutput {
                estimate: Estimate::Global(estimate_eq4(&img, &c)?),
                decision: None,
                detection: None,
            };
            return Ok((img, out, cfg));
        }
    };
    let truth = if method == Method::Pipeline(Mode::Oracle) {
        Some(sidecar_truth(image)?.ok_or_else(|| Error::MissingGroundTruth(sidecar_path(image, ILLUM_SUFFIX).display().to_string()))?)
    } else {
        None
    };
    let models = models_for(method, &cfg)?;
    let out = run_method(method, &img, truth.as_ref(), models.as_ref(), &cfg, None)?;
    Ok((img, out, cfg))
}

#[derive(Serialize)]
struct EstimateReport {
    image: PathBuf,
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    decision: Option<illum_core::detect::Decision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    illuminant: Option<[f64; 3]>,
    /// Per-pixel estimate file for local estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<PathBuf>,
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidData(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn estimate(file: &FileConfig, out: &Path, image: &Path, args: &ModelArgs, choice: Choice) -> Result<()> {
    let (_, o, cfg) = run_on_image(file, image, args, choice)?;
    let name = stem(image);
    let (illuminant, map) = match &o.estimate {
        Estimate::Global(e) => (Some(e.rgb().map(f64::from)), None),
        Estimate::Local(f) => {
            let p = out.join(format!("{name}.estimate.pfm"));
            write_pfm(&p, f)?;
            (None, Some(p))
        }
    };
    let report = EstimateReport {
        image: image.to_path_buf(),
        method: choice.name(&cfg),
        decision: o.decision,
        illuminant,
        map,
    };
    write_json(&out.join(format!("{name}.estimate.json")), &report)?;
    print_json(&report)
}

fn correct(
    file: &FileConfig,
    out: &Path,
    image: &Path,
    args: &ModelArgs,
    choice: Choice,
    green_preserving: bool,
    preview: bool,
) -> Result<()> {
    let (img, o, cfg) = run_on_image(file, image, args, choice)?;
    let corrected = apply_correction(&img, &o.estimate, green_preserving || cfg.green_preserving)?;
    let name = stem(image);
    let path = out.join(format!("{name}.corrected.pfm"));
    write_pfm(&path, &corrected)?;
    if preview {
        write_preview_png(&out.join(format!("{name}.corrected.png")), &corrected, 1.0)?;
    }
    println!("{}", path.display());
    Ok(())
}

fn detect(file: &FileConfig, out: &Path, image: &Path, cnn: Option<PathBuf>, density: bool) -> Result<()> {
    let args = ModelArgs {
        cnn,
        aggregator: None,
        mode: None,
    };
    let cfg = pipeline_config(file, &args);
    let models = Models::load(&PipelineConfig { aggregator: None, ..cfg.clone() })?;
    let img: Image = load_image_auto(image)?;
    let map = illum_core::cnn::estimate_map(&models.cnn, &img)?;
    let d = detect_multiple(&map, &cfg.detector)?;
    let name = stem(image);
    if density {
        if let Some(g) = &d.grid {
            g.write_pfm(&out.join(format!("{name}.density.pfm")))?;
        }
    }
    write_json(&out.join(format!("{name}.detection.json")), &d)?;
    print_json(&d)
}

fn split_for(index: &DatasetIndex, run: usize) -> Result<FoldSplit> {
    if run > 2 {
        return Err(Error::InvalidParameter(format!("run must be 0, 1 or 2, got {run}")));
    }
    Ok(three_folds(index)?[run].clone())
}

fn train_cnn(file: &FileConfig, out: &Path, data: &Path, run: usize) -> Result<()> {
    let index = load_index(data)?;
    let split = split_for(&index, run)?;
    let train = training_images(&index, &split.train)?;
    let val = training_images(&index, &split.validation)?;
    let ps = file.network.patch_size;
    let (train_s, val_s) = (PatchSampler::new(&train, ps)?, PatchSampler::new(&val, ps)?);
    let outcome = train_with_progress(file.network, &train_s, Some(&val_s), &file.training, |r| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train {:.6}  val {:.6}  median {:.3} deg",
            r.epoch,
            r.learning_rate,
            r.train_loss,
            r.val_loss.unwrap_or(f64::NAN),
            r.val_median_angle.unwrap_or(f64::NAN)
        );
    })?;
    let path = out.join("cnn.bin");
    save_model(&path, &outcome.model)?;
    let last = outcome.history.last();
    let meta = TrainingMetadata {
        seed: file.training.seed,
        epochs: file.training.epochs,
        best_epoch: outcome.best_epoch,
        final_train_loss: last.map(|r| r.train_loss),
        final_val_loss: last.and_then(|r| r.val_loss),
        network: file.network,
        training: file.training.clone(),
        history: outcome.history,
    };
    write_json(&out.join("cnn.json"), &meta)?;
    println!("{}", path.display());
    Ok(())
}

fn train_aggregator(file: &FileConfig, out: &Path, data: &Path, cnn: &Path, run: usize) -> Result<()> {
    let index = load_index(data)?;
    let split = split_for(&index, run)?;
    let model = illum_core::cnn::load_model(cnn)?;
    let train = labeled_features(&model, &index, &split.train, &file.pooling)?;
    let val = labeled_features(&model, &index, &split.validation, &file.pooling)?;
    let fit = fit_aggregator(&train, &val, &file.grid, file.pooling)?;
    let path = out.join("aggregator.bin");
    save_aggregator(&path, &fit.model)?;
    let meta = AggregatorMetadata {
        c: fit.model.c,
        gamma: fit.model.gamma,
        epsilon: fit.model.epsilon,
        validation_median: fit.validation_median,
        distinct_training: fit.distinct_training,
        support_vectors: fit.model.support_vector_counts(),
        pooling: fit.model.pooling,
        scores: fit.scores,
    };
    write_json(&out.join("aggregator.json"), &meta)?;
    eprintln!(
        "selected C {} gamma {} epsilon {} (validation median {:.3} deg)",
        meta.c, meta.gamma, meta.epsilon, meta.validation_median
    );
    println!("{}", path.display());
    Ok(())
}

fn evaluate_cmd(
    file: &FileConfig,
    out: &Path,
    data: &Path,
    args: &ModelArgs,
    methods: Vec<Method>,
    run: Option<usize>,
) -> Result<()> {
    let index = load_index(data)?;
    let cfg = pipeline_config(file, args);
    let has_cnn = args.cnn.is_some() || file.pipeline.cnn.exists();
    let methods = if methods.is_empty() {
        Method::all()
            .into_iter()
            .filter(|m| has_cnn || !m.needs_cnn())
            .filter(|m| *m != Method::CnnRegressor || cfg.aggregator.is_some())
            .collect()
    } else {
        methods
    };
    let models = if methods.iter().any(Method::needs_cnn) { Some(Models::load(&cfg)?) } else { None };
    let subset = run.map(|r| split_for(&index, r)).transpose()?.map(|s| s.test);
    let report = evaluate(&index, subset.as_deref(), models.as_ref(), &cfg, &methods, &file.histogram)?;
    write_report(out, &report)?;
    for m in &report.methods {
        println!(
            "{:<14} median {:>7.3}  mean {:>7.3}  p90 {:>7.3}  max {:>7.3}  n {}",
            m.method, m.stats.median, m.stats.mean, m.stats.pct90, m.stats.max, m.stats.count
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TopPatch {
    rank: usize,
    image: PathBuf,
    x: usize,
    y: usize,
    activation: f32,
    preview: PathBuf,
}

fn inspect(out: &Path, cnn: &Path, unit: usize, top: usize, images: &[PathBuf]) -> Result<()> {
    let model = illum_core::cnn::load_model(cnn)?;
    let ps = model.config.patch_size;
    let mut patches = Vec::new();
    let mut source = Vec::new();
    for path in images {
        let img: Image = load_image_auto(path)?;
        let grid = activation_map(&model, &img, unit)?;
        let plane: Vec<f32> = grid.values.iter().flat_map(|v| [v.unwrap_or(0.0); 3]).collect();
        write_pfm(
            &out.join(format!("{}.unit{unit}.pfm", stem(path))),
            &LinearImage::new(grid.grid_width, grid.grid_height, plane)?,
        )?;
        for p in extract_patches(&img, ps, ps)? {
            source.push(path.clone());
            patches.push(p);
        }
    }
    let ranked = top_activating_patches(&model, &patches, unit, top)?;
    let mut report = Vec::with_capacity(ranked.len());
    for (rank, a) in ranked.iter().enumerate() {
        let p = &patches[a.index];
        let preview = out.join(format!("unit{unit}_top{rank}.png"));
        write_preview_png(&preview, &LinearImage::new(ps, ps, p.pixels.clone())?, 1.0)?;
        report.push(TopPatch {
            rank,
            image: source[a.index].clone(),
            x: p.x,
            y: p.y,
            activation: a.value,
            preview,
        });
    }
    write_json(&out.join(format!("unit{unit}_top.json")), &report)?;
    print_json(&report)
}
