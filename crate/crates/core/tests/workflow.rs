use illum_core::aggregate::{fit_aggregator, HyperGrid, PoolingConfig};
use illum_core::cnn::{load_model, save_model, train, CnnConfig, PatchSampler, TrainConfig};
use illum_core::datagen::{
    generate_scenes, load_index, relight_dataset, three_folds, RelightSetConfig, SceneSetConfig, SyntheticSceneConfig,
};
use illum_core::pipeline::{
    evaluate, labeled_features, run_pipeline, training_images, write_report, HistogramConfig, Method, Mode, Models,
    PipelineConfig,
};
use illum_core::{datagen::load_entry, Cnn};

const NET: CnnConfig = CnnConfig {
    patch_size: 16,
    conv_filters: 8,
    pool_field: 4,
    hidden_units: 8,
};

#[test]
fn generate_train_relight_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = SceneSetConfig {
        count: 33,
        scene: SyntheticSceneConfig {
            width: 64,
            height: 48,
            num_surfaces: 40,
            seed: 0,
            ..Default::default()
        },
        seed: 7,
    };
    let index = generate_scenes(&dir.path().join("scenes"), &scenes).unwrap();
    assert_eq!(load_index(&dir.path().join("scenes")).unwrap().len(), 33);

    let split = three_folds(&index).unwrap()[0].clone();
    let tr = training_images(&index, &split.train).unwrap();
    let va = training_images(&index, &split.validation).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        patches_per_image: 8,
        validation_patches_per_image: 4,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let out = train(NET, &PatchSampler::new(&tr, 16).unwrap(), Some(&PatchSampler::new(&va, 16).unwrap()), &cfg).unwrap();
    assert_eq!(out.history.len(), 3);
    assert!(out.model.is_finite());

    let path = dir.path().join("cnn.bin");
    save_model(&path, &out.model).unwrap();
    let cnn: Cnn = load_model(&path).unwrap();
    assert_eq!(cnn, out.model);

    let pooling = PoolingConfig::default();
    let grid = HyperGrid {
        c: vec![1.0],
        gamma: vec![0.1],
        epsilon: vec![0.01],
    };
    let fit = fit_aggregator(
        &labeled_features(&cnn, &index, &split.train, &pooling).unwrap(),
        &labeled_features(&cnn, &index, &split.validation, &pooling).unwrap(),
        &grid,
        pooling,
    )
    .unwrap();
    let models = Models {
        cnn,
        aggregator: Some(fit.model),
    };

    let relit = relight_dataset(
        &index,
        &dir.path().join("relit"),
        &RelightSetConfig {
            single_fraction: 0.5,
            ..Default::default()
        },
    )
    .unwrap();
    let methods = Method::all();
    let report = evaluate(&relit, None, Some(&models), &PipelineConfig::default(), &methods, &HistogramConfig::default()).unwrap();
    assert_eq!(report.images.len(), methods.len() * relit.len());
    for m in &methods {
        let s = report.summary(m.name()).unwrap();
        assert_eq!(s.stats.count, relit.len());
        assert!(s.stats.median <= s.stats.pct90 && s.stats.pct90 <= s.stats.max);
    }
    // With exact decisions the oracle never does worse than the branch it picks.
    let oracle = report.errors("oracle");
    let single = report.errors("force-single");
    let multi = report.errors("force-multi");
    for ((o, s), m) in oracle.iter().zip(&single).zip(&multi) {
        assert!(o == s || o == m);
    }

    let out_dir = dir.path().join("report");
    write_report(&out_dir, &report).unwrap();
    for f in ["per_image.csv", "histogram.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let (img, truth) = load_entry::<f32>(&relit, 0).unwrap();
    let cfg = PipelineConfig {
        mode: Mode::Oracle,
        ..Default::default()
    };
    let o = run_pipeline(&img, Some(&truth), &models, &cfg).unwrap();
    assert_eq!(o.corrected.dims(), img.dims());
}
