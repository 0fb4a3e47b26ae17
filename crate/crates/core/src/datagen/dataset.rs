//! On-disk datasets: images with ground-truth sidecars, listed in an
//! `index.json` that assigns each image to one of three folds.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::relight::relight_with;
use super::{illuminant_pool, render_scene_with, sample_illuminant, seeded, RelightConfig, SyntheticSceneConfig};
use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::io::{load_image_auto, read_illum_sidecar, write_ground_truth, write_json, write_pfm, GroundTruth};
use crate::scalar::Real;

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";
const FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Relative to the dataset root.
    pub image: PathBuf,
    pub illum: PathBuf,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].image)
    }

    pub fn illum_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].illum)
    }

    pub fn write(&self) -> Result<()> {
        write_json(&self.root.join(INDEX_FILE), self)
    }
}

/// Reads `index.json` from a dataset directory (or the given file) and
/// checks that every listed file exists.
pub fn load_index(path: &Path) -> Result<DatasetIndex> {
    let file = if path.is_dir() { path.join(INDEX_FILE) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Error::MissingFile(file));
    }
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut index: DatasetIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: file.clone(),
        source,
    })?;
    index.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    for i in 0..index.len() {
        for p in [index.image_path(i), index.illum_path(i)] {
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
        }
    }
    Ok(index)
}

pub fn load_entry<T: Real>(index: &DatasetIndex, i: usize) -> Result<(LinearImage<T>, GroundTruth<T>)> {
    let img = load_image_auto(&index.image_path(i))?;
    let gt = read_illum_sidecar(&index.illum_path(i))?;
    if let GroundTruth::PerPixel(f) = &gt {
        if f.dims() != img.dims() {
            return Err(Error::DimensionMismatch {
                expected: img.dims(),
                found: f.dims(),
            });
        }
    }
    Ok((img, gt))
}

/// Entry indices of one cross-validation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub run: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Three rotations: run `r` tests on fold `r`, validates on fold `r + 1`
/// and trains on fold `r + 2` (mod 3).
pub fn three_folds(index: &DatasetIndex) -> Result<[FoldSplit; 3]> {
    let mut folds: [Vec<usize>; FOLDS] = Default::default();
    for (i, e) in index.entries.iter().enumerate() {
        folds
            .get_mut(e.fold)
            .ok_or_else(|| Error::InvalidData(format!("{}: fold {} is not 0, 1 or 2", e.image.display(), e.fold)))?
            .push(i);
    }
    if let Some(f) = folds.iter().position(Vec::is_empty) {
        return Err(Error::InvalidData(format!("fold {f} has no images")));
    }
    Ok(std::array::from_fn(|r| FoldSplit {
        run: r,
        test: folds[r].clone(),
        validation: folds[(r + 1) % FOLDS].clone(),
        train: folds[(r + 2) % FOLDS].clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: PathBuf,
    pub illuminants: Vec<[f64; 3]>,
    /// Light centers for relit images.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centers: Vec<[f64; 2]>,
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSetConfig {
    pub count: usize,
    pub scene: SyntheticSceneConfig,
    pub seed: u64,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        Self {
            count: 300,
            scene: SyntheticSceneConfig::default(),
            seed: 0,
        }
    }
}

fn write_entry<T: Real>(out: &Path, name: &str, img: &LinearImage<T>, gt: &GroundTruth<T>, fold: usize) -> Result<IndexEntry> {
    let image = out.join(format!("{name}.pfm"));
    write_pfm(&image, img)?;
    let illum = write_ground_truth(&image, gt)?;
    let rel = |p: &Path| PathBuf::from(p.file_name().expect("file name"));
    Ok(IndexEntry {
        image: rel(&image),
        illum: rel(&illum),
        fold,
    })
}

fn finish(out: &Path, entries: Vec<IndexEntry>, manifest: &Manifest) -> Result<DatasetIndex> {
    let index = DatasetIndex {
        root: out.to_path_buf(),
        entries,
    };
    index.write()?;
    write_json(&out.join(MANIFEST_FILE), manifest)?;
    Ok(index)
}

fn to_json<S: Serialize>(v: &S) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

/// Renders `count` scenes, each under its own random light, into `out`.
/// Image `i` goes to fold `i % 3`. Output depends only on the config.
pub fn generate_scenes(out: &Path, cfg: &SceneSetConfig) -> Result<DatasetIndex> {
    cfg.scene.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<(IndexEntry, ImageRecord)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(cfg.seed, i as u64);
            let illum = sample_illuminant::<f32, _>(&mut rng);
            let (img, gt) = render_scene_with(&cfg.scene, &illum, &mut rng)?;
            let entry = write_entry(out, &format!("scene_{i:04}"), &img, &gt, i % FOLDS)?;
            let record = ImageRecord {
                image: entry.image.clone(),
                illuminants: vec![illum.rgb().map(f64::from)],
                centers: Vec::new(),
            };
            Ok((entry, record))
        })
        .collect::<Result<_>>()?;
    let (entries, images) = results.into_iter().unzip();
    let manifest = Manifest {
        kind: "scenes".into(),
        seed: cfg.seed,
        config: to_json(cfg),
        images,
    };
    finish(out, entries, &manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelightSetConfig {
    pub pool_size: usize,
    pub pool_min_angle_deg: f64,
    pub relight: RelightConfig,
    /// Share of images relit with a single light from the pool instead.
    pub single_fraction: f64,
    pub seed: u64,
}

impl Default for RelightSetConfig {
    fn default() -> Self {
        Self {
            pool_size: 3,
            pool_min_angle_deg: 10.0,
            relight: RelightConfig::default(),
            single_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Relights every image of `source` into `out`, keeping fold assignments.
pub fn relight_dataset(source: &DatasetIndex, out: &Path, cfg: &RelightSetConfig) -> Result<DatasetIndex> {
    if !(0.0..=1.0).contains(&cfg.single_fraction) {
        return Err(Error::InvalidParameter("single fraction must lie in [0, 1]".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = illuminant_pool::<f32, _>(&mut seeded(cfg.seed, u64::MAX), cfg.pool_size, cfg.pool_min_angle_deg)?;
    let n = source.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(cfg.seed, u64::MAX - 1));
    let mut single = vec![false; n];
    for &i in &order[..(cfg.single_fraction * n as f64).round() as usize] {
        single[i] = true;
    }

    let results: Vec<(IndexEntry, ImageRecord)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (img, gt) = load_entry::<f32>(source, i)?;
            let rc = RelightConfig {
                num_illuminants: if single[i] { 1 } else { cfg.relight.num_illuminants },
                ..cfg.relight.clone()
            };
            let r = relight_with(&img, &gt, &pool, &rc, &mut seeded(cfg.seed, i as u64))?;
            let truth = if single[i] { GroundTruth::Global(r.illuminants[0]) } else { r.ground_truth() };
            let entry = write_entry(out, &format!("relit_{i:04}"), &r.image, &truth, source.entries[i].fold)?;
            let record = ImageRecord {
                image: entry.image.clone(),
                illuminants: r.illuminants.iter().map(|l| l.rgb().map(f64::from)).collect(),
                centers: if single[i] { Vec::new() } else { r.centers },
            };
            Ok((entry, record))
        })
        .collect::<Result<_>>()?;
    let (entries, images) = results.into_iter().unzip();
    let manifest = Manifest {
        kind: "relit".into(),
        seed: cfg.seed,
        config: to_json(cfg),
        images,
    };
    finish(out, entries, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> SceneSetConfig {
        SceneSetConfig {
            count,
            scene: SyntheticSceneConfig {
                width: 40,
                height: 32,
                ..SyntheticSceneConfig::default()
            },
            seed: 7,
        }
    }

    fn index_with_folds(folds: &[usize]) -> DatasetIndex {
        DatasetIndex {
            root: PathBuf::new(),
            entries: folds
                .iter()
                .enumerate()
                .map(|(i, &fold)| IndexEntry {
                    image: format!("{i}.pfm").into(),
                    illum: format!("{i}.illum.json").into(),
                    fold,
                })
                .collect(),
        }
    }

    #[test]
    fn fold_rotation() {
        // Folds A = 0, B = 1, C = 2.
        let splits = three_folds(&index_with_folds(&[0, 1, 2, 0, 1, 2])).unwrap();
        assert_eq!(splits[0].test, vec![0, 3]);
        assert_eq!(splits[0].validation, vec![1, 4]);
        assert_eq!(splits[0].train, vec![2, 5]);
        assert_eq!(splits[1].test, vec![1, 4]);
        assert_eq!(splits[1].train, vec![0, 3]);
        assert_eq!(splits[2].validation, vec![0, 3]);
    }

    #[test]
    fn empty_or_unknown_folds_are_rejected() {
        assert!(three_folds(&index_with_folds(&[0, 0, 1])).is_err());
        assert!(three_folds(&index_with_folds(&[0, 1, 2, 3])).is_err());
    }

    #[test]
    fn generated_sets_are_reproducible_and_loadable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ia = generate_scenes(a.path(), &small(6)).unwrap();
        generate_scenes(b.path(), &small(6)).unwrap();
        for e in &ia.entries {
            for f in [&e.image, &e.illum] {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
        let loaded = load_index(a.path()).unwrap();
        assert_eq!(loaded.entries, ia.entries);
        let (img, gt) = load_entry::<f64>(&loaded, 2).unwrap();
        assert_eq!(img.dims(), (40, 32));
        assert!(matches!(gt, GroundTruth::Global(_)));
        assert_eq!(three_folds(&loaded).unwrap()[0].test, vec![0, 3]);
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        generate_scenes(dir.path(), &small(3)).unwrap();
        let victim = dir.path().join("scene_0001.illum.json");
        std::fs::remove_file(&victim).unwrap();
        match load_index(dir.path()) {
            Err(Error::MissingFile(p)) => assert_eq!(p, victim),
            other => panic!("expected a missing file error, got {other:?}"),
        }
    }

    #[test]
    fn relit_sets_mix_single_and_multi() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let index = generate_scenes(src.path(), &small(6)).unwrap();
        let cfg = RelightSetConfig {
            single_fraction: 0.5,
            ..RelightSetConfig::default()
        };
        let relit = relight_dataset(&index, out.path(), &cfg).unwrap();
        let mut singles = 0;
        for i in 0..relit.len() {
            let (img, gt) = load_entry::<f32>(&relit, i).unwrap();
            assert_eq!(img.dims(), (40, 32));
            if matches!(gt, GroundTruth::Global(_)) {
                singles += 1;
            }
        }
        assert_eq!(singles, 3);
        let folds: Vec<usize> = relit.entries.iter().map(|e| e.fold).collect();
        assert_eq!(folds, vec![0, 1, 2, 0, 1, 2]);
        assert!(out.path().join(MANIFEST_FILE).exists());
    }
}
