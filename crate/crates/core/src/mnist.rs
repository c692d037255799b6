//! Handwritten-digit comparison: kNN on raw pixels against kNN on the
//! integrated-kernel embedding of augmented digits (and optionally a trained
//! encoder), for each augmentation pipeline.
//!
//! The unlabeled embedding (and encoder) is fit once per augmentation; each
//! repeat then draws fresh labeled training images and test images and maps
//! the unaugmented digits through Nystrom extension.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::experiment::{mean_and_stderr, ResultRow, ResultTable};
use crate::image::{flatten_normalize, read_idx_file, Augmentation, GrayImage, SIDE};
use crate::kernel::{bandwidth_heuristic, integrated_weights, BandwidthRule};
use crate::knn::{error_rate_multiclass, KRule, RepresentationMap, SpectralContext};
use crate::manifold::MultiViewDataset;
use crate::objective::{train, LossConfig};
use crate::rng::{self, Domain};
use crate::spectral::laplacian_eigenmaps;

/// Locations of the four IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Finds the files under their usual names (`train-images-idx3-ubyte`
    /// and friends, with `.` or `-` before `idx`, optionally gzipped).
    pub fn in_dir(dir: &Path) -> Result<Self> {
        let find = |stem: &str, kind: &str| -> Result<PathBuf> {
            for sep in ["-", "."] {
                for ext in ["", ".gz"] {
                    let p = dir.join(format!("{stem}{sep}{kind}-ubyte{ext}"));
                    if p.is_file() {
                        return Ok(p);
                    }
                }
            }
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no {stem} {kind} file in {}", dir.display()),
            )))
        };
        Ok(MnistPaths {
            train_images: find("train-images", "idx3")?,
            train_labels: find("train-labels", "idx1")?,
            test_images: find("t10k-images", "idx3")?,
            test_labels: find("t10k-labels", "idx1")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MnistData {
    pub train_images: Vec<GrayImage>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<GrayImage>,
    pub test_labels: Vec<u8>,
}

fn load_split(images: &Path, labels: &Path) -> Result<(Vec<GrayImage>, Vec<u8>)> {
    let imgs = read_idx_file(images)?.into_images()?;
    let labs = read_idx_file(labels)?.into_labels()?;
    if imgs.len() != labs.len() {
        return Err(Error::Data(format!(
            "{} has {} images but {} has {} labels",
            images.display(),
            imgs.len(),
            labels.display(),
            labs.len()
        )));
    }
    if let Some(img) = imgs.iter().find(|i| i.width() != SIDE || i.height() != SIDE) {
        return Err(Error::Data(format!(
            "expected {SIDE}x{SIDE} digits, found {}x{}",
            img.width(),
            img.height()
        )));
    }
    if let Some(&l) = labs.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("digit label {l} out of range")));
    }
    Ok((imgs, labs))
}

pub fn load_mnist(paths: &MnistPaths) -> Result<MnistData> {
    let (train_images, train_labels) = load_split(&paths.train_images, &paths.train_labels)?;
    let (test_images, test_labels) = load_split(&paths.test_images, &paths.test_labels)?;
    Ok(MnistData {
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

/// Settings for the optional encoder row.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistEncoderConfig {
    /// Number of training images the encoder sees.
    pub corpus: usize,
    pub views: usize,
    pub hidden: Vec<usize>,
    pub loss: LossConfig,
}

impl Default for MnistEncoderConfig {
    fn default() -> Self {
        MnistEncoderConfig {
            corpus: 10_000,
            views: 2,
            hidden: vec![256, 64],
            // 784-dim inputs and m/B ~ 250 need a far smaller step than the
            // simulated manifolds; 1e-7 already diverges.
            loss: LossConfig {
                epochs: 30,
                learning_rate: 1e-8,
                ..LossConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistConfig {
    /// Unlabeled training images used for the spectral embedding.
    pub unlabeled: usize,
    pub views: usize,
    pub augmentations: Vec<Augmentation>,
    pub n_components: usize,
    pub bandwidth: BandwidthRule,
    pub k: KRule,
    pub sizes: Vec<usize>,
    pub test_size: usize,
    pub repeats: usize,
    pub seed: u64,
    pub encoder: Option<MnistEncoderConfig>,
}

impl Default for MnistConfig {
    fn default() -> Self {
        MnistConfig {
            unlabeled: 1000,
            views: 7,
            augmentations: vec![Augmentation::ResizeCrop, Augmentation::RotateResizeCrop],
            n_components: 20,
            bandwidth: BandwidthRule::MedianHeuristic,
            k: KRule::Fixed(5),
            sizes: vec![50, 100, 200, 400],
            test_size: 100,
            repeats: 100,
            seed: 0,
            encoder: None,
        }
    }
}

impl MnistConfig {
    pub fn validate(&self, data: &MnistData) -> Result<()> {
        if self.repeats == 0 || self.sizes.is_empty() || self.test_size == 0 || self.views == 0 {
            return Err(Error::config("repeats, sizes, test_size and views must be positive"));
        }
        let max_s = *self.sizes.iter().max().unwrap();
        if self.sizes.contains(&0) || max_s > data.train_images.len() {
            return Err(Error::config(format!(
                "training sizes must lie in 1..={}",
                data.train_images.len()
            )));
        }
        if self.test_size > data.test_images.len() || self.unlabeled > data.train_images.len() {
            return Err(Error::config("test_size or unlabeled exceeds the available images"));
        }
        if self.n_components + 1 >= self.unlabeled {
            return Err(Error::config("n_components must be below unlabeled - 1"));
        }
        if let Some(enc) = &self.encoder {
            if enc.corpus > data.train_images.len() || enc.corpus < 2 || enc.views < 2 {
                return Err(Error::config("encoder corpus must fit the training set and use >= 2 views"));
            }
        }
        Ok(())
    }
}

/// `views` augmented copies of each selected image, as normalized pixels.
/// View `j` of the `p`-th selected image uses seed
/// `derive_seed(seed, Augment, p * views + j)`.
pub fn augmented_dataset(
    images: &[GrayImage],
    indices: &[usize],
    views: usize,
    augmentation: Augmentation,
    seed: u64,
) -> Result<MultiViewDataset> {
    let dim = SIDE * SIDE;
    let per_image: Vec<Vec<f64>> = indices
        .par_iter()
        .enumerate()
        .map(|(p, &idx)| {
            let mut flat = Vec::with_capacity(views * dim);
            for j in 0..views {
                let s = rng::derive_seed(seed, Domain::Augment, (p * views + j) as u64);
                flat.extend(flatten_normalize(&augmentation.apply(&images[idx], s)?));
            }
            Ok(flat)
        })
        .collect::<Result<_>>()?;
    MultiViewDataset::from_points(indices.len(), views, dim, per_image.concat(), seed)
}

/// Integrated-kernel Laplacian eigenmaps of `unlabeled` augmented digits.
pub fn build_spectral(data: &MnistData, cfg: &MnistConfig, augmentation: Augmentation) -> Result<SpectralContext> {
    let seed = rng::derive_seed(cfg.seed, Domain::Heldout, augmentation as u64);
    let mut pick = rng::stream(seed, Domain::Subset, 0);
    let indices = sample(&mut pick, data.train_images.len(), cfg.unlabeled).into_vec();
    let train = augmented_dataset(&data.train_images, &indices, cfg.views, augmentation, seed)?;
    let t = bandwidth_heuristic(&train, cfg.bandwidth)?;
    let weights = integrated_weights(&train, t)?;
    let embedding = laplacian_eigenmaps(&weights, cfg.n_components)?;
    for w in &embedding.warnings {
        log::warn!("{}: {w}", augmentation.name());
    }
    Ok(SpectralContext {
        embedding,
        weights,
        train,
    })
}

/// Encoder trained on augmented views of a subset of the training digits.
pub fn build_encoder(
    data: &MnistData,
    cfg: &MnistConfig,
    enc: &MnistEncoderConfig,
    augmentation: Augmentation,
) -> Result<EncoderParams> {
    let seed = rng::derive_seed(cfg.seed, Domain::Init, augmentation as u64);
    let mut pick = rng::stream(seed, Domain::Subset, 0);
    let indices = sample(&mut pick, data.train_images.len(), enc.corpus).into_vec();
    let corpus = augmented_dataset(&data.train_images, &indices, enc.views, augmentation, seed)?;
    let t = bandwidth_heuristic(&corpus, cfg.bandwidth)?;
    let mut arch = vec![SIDE * SIDE];
    arch.extend_from_slice(&enc.hidden);
    arch.push(cfg.n_components);
    let loss = LossConfig {
        bandwidth_t: t,
        seed,
        ..enc.loss
    };
    Ok(train(&corpus, &arch, &loss)?.params)
}

struct Row {
    label: String,
    map: RepresentationMap,
}

/// Runs the comparison over all repeats and training sizes. Rows are `X`,
/// then `spectral/<augmentation>` and `encoder/<augmentation>` per pipeline.
pub fn run_mnist_experiment(data: &MnistData, cfg: &MnistConfig) -> Result<ResultTable> {
    cfg.validate(data)?;
    let mut rows = vec![Row {
        label: "X".into(),
        map: RepresentationMap::RawX { dim: SIDE * SIDE },
    }];
    for &aug in &cfg.augmentations {
        log::info!("building spectral embedding for {}", aug.name());
        rows.push(Row {
            label: format!("spectral/{}", aug.name()),
            map: RepresentationMap::Spectral(Box::new(build_spectral(data, cfg, aug)?)),
        });
        if let Some(enc) = &cfg.encoder {
            log::info!("training encoder for {}", aug.name());
            rows.push(Row {
                label: format!("encoder/{}", aug.name()),
                map: RepresentationMap::Encoder(build_encoder(data, cfg, enc, aug)?),
            });
        }
    }

    let max_s = *cfg.sizes.iter().max().unwrap();
    let per_repeat: Vec<Vec<Vec<f64>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = rng::derive_seed(cfg.seed, Domain::Repeat, r as u64);
            let train_ids =
                sample(&mut rng::stream(seed, Domain::Split, 0), data.train_images.len(), max_s).into_vec();
            let test_ids =
                sample(&mut rng::stream(seed, Domain::Split, 1), data.test_images.len(), cfg.test_size).into_vec();
            let train_x: Vec<Vec<f64>> = train_ids.iter().map(|&i| flatten_normalize(&data.train_images[i])).collect();
            let test_x: Vec<Vec<f64>> = test_ids.iter().map(|&i| flatten_normalize(&data.test_images[i])).collect();
            let train_y: Vec<u8> = train_ids.iter().map(|&i| data.train_labels[i]).collect();
            let test_y: Vec<u8> = test_ids.iter().map(|&i| data.test_labels[i]).collect();

            rows.iter()
                .map(|row| {
                    let tr = row.map.map_all(&train_x)?;
                    let te = row.map.map_all(&test_x)?;
                    cfg.sizes
                        .iter()
                        .map(|&s| error_rate_multiclass(&tr[..s], &train_y[..s], &te, &test_y, cfg.k.resolve(s)?))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (ri, row) in rows.iter().enumerate() {
        for (si, &s) in cfg.sizes.iter().enumerate() {
            let errors: Vec<f64> = per_repeat.iter().map(|r| r[ri][si]).collect();
            let (mean_error, stderr) = mean_and_stderr(&errors);
            out.push(ResultRow {
                representation: row.label.clone(),
                sweep_value: s,
                mean_error,
                stderr,
                errors,
            });
        }
    }
    Ok(ResultTable {
        manifold: "mnist".into(),
        axis: "s".into(),
        seed: cfg.seed,
        rows: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ten "digits": a bright square whose position encodes the label.
    fn synthetic(count: usize, seed: u64) -> (Vec<GrayImage>, Vec<u8>) {
        use rand::Rng;
        let mut rng = rng::stream(seed, Domain::Subset, 7);
        (0..count)
            .map(|i| {
                let label = (i % 10) as u8;
                let mut img = GrayImage::filled(SIDE, SIDE, 0);
                let (ox, oy) = (4 + 2 * label as usize, 6 + rng.gen_range(0..3));
                for y in oy..oy + 8 {
                    for x in ox..ox + 6 {
                        img.set(x, y, 230);
                    }
                }
                (img, label)
            })
            .unzip()
    }

    fn tiny_data() -> MnistData {
        let (train_images, train_labels) = synthetic(120, 1);
        let (test_images, test_labels) = synthetic(40, 2);
        MnistData {
            train_images,
            train_labels,
            test_images,
            test_labels,
        }
    }

    fn tiny_cfg() -> MnistConfig {
        MnistConfig {
            unlabeled: 60,
            views: 3,
            n_components: 6,
            sizes: vec![20, 40],
            test_size: 20,
            repeats: 2,
            ..MnistConfig::default()
        }
    }

    #[test]
    fn augmented_views_are_deterministic() {
        let data = tiny_data();
        let a = augmented_dataset(&data.train_images, &[3, 5], 4, Augmentation::RotateResizeCrop, 9).unwrap();
        let b = augmented_dataset(&data.train_images, &[3, 5], 4, Augmentation::RotateResizeCrop, 9).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!((a.m(), a.n(), a.dim()), (2, 4, 784));
        assert_ne!(a.view(0, 0), a.view(0, 1));
    }

    #[test]
    fn table_layout_and_determinism() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let table = run_mnist_experiment(&data, &cfg).unwrap();
        assert_eq!(table.rows.len(), 3 * 2);
        assert!(table.get("X", 20).is_some());
        assert!(table.get("spectral/rotate_resize_crop", 40).is_some());
        assert_eq!(table, run_mnist_experiment(&data, &cfg).unwrap());
        assert!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.mean_error)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = tiny_data();
        for cfg in [
            MnistConfig { repeats: 0, ..tiny_cfg() },
            MnistConfig { sizes: vec![500], ..tiny_cfg() },
            MnistConfig { n_components: 59, ..tiny_cfg() },
        ] {
            assert!(matches!(run_mnist_experiment(&data, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        assert!(matches!(MnistPaths::in_dir(Path::new("/nonexistent")), Err(Error::Io(_))));
    }
}
