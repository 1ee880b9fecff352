use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::io::{decode_container, encode_container, Manifest, FORMAT_VERSION};
use crate::numerics::{DType, RngStream, Tensor};

use super::augment::{augment, cutmix, AugConfig};
use super::dataset::LabeledSet;
use super::image::{load_image, Image};

/// Unlabeled data used to consolidate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSource {
    SingleImage { path: PathBuf },
    ImageFolder { path: PathBuf },
    /// Independent uniform pixels for every sample.
    Noise,
    /// The training images of the task being consolidated.
    RealData,
    /// Patches precomputed by [`PatchCache::build`].
    PatchCache { path: PathBuf },
}

impl OodSource {
    pub fn name(&self) -> &'static str {
        match self {
            OodSource::SingleImage { .. } => "single_image",
            OodSource::ImageFolder { .. } => "image_folder",
            OodSource::Noise => "noise",
            OodSource::RealData => "real_data",
            OodSource::PatchCache { .. } => "patch_cache",
        }
    }

    /// Paths this source reads, for validation.
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            OodSource::SingleImage { path } | OodSource::ImageFolder { path } | OodSource::PatchCache { path } => {
                vec![path.as_path()]
            }
            _ => Vec::new(),
        }
    }
}

/// Decoded source material ready for sampling.
#[derive(Debug, Clone)]
pub enum OodPool {
    Images(Vec<Image>),
    Noise,
    /// Already augmented samples; drawn with replacement, no further transforms.
    Patches(Tensor<f32>),
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Image {
            path: dir.to_path_buf(),
            msg: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Image {
            path: dir.to_path_buf(),
            msg: "folder contains no .png or .ppm images".into(),
        });
    }
    Ok(files)
}

impl OodPool {
    /// Loads `source`; `real_data` draws from `current` (the task's train set).
    pub fn load(source: &OodSource, current: Option<&LabeledSet>) -> Result<Self> {
        Ok(match source {
            OodSource::SingleImage { path } => OodPool::Images(vec![load_image(path)?]),
            OodSource::ImageFolder { path } => {
                OodPool::Images(image_files(path)?.iter().map(|p| load_image(p)).collect::<Result<_>>()?)
            }
            OodSource::Noise => OodPool::Noise,
            OodSource::RealData => {
                let set = current
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::InvalidArgument("real_data source needs the current task's train set".into()))?;
                OodPool::Images((0..set.len()).map(|i| set.image(i)).collect())
            }
            OodSource::PatchCache { path } => OodPool::Patches(PatchCache::load(path)?.patches),
        })
    }

    /// One sample of shape `[C, H, W]`, fully determined by `item`.
    pub fn sample_item(&self, aug: &AugConfig, shape: [usize; 3], item: &RngStream) -> Result<Image> {
        let [c, h, w] = shape;
        let im = match self {
            OodPool::Noise => {
                let mut r = item.split("noise");
                Image::new(c, h, w, (0..c * h * w).map(|_| r.uniform() as f32).collect())?
            }
            OodPool::Patches(t) => {
                let n = t.shape()[0];
                let k = item.split("pick").below(n);
                let row = t.slice_rows(k, k + 1);
                let s = t.shape();
                let im = Image::new(s[1], s[2], s[3], row.into_data())?;
                if (im.height, im.width) != (h, w) {
                    return Err(Error::InvalidArgument(format!(
                        "patch cache holds {}×{} patches, model expects {h}×{w}",
                        im.height, im.width
                    )));
                }
                im
            }
            OodPool::Images(images) => {
                if images.is_empty() {
                    return Err(Error::InvalidArgument("empty image pool".into()));
                }
                let pick = |label: &str| &images[item.split(label).below(images.len())];
                let base = augment(pick("pick"), aug, h, w, &item.split("aug"));
                if aug.cutmix {
                    let partner = augment(pick("pick-partner"), aug, h, w, &item.split("aug-partner"));
                    cutmix(&base, &partner, &mut item.split("mix"), aug.cutmix_beta)?
                } else {
                    base
                }
            }
        };
        Ok(match (im.channels, c) {
            (a, b) if a == b => im,
            (3, 1) => Image::new(1, h, w, im.grayscale())?,
            (1, 3) => im.to_rgb(),
            (a, b) => {
                return Err(Error::InvalidArgument(format!("cannot convert {a}-channel source to {b} channels")))
            }
        })
    }

    /// `batch` samples; item `i` uses `rng.split_index("item", i)`, so a
    /// sample never depends on the batch size or on `workers`.
    pub fn sample_batch(
        &self,
        aug: &AugConfig,
        shape: [usize; 3],
        batch: usize,
        rng: &RngStream,
        workers: usize,
    ) -> Result<Tensor<f32>> {
        let item = |i: usize| self.sample_item(aug, shape, &rng.split_index("item", i as u64));
        let images: Vec<Image> = if workers <= 1 || batch < 2 {
            (0..batch).map(item).collect::<Result<_>>()?
        } else {
            let chunk = batch.div_ceil(workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..batch)
                    .step_by(chunk)
                    .map(|start| {
                        let item = &item;
                        scope.spawn(move || (start..(start + chunk).min(batch)).map(item).collect::<Result<Vec<_>>>())
                    })
                    .collect();
                let mut all = Vec::with_capacity(batch);
                for h in handles {
                    all.extend(h.join().expect("sampling worker panicked")?);
                }
                Ok::<_, Error>(all)
            })?
        };
        Image::batch(&images)
    }
}

/// Loads `source` and draws one batch.
pub fn sample_ood_batch(
    source: &OodSource,
    aug: &AugConfig,
    shape: [usize; 3],
    batch: usize,
    rng: &RngStream,
) -> Result<Tensor<f32>> {
    OodPool::load(source, None)?.sample_batch(aug, shape, batch, rng, 1)
}

/// Precomputed augmented samples stored in the model container format.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCache {
    /// `N×C×H×W`.
    pub patches: Tensor<f32>,
}

impl PatchCache {
    pub fn build(pool: &OodPool, aug: &AugConfig, shape: [usize; 3], count: usize, rng: &RngStream) -> Result<Self> {
        Ok(Self {
            patches: pool.sample_batch(aug, shape, count, rng, 1)?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let manifest = Manifest {
            version: FORMAT_VERSION,
            kind: "patch_cache".into(),
            dtype: DType::F32,
            arch_hash: None,
            arch: None,
            heads: Vec::new(),
            taps: Vec::new(),
            tensors: Vec::new(),
        };
        encode_container(manifest, &[("patches".to_string(), &self.patches)])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (manifest, mut tensors) = decode_container::<f32>(bytes)?;
        if manifest.kind != "patch_cache" || tensors.len() != 1 || tensors[0].1.shape().len() != 4 {
            return Err(Error::Format(format!("not a patch cache (kind `{}`)", manifest.kind)));
        }
        Ok(Self {
            patches: tensors.remove(0).1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
