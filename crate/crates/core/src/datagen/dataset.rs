use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{RngStream, Tensor};

use super::image::Image;

/// Images with global integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    /// `N×C×H×W`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl LabeledSet {
    pub fn new(images: Tensor<f32>, labels: Vec<u32>) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(shape_err(
                "labeled_set",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of each sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Image {
        let [c, h, w] = self.sample_shape();
        let n = c * h * w;
        Image::new(c, h, w, self.images.data()[i * n..(i + 1) * n].to_vec()).expect("consistent shape")
    }

    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A labeled image dataset with a fixed train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub n_classes: u32,
}

impl Dataset {
    pub fn new(train: LabeledSet, test: LabeledSet) -> Result<Self> {
        if !train.is_empty() && !test.is_empty() && train.sample_shape() != test.sample_shape() {
            return Err(shape_err(
                "dataset",
                format!("train {:?} vs test {:?}", train.sample_shape(), test.sample_shape()),
            ));
        }
        let n_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1);
        Ok(Self {
            train,
            test,
            n_classes,
        })
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.train.sample_shape()
    }
}

/// One task of a class-incremental stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub task_id: u32,
    /// Global labels; position in this list is the head's output index.
    pub classes: Vec<u32>,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl Experience {
    /// Maps global labels to head indices, rejecting labels outside the task.
    pub fn local_labels(&self, labels: &[u32]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.classes.iter().position(|c| c == l).ok_or_else(|| Error::LabelOutsideTask {
                    label: *l,
                    classes: self.classes.clone(),
                })
            })
            .collect()
    }
}

/// Splits a dataset into `n_tasks` experiences of `classes_per_task`
/// disjoint classes, assigned by a seeded permutation.
pub fn make_split_stream(dataset: &Dataset, n_tasks: usize, classes_per_task: usize, seed: u64) -> Result<Vec<Experience>> {
    let needed = n_tasks * classes_per_task;
    if n_tasks == 0 || classes_per_task == 0 {
        return Err(Error::InvalidArgument("stream needs at least one task and one class per task".into()));
    }
    if needed > dataset.n_classes as usize {
        return Err(Error::InvalidArgument(format!(
            "{n_tasks} tasks × {classes_per_task} classes needs {needed} classes, dataset has {}",
            dataset.n_classes
        )));
    }
    let mut order: Vec<u32> = (0..dataset.n_classes).collect();
    RngStream::new(seed, "class-order").shuffle(&mut order);
    let pick = |set: &LabeledSet, classes: &[u32]| {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| classes.contains(&set.labels[i])).collect();
        set.select(&idx)
    };
    Ok(order[..needed]
        .chunks(classes_per_task)
        .enumerate()
        .map(|(t, classes)| Experience {
            task_id: t as u32 + 1,
            classes: classes.to_vec(),
            train: pick(&dataset.train, classes),
            test: pick(&dataset.test, classes),
        })
        .collect())
}

/// Where a stream's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Shapes {
        #[serde(default = "default_shape_classes")]
        n_classes: u32,
        #[serde(default = "default_per_class")]
        samples_per_class: usize,
        #[serde(default = "default_image_size")]
        image_size: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: std::path::PathBuf,
        train_labels: std::path::PathBuf,
        test_images: std::path::PathBuf,
        test_labels: std::path::PathBuf,
    },
}

fn default_shape_classes() -> u32 {
    20
}
fn default_per_class() -> usize {
    150
}
fn default_image_size() -> usize {
    16
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Shapes {
            n_classes: default_shape_classes(),
            samples_per_class: default_per_class(),
            image_size: default_image_size(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Shapes {
                n_classes,
                samples_per_class,
                image_size,
                seed,
            } => super::shapes::shapes_dataset(*seed, *n_classes, *samples_per_class, *image_size),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Dataset::new(
                super::idx::load_idx(train_images, train_labels)?,
                super::idx::load_idx(test_images, test_labels)?,
            ),
        }
    }
}
