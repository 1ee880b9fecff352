//! Task streams for self-centered training and the unlabeled, heavily
//! augmented data supply used for consolidation.

mod augment;
mod dataset;
mod idx;
mod image;
mod ood;
mod poster;
mod shapes;

pub use augment::{augment, cutmix, cutmix_box, cutmix_with, AugConfig, Jitter};
pub use dataset::{make_split_stream, Dataset, DatasetSpec, Experience, LabeledSet};
pub use idx::{encode_idx, load_idx, parse_idx_images, parse_idx_labels};
pub use image::{load_image, save_image, Image};
pub use ood::{sample_ood_batch, OodPool, OodSource, PatchCache};
pub use poster::poster_image;
pub use shapes::{class_gallery, class_recipe, render_shape, shapes_dataset, SHAPES};
