//! Synthetic forgery data: procedural base images, copy-move and splice pastes,
//! pseudo-pairs, robustness perturbations and on-disk datasets.

pub mod base;
pub mod dataset;
pub mod forge;
pub mod image;
pub mod perturb;

pub use base::{base_image, BaseKind};
pub use forge::*;
pub use image::{Image, Mask};
pub use perturb::{perturb, Perturbation};
pub use dataset::{build_dataset, dataset_hash, generate, generate_sample, load_dataset, SynthConfig, TaskMix};
