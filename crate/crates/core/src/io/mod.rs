//! File formats: PNG images, depth maps, dataset manifests and run configuration.

pub mod config;
pub mod dataset;
pub mod depth;
pub mod image;
pub mod manifest;

pub use self::config::RunConfig;
pub use self::dataset::{load_corpus, write_dataset, CorpusItem};
pub use self::depth::{load_depth, save_depth_pfm, save_depth_png16};
pub use self::image::{load_image, save_image};
pub use self::manifest::{Manifest, ManifestRecord};
