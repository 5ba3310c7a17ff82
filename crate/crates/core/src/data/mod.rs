//! Synthetic target/auxiliary domains and image folder ingestion.

mod dataset;
mod image;
mod ingest;
mod shapes;

pub use dataset::{
    build_dataset, image_name, load_domains, load_image_dir, read_manifest, sample_seed, Dataset,
    ManifestRecord, AUXILIARY_DIR, MANIFEST_FILE, TARGET_DIR,
};
pub use image::{batch_tensor, tensor_images, to_grayscale, Image};
pub use ingest::{ingest_folder, IngestReport};
pub use shapes::{
    make_target_sample, render, RenderSpec, ShapeKind, ShapeSpec, TwoTone, MARGIN_PX, SCALE_RANGE,
};
