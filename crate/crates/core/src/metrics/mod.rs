//! Normalized Disentanglability: image distances and estimators.

mod distance;
mod fbpd;
mod histogram;
mod hog;
mod nd;
mod procedural;

pub use distance::{
    image_fingerprint, normalized_euclidean, read_features, write_features, ColorHist, Distance,
    EmbeddingDistance, Fbpd, Hog, Region, StructureDistance,
};
pub use fbpd::{fbpd_distance, foreground_mask, gray_u8, mask_disagreement, BACKGROUND_MIN};
pub use histogram::{
    bin_index, color_distance, hsv_histogram, HIST_LEN, HUE_BINS, SAT_BINS, VAL_BINS,
};
pub use hog::{hog_distance, hog_features, BINS as HOG_BINS, BLOCK as HOG_BLOCK, CELL as HOG_CELL};
pub use nd::{
    data_baseline, data_baseline_exhaustive, estimate_nd, grid_nd, DataBaseline, Estimate,
    FnGenerator, LatentGenerator, NdReport,
};
pub use procedural::{toy_grid, Diversity, ProceduralGenerator, Tie};
