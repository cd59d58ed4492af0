//! Tissue segmentation, annotation rasterization, patch planning, streaming
//! patch extraction and model-input preprocessing.

mod export;
mod extract;
mod hsv;
mod plan;
mod preprocess;
mod raster;

pub use export::{
    patch_file_name, AugmentedEntry, DatasetEntry, DatasetManifest, DatasetWriter, MANIFEST_FILE, UNLABELED_DIR,
};
pub use extract::{extract_patch, extract_patches, ExtractStats};
pub use hsv::{
    foreground_mask, hue8, pixel_hue8, rgb_to_hsv, segment_level, BinaryMask, ForegroundParams, Hsv, HueRange,
    DEFAULT_SAT_MIN,
};
pub use plan::{plan_patches, OverlapRule, PatchRecord, PlanMode, PlanParams, DEFAULT_OVERLAP_MIN, DEFAULT_PATCH_SIZE};
pub use preprocess::{
    augment_patch, compute_channel_stats, denormalize, normalize_patch, resize_to_input, NormalizationStats,
    StatsAccumulator, TensorPatch, Transform, INPUT_SIZE,
};
pub use raster::{rasterize_annotations, rasterize_polygons, LabelMask};
