//! Whole-slide-image melanoma detection and localization.
//!
//! The crate covers the full path from a slide pyramid to a verdict:
//! [`slide_io`] reads pyramids and annotations, [`tiling`] segments tissue
//! and plans and extracts patches, [`classifier`] turns patches into class
//! probabilities, [`decision`] assembles localization maps and slide
//! verdicts, [`evaluation`] scores predictions, [`synthgen`] builds synthetic
//! test slides and [`pipeline`] chains the stages through files on disk.

pub mod classifier;
pub mod decision;
pub mod error;
pub mod evaluation;
pub mod label;
pub mod pipeline;
pub mod slide_io;
pub mod synthgen;
pub mod tiling;

pub use classifier::{load_backend, predict, Arity, Backend, BackendDescriptor, BackendKind, ProbabilityVector};
pub use decision::{
    assign_class, build_map, malignancy_ratio, LocalizationMap, PatchClass, SlideVerdict, Thresholds, Verdict,
};
pub use error::{Error, Result};
pub use evaluation::{confusion, metrics, ConfusionMatrix, MetricsReport};
pub use label::TissueLabel;
pub use pipeline::PipelineConfig;
pub use slide_io::{open_slide, read_region, AnnotationSet, RgbTile, SlideHandle};
pub use tiling::{BinaryMask, LabelMask, NormalizationStats, PatchRecord, TensorPatch};
